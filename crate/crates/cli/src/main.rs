//! `stackelberg`: solve, verify and study regime-switching LQ Stackelberg
//! problems from a problem file.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use regime_stackelberg::model::parse_lambda_list;
use regime_stackelberg::montecarlo::{
    saddle_probe, simulate_closed_loop, stationarity_residual, value_check, McConfig, ValueRow, SE_MULTIPLIER,
};
use regime_stackelberg::report::{backward_csv, float, lambda_study_csv, riccati_csv, values_csv, ValueSummary};
use regime_stackelberg::riccati::{
    certify_problem, lambda_limit_study, solve_follower_cdre, solve_leader_cdre, SolveOptions,
};
use regime_stackelberg::{load_problem, Equilibrium, Error, ProblemData, Regime};

const RESIDUAL_LIMIT: f64 = 1e-6;
const STATIONARITY_LIMIT: f64 = 1e-9;
const STATIONARITY_PATHS: usize = 1000;

#[derive(Parser)]
#[command(name = "stackelberg", version, about = "Regime-switching LQ Stackelberg solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Follower Riccati equation only (writes riccati_P.csv).
    SolveFollower(Common),
    /// Leader Riccati equation (writes riccati_Sigma.csv, plus riccati_P.csv for games).
    SolveLeader(Common),
    /// Full equilibrium: Riccati tables, phi table and values.csv.
    Equilibrium(Common),
    /// Equilibrium plus Monte Carlo checks (writes verify_report.txt).
    Verify(VerifyArgs),
    /// Compares the inverse of the lambda family with the leader solution.
    LambdaStudy(LambdaArgs),
    /// Positivity certificate for scalar-state problems.
    Certify(Common),
}

#[derive(Args)]
struct Common {
    /// Problem file.
    problem: PathBuf,
    /// Grid steps for the backward solvers (default: the file's grid_steps).
    #[arg(long)]
    steps: Option<usize>,
    /// Output directory.
    #[arg(long, env = "STACKELBERG_OUT_DIR", default_value = ".")]
    out: PathBuf,
    /// Condition-number ceiling for guarded inverses.
    #[arg(long)]
    cond_ceiling: Option<f64>,
    #[command(flatten)]
    mc: McArgs,
}

#[derive(Args)]
struct McArgs {
    /// Monte Carlo paths.
    #[arg(long, default_value_t = 10_000)]
    paths: usize,
    /// Monte Carlo steps; must divide the solver steps (default: 100 when it does).
    #[arg(long)]
    mc_steps: Option<usize>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    /// Initial states to check, comma separated (scalar-state problems only).
    #[arg(long, allow_hyphen_values = true)]
    points: Option<String>,
    /// Alternative value c0,c1,c2 = c0 + c1 x + c2 x^2 to test against the simulation.
    #[arg(long, allow_hyphen_values = true)]
    alt_value: Option<String>,
    /// Probe directions per player for the saddle check (0 disables it).
    #[arg(long, default_value_t = 20)]
    directions: usize,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
}

#[derive(Args)]
struct LambdaArgs {
    #[command(flatten)]
    common: Common,
    /// Ascending list of positive terminal weights.
    #[arg(long, default_value = "10,100,1000,10000")]
    lambdas: String,
}

enum Failure {
    Input(String),
    Solver(String),
    Verification(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Solver(_) => 3,
            Failure::Verification(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Solver(m) | Failure::Verification(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Solver(e.to_string())
        }
    }
}

type Outcome<T = ()> = Result<T, Failure>;

struct Context {
    problem: ProblemData,
    steps: usize,
    options: SolveOptions,
    out: PathBuf,
}

impl Common {
    fn context(&self) -> Outcome<Context> {
        let text = std::fs::read_to_string(&self.problem)
            .map_err(|e| Failure::Input(format!("cannot read {}: {e}", self.problem.display())))?;
        let problem = load_problem(&text).map_err(|e| Failure::Input(format!("{}: {e}", self.problem.display())))?;
        let steps = self.steps.unwrap_or(problem.grid_steps);
        if steps < 10 {
            return Err(Failure::Input(format!("--steps must be at least 10, got {steps}")));
        }
        let mut options = SolveOptions::default();
        if let Some(c) = self.cond_ceiling {
            if !(c > 1.0 && c.is_finite()) {
                return Err(Failure::Input(format!("--cond-ceiling must exceed 1, got {c}")));
            }
            options.condition_ceiling = c;
        }
        std::fs::create_dir_all(&self.out)
            .map_err(|e| Failure::Input(format!("cannot create {}: {e}", self.out.display())))?;
        Ok(Context { problem, steps, options, out: self.out.clone() })
    }

    fn mc_config(&self, steps: usize) -> Outcome<McConfig> {
        let mc_steps = self.mc.mc_steps.unwrap_or(if steps % 100 == 0 { 100 } else { steps });
        if mc_steps == 0 || steps % mc_steps != 0 {
            return Err(Failure::Input(format!("--mc-steps {mc_steps} must divide --steps {steps}")));
        }
        let mut config = McConfig::new(self.mc.paths, mc_steps, self.mc.seed);
        if let Some(w) = self.mc.workers {
            if w == 0 {
                return Err(Failure::Input("--workers must be positive".into()));
            }
            config = config.with_workers(w);
        }
        Ok(config)
    }
}

fn write(ctx: &Context, name: &str, contents: &str) -> Outcome {
    let path = ctx.out.join(name);
    std::fs::write(&path, contents).map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn solve_follower(args: &Common) -> Outcome {
    let ctx = args.context()?;
    if !ctx.problem.is_game() {
        return Err(Failure::Input("solve-follower needs a full game, not a reduced leader problem".into()));
    }
    let p = solve_follower_cdre(&ctx.problem, ctx.steps, ctx.options)?;
    write(&ctx, "riccati_P.csv", &riccati_csv(&p))
}

fn solve_leader(args: &Common) -> Outcome {
    let ctx = args.context()?;
    let sol = solve_leader_cdre(&ctx.problem, ctx.steps, ctx.options)?;
    if let Some(p) = &sol.follower {
        write(&ctx, "riccati_P.csv", &riccati_csv(p))?;
    }
    write(&ctx, "riccati_Sigma.csv", &riccati_csv(&sol.sigma))
}

fn write_equilibrium(ctx: &Context, eq: &Equilibrium) -> Outcome {
    if let Some(p) = &eq.follower {
        write(ctx, "riccati_P.csv", &riccati_csv(p))?;
    }
    write(ctx, "riccati_Sigma.csv", &riccati_csv(&eq.sigma))?;
    write(ctx, "phi_table.csv", &backward_csv("phi", &eq.phi))
}

fn summaries(rows: &[ValueRow]) -> Vec<ValueSummary> {
    rows.iter()
        .map(|r| ValueSummary {
            regime: r.regime,
            x: r.x.clone(),
            leader_value: r.analytic.leader,
            equilibrium_value: r.analytic.equilibrium,
            monte_carlo: Some((r.estimate.mean, r.estimate.std_error)),
        })
        .collect()
}

fn regimes(problem: &ProblemData) -> impl Iterator<Item = Regime> {
    (0..problem.num_regimes()).map(Regime::from_index)
}

fn equilibrium(args: &Common) -> Outcome {
    let ctx = args.context()?;
    let config = args.mc_config(ctx.steps)?;
    let eq = Equilibrium::solve(&ctx.problem, ctx.steps, ctx.options)?;
    write_equilibrium(&ctx, &eq)?;
    let mut rows = Vec::new();
    for regime in regimes(&ctx.problem) {
        rows.extend(value_check(&eq, std::slice::from_ref(&ctx.problem.initial_state), regime, &config)?);
    }
    write(&ctx, "values.csv", &values_csv(&summaries(&rows)))
}

fn parse_list(flag: &str, text: &str) -> Outcome<Vec<f64>> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| match t.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(Failure::Input(format!("--{flag}: `{t}` is not a finite number"))),
        })
        .collect()
}

struct Report {
    text: String,
    failures: usize,
}

impl Report {
    fn check(&mut self, pass: bool, name: &str, detail: impl AsRef<str>) {
        self.failures += usize::from(!pass);
        let _ = writeln!(self.text, "{} {name}: {}", if pass { "PASS" } else { "FAIL" }, detail.as_ref());
    }

    fn note(&mut self, line: impl AsRef<str>) {
        let _ = writeln!(self.text, "{}", line.as_ref());
    }
}

fn polynomial(coefficients: &[f64], x: f64) -> f64 {
    coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

fn verify(args: &VerifyArgs) -> Outcome {
    let common = &args.common;
    let ctx = common.context()?;
    if common.mc.paths < 100 {
        return Err(Failure::Input(format!("--paths must be at least 100 for verify, got {}", common.mc.paths)));
    }
    if !(args.epsilon > 0.0 && args.epsilon.is_finite()) {
        return Err(Failure::Input(format!("--epsilon must be positive, got {}", args.epsilon)));
    }
    let config = common.mc_config(ctx.steps)?;
    let scalar = ctx.problem.state_dim == 1;
    let points = match &args.points {
        Some(text) if scalar => parse_list("points", text)?.into_iter().map(|x| DVector::from_element(1, x)).collect(),
        Some(_) => return Err(Failure::Input("--points needs a scalar state".into())),
        None => vec![ctx.problem.initial_state.clone()],
    };
    let alternative = match &args.alt_value {
        Some(text) if scalar => Some(parse_list("alt-value", text)?),
        Some(_) => return Err(Failure::Input("--alt-value needs a scalar state".into())),
        None => None,
    };
    if points.is_empty() {
        return Err(Failure::Input("--points is empty".into()));
    }

    let eq = Equilibrium::solve(&ctx.problem, ctx.steps, ctx.options)?;
    write_equilibrium(&ctx, &eq)?;
    let mut report = Report { text: String::new(), failures: 0 };
    report.note(format!(
        "# steps={} mc_steps={} paths={} seed={}",
        ctx.steps, config.steps, config.paths, config.seed
    ));

    let residual = eq.sigma.meta().max_residual.unwrap_or(0.0);
    report.check(residual < RESIDUAL_LIMIT, "leader Riccati residual", format!("{}", float(residual)));

    // Half the steps gives the discretization allowance.
    let coarse = (config.steps % 2 == 0 && config.steps >= 2).then(|| McConfig { steps: config.steps / 2, ..config.clone() });
    let mut rows = Vec::new();
    let mut allowances = Vec::new();
    for regime in regimes(&ctx.problem) {
        let fine = value_check(&eq, &points, regime, &config)?;
        let bias: Vec<f64> = match &coarse {
            Some(c) => value_check(&eq, &points, regime, c)?
                .iter()
                .zip(&fine)
                .map(|(c, f)| (c.estimate.mean - f.estimate.mean).abs())
                .collect(),
            None => vec![0.0; fine.len()],
        };
        rows.extend(fine);
        allowances.extend(bias);
    }
    write(&ctx, "values.csv", &values_csv(&summaries(&rows)))?;

    let mut consistent = [true, true];
    for (row, bias) in rows.iter().zip(&allowances) {
        let est = &row.estimate;
        let target = row.analytic.equilibrium.unwrap_or(row.analytic.leader);
        let tol = SE_MULTIPLIER * est.std_error + bias + 1e-12 * est.mean.abs().max(1.0);
        let agrees = (est.mean - target).abs() <= tol;
        consistent[0] &= agrees;
        let mut detail = format!(
            "regime {} x=[{}] estimate {} se {} value {} allowance {}",
            row.regime.number(),
            row.x.iter().map(|v| float(*v)).collect::<Vec<_>>().join(" "),
            float(est.mean),
            float(est.std_error),
            float(target),
            float(bias + 1e-12 * est.mean.abs().max(1.0)),
        );
        if let Some(c) = &alternative {
            let alt = polynomial(c, row.x[0]);
            let hit = (est.mean - alt).abs() <= tol;
            consistent[1] &= hit;
            let _ = write!(detail, " alternative {} ({})", float(alt), if hit { "consistent" } else { "rejected" });
        }
        report.check(agrees, "value function", detail);
    }
    if alternative.is_some() {
        let verdict = match consistent {
            [true, false] => Some("formula value"),
            [false, true] => Some("alternative value"),
            _ => None,
        };
        report.check(verdict.is_some(), "value resolution", format!("simulation supports: {}", verdict.unwrap_or("undecided")));
    }

    let stationarity_cfg = McConfig { paths: config.paths.min(STATIONARITY_PATHS), ..config.clone() };
    let closed = simulate_closed_loop(&eq, &stationarity_cfg)?;
    let res = stationarity_residual(&closed, &eq)?;
    report.check(
        res.max < STATIONARITY_LIMIT,
        "stationarity",
        format!("max {} over {} evaluations", float(res.max), res.evaluations),
    );

    if ctx.problem.is_game() && args.directions > 0 {
        let saddle = saddle_probe(&eq, args.epsilon, args.directions, &config)?;
        let (f, l) = (saddle.follower_pass_rate(), saddle.leader_pass_rate());
        report.check(f == 1.0, "follower inequalities", format!("{} of {} hold", (f * saddle.follower.len() as f64).round(), saddle.follower.len()));
        report.check(l >= 0.95, "leader inequalities", format!("{} of {} hold, {} skipped", (l * saddle.leader.len() as f64).round(), saddle.leader.len(), saddle.skipped.len()));
        report.check(
            (saddle.scaling_ratio - 4.0).abs() <= 1.0,
            "follower quadratic scaling",
            format!("ratio {}", float(saddle.scaling_ratio)),
        );
    }

    let summary = format!("{} failed check(s)", report.failures);
    report.note(&summary);
    write(&ctx, "verify_report.txt", &report.text)?;
    print!("{}", report.text);
    if report.failures > 0 {
        return Err(Failure::Verification(summary));
    }
    Ok(())
}

fn lambda_study(args: &LambdaArgs) -> Outcome {
    let ctx = args.common.context()?;
    let lambdas = parse_lambda_list(&args.lambdas).map_err(|e| Failure::Input(format!("--lambdas: {e}")))?;
    let rows = lambda_limit_study(&ctx.problem, &lambdas, ctx.steps, ctx.options)?;
    write(&ctx, "lambda_study.csv", &lambda_study_csv(&rows))?;
    let distances: Vec<f64> = rows.iter().map(|r| r.distance.unwrap_or(f64::NAN)).collect();
    let decreasing = distances.windows(2).all(|w| w[1] < w[0]) && distances.iter().all(|d| d.is_finite());
    let monotone = rows.iter().all(|r| r.monotone != Some(false));
    for r in &rows {
        match (&r.distance, &r.error) {
            (Some(d), _) => println!("lambda {}: distance {}", float(r.lambda), float(*d)),
            (None, Some(e)) => println!("lambda {}: failed ({e})", float(r.lambda)),
            _ => {}
        }
    }
    if decreasing && monotone {
        Ok(())
    } else {
        Err(Failure::Verification(format!(
            "distances strictly decreasing: {decreasing}, ordering holds: {monotone}"
        )))
    }
}

fn certify(args: &Common) -> Outcome {
    let ctx = args.context()?;
    let (_, cert) = certify_problem(&ctx.problem, ctx.steps, ctx.options)?;
    for r in &cert.regimes {
        println!(
            "regime {}: {} min eigenvalue {} at s = {}",
            r.regime,
            if r.pass { "PASS" } else { "FAIL" },
            float(r.min_eigenvalue),
            float(r.worst_time)
        );
    }
    if cert.pass() {
        Ok(())
    } else {
        Err(Failure::Verification("certificate failed".into()))
    }
}

fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::SolveFollower(a) => solve_follower(a),
        Command::SolveLeader(a) => solve_leader(a),
        Command::Equilibrium(a) => equilibrium(a),
        Command::Verify(a) => verify(a),
        Command::LambdaStudy(a) => lambda_study(a),
        Command::Certify(a) => certify(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
