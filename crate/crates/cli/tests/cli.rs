use std::path::PathBuf;
use std::process::{Command, Output};

fn problem(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../problems").join(name)
}

fn run(args: &[&str], out: &std::path::Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stackelberg"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn read(dir: &std::path::Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn missing_file_exits_with_input_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["equilibrium", "no/such/file.prob"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot read"));
}

#[test]
fn malformed_file_and_bad_flags_exit_with_input_code() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.prob");
    std::fs::write(&bad, "[meta]\nT = 1\nn = x\n").unwrap();
    assert_eq!(run(&["solve-leader", bad.to_str().unwrap()], dir.path()).status.code(), Some(2));
    let p1 = problem("example1.prob");
    let p1 = p1.to_str().unwrap();
    assert_eq!(run(&["equilibrium", p1, "--steps", "5"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["verify", p1, "--paths", "99"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["verify", p1, "--mc-steps", "7"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["lambda-study", p1, "--lambdas", "100,10"], dir.path()).status.code(), Some(2));
}

#[test]
fn blow_up_exits_with_solver_code() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("blow.prob");
    std::fs::write(
        &file,
        "[meta]\nT = 1\nn = 1\nm1 = 1\nm2 = 1\nD = 1\n[generator]\n0\n[regime 1]\nB1 = 1\nR1 = 1\nR2 = -1\nM = -10\nQ = 50\n[initial]\nx = 1\ni = 1\n",
    )
    .unwrap();
    let out = run(&["solve-follower", file.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn equilibrium_outputs_are_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let p1 = problem("example1.prob");
    let args = ["equilibrium", p1.to_str().unwrap(), "--steps", "1000", "--seed", "7", "--paths", "2000"];
    assert!(run(&args, a.path()).status.success());
    assert!(run(&[&args[..], &["--workers", "2"]].concat(), b.path()).status.success());
    for name in ["riccati_P.csv", "riccati_Sigma.csv", "phi_table.csv", "values.csv"] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name}");
    }
    let sigma = read(a.path(), "riccati_Sigma.csv");
    let mut rows = 0;
    for line in sigma.lines().skip(2) {
        let f: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert!((f[4] - (f[0] - 1.0) / (f[0] - 2.0)).abs() <= 1e-6);
        rows += 1;
    }
    assert_eq!(rows, 2 * 1001);
    assert_eq!(read(a.path(), "values.csv").lines().count(), 2 + 2);
}

#[test]
fn certify_passes_on_example2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["certify", problem("example2.prob").to_str().unwrap()], dir.path());
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.matches("PASS").count(), 2);
}

#[test]
fn verify_reports_the_supported_value() {
    let dir = tempfile::tempdir().unwrap();
    let p1 = problem("example1.prob");
    let out = run(
        &["verify", p1.to_str().unwrap(), "--paths", "2000", "--points=-1,1,2", "--alt-value", "0,0.5,-1", "--directions", "3"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let report = read(dir.path(), "verify_report.txt");
    assert!(report.contains("simulation supports: formula value"));
    assert!(report.ends_with("0 failed check(s)\n"));
}

#[test]
fn lambda_study_writes_a_row_per_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["lambda-study", problem("example2.prob").to_str().unwrap(), "--lambdas", "10,100"], dir.path());
    assert!(out.status.success());
    assert_eq!(read(dir.path(), "lambda_study.csv").lines().count(), 2 + 2);
}

#[test]
fn output_directory_defaults_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_stackelberg"))
        .args(["solve-leader", problem("example2.prob").to_str().unwrap()])
        .env("STACKELBERG_OUT_DIR", dir.path())
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    assert!(dir.path().join("riccati_Sigma.csv").exists());
}
