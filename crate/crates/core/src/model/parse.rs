//! Text format for problem files.
//!
//! ```text
//! [meta]
//! kind = game          # or `leader` for a reduced backward problem
//! T = 1
//! n = 1
//! m1 = 1
//! m2 = 1
//! D = 2
//! grid_steps = 1000
//!
//! [generator]
//! -0.5 0.5
//! 0.7 -0.7
//!
//! [regime 1]
//! B2 = 1
//! R1@0:0.5 = 5
//! R1@0.5:1 = 4
//!
//! [initial]
//! x = 1
//! i = 1
//! ```
//!
//! Matrix literals are row-major: entries separated by whitespace or commas,
//! rows by `;`. Keys missing from a regime default to zero.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use super::{GameRegime, PiecewiseMatrix, ProblemData, ProblemKind, ReducedRegime, TimePiece};
use crate::error::{Error, Result};
use crate::linalg::{asymmetry, symmetrized};
use crate::regime::{Generator, GeneratorPiece, Regime};

pub const MAX_DIMENSION: usize = 64;
pub const MAX_GRID_STEPS: usize = 10_000_000;
const SYMMETRY_TOLERANCE: f64 = 1e-12;
const DEFAULT_GRID_STEPS: usize = 1000;

fn parse_number(token: &str) -> std::result::Result<f64, String> {
    let ok = !token.is_empty()
        && token
            .bytes()
            .all(|b| b.is_ascii_digit() || matches!(b, b'+' | b'-' | b'.' | b'e' | b'E'));
    match token.parse::<f64>() {
        Ok(v) if ok && v.is_finite() => Ok(v),
        _ => Err(format!("`{token}` is not a finite decimal number")),
    }
}

/// Parses `r11 r12; r21 r22`.
pub fn parse_matrix_literal(text: &str) -> std::result::Result<DMatrix<f64>, String> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, row) in text.split(';').enumerate() {
        let entries = row
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(parse_number)
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if entries.is_empty() {
            return Err(format!("row {} of the matrix literal is empty", idx + 1));
        }
        if let Some(first) = rows.first() {
            if first.len() != entries.len() {
                return Err(format!(
                    "ragged matrix literal: row 1 has {} entries, row {} has {}",
                    first.len(),
                    idx + 1,
                    entries.len()
                ));
            }
        }
        rows.push(entries);
    }
    let cols = rows[0].len();
    if rows.len() * cols > MAX_DIMENSION * MAX_DIMENSION {
        return Err("matrix literal too large".into());
    }
    let flat: Vec<f64> = rows.concat();
    Ok(DMatrix::from_row_slice(rows.len(), cols, &flat))
}

/// Parses a comma- or space-separated list of positive, strictly ascending
/// values, e.g. `10,100,1e3`.
pub fn parse_lambda_list(text: &str) -> std::result::Result<Vec<f64>, String> {
    let values = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(parse_number)
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err("the list is empty".into());
    }
    if let Some(v) = values.iter().find(|v| **v <= 0.0) {
        return Err(format!("{v} is not positive"));
    }
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err("values must be strictly ascending".into());
    }
    Ok(values)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Section {
    Meta,
    Generator,
    Regime(usize),
    Initial,
}

struct Entry {
    window: Option<(f64, f64)>,
    value: DMatrix<f64>,
    line: usize,
}

#[derive(Default)]
struct RawFile {
    meta: BTreeMap<String, (String, usize)>,
    generator_rows: Vec<(Vec<f64>, usize)>,
    generator_entries: Vec<Entry>,
    regimes: BTreeMap<usize, (usize, BTreeMap<String, Vec<Entry>>)>,
    initial: BTreeMap<String, (String, usize)>,
}

fn split_key(raw: &str, line: usize) -> Result<(String, Option<(f64, f64)>)> {
    let raw = raw.trim();
    let Some((key, window)) = raw.split_once('@') else {
        return Ok((raw.to_string(), None));
    };
    let (a, b) = window
        .split_once(':')
        .ok_or_else(|| Error::parse(line, format!("time window `@{window}` must look like `@t0:t1`")))?;
    let t0 = parse_number(a.trim()).map_err(|m| Error::parse(line, m))?;
    let t1 = parse_number(b.trim()).map_err(|m| Error::parse(line, m))?;
    if !(t0 < t1) {
        return Err(Error::parse(line, format!("empty time window [{t0}, {t1}]")));
    }
    Ok((key.trim().to_string(), Some((t0, t1))))
}

fn scan(source: &str) -> Result<RawFile> {
    let mut raw = RawFile::default();
    let mut section: Option<Section> = None;
    let mut seen_sections: Vec<Section> = Vec::new();
    for (idx, full) in source.lines().enumerate() {
        let line = idx + 1;
        let text = full.split('#').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        if let Some(rest) = text.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::parse(line, "unterminated section header"))?
                .trim();
            let next = match name {
                "meta" => Section::Meta,
                "generator" => Section::Generator,
                "initial" => Section::Initial,
                _ => {
                    let k = name
                        .strip_prefix("regime")
                        .map(str::trim)
                        .and_then(|k| k.parse::<usize>().ok())
                        .filter(|&k| k >= 1 && k <= MAX_DIMENSION)
                        .ok_or_else(|| Error::parse(line, format!("unknown section `[{name}]`")))?;
                    raw.regimes.insert(k, (line, BTreeMap::new()));
                    Section::Regime(k)
                }
            };
            if seen_sections.contains(&next) {
                return Err(Error::parse(line, format!("duplicate section `[{name}]`")));
            }
            seen_sections.push(next);
            section = Some(next);
            continue;
        }
        let section = section.ok_or_else(|| Error::parse(line, "content before the first section"))?;
        let kv = text.split_once('=');
        match (section, kv) {
            (Section::Generator, None) => {
                let row = text
                    .split(|c: char| c.is_whitespace() || c == ',' || c == ';')
                    .filter(|t| !t.is_empty())
                    .map(parse_number)
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|m| Error::parse(line, m))?;
                if raw.generator_rows.len() >= MAX_DIMENSION {
                    return Err(Error::parse(line, "too many generator rows"));
                }
                raw.generator_rows.push((row, line));
            }
            (_, None) => return Err(Error::parse(line, "expected `key = value`")),
            (Section::Meta | Section::Initial, Some((k, v))) => {
                let map = if section == Section::Meta {
                    &mut raw.meta
                } else {
                    &mut raw.initial
                };
                let k = k.trim().to_string();
                if map.insert(k.clone(), (v.trim().to_string(), line)).is_some() {
                    return Err(Error::parse(line, format!("duplicate key `{k}`")));
                }
            }
            (Section::Generator, Some((k, v))) => {
                let (key, window) = split_key(k, line)?;
                if key != "rates" {
                    return Err(Error::parse(line, format!("unknown generator key `{key}`")));
                }
                let value = parse_matrix_literal(v).map_err(|m| Error::parse(line, m))?;
                raw.generator_entries.push(Entry { window, value, line });
            }
            (Section::Regime(r), Some((k, v))) => {
                let (key, window) = split_key(k, line)?;
                let value = parse_matrix_literal(v).map_err(|m| Error::parse(line, m))?;
                let entries = raw.regimes.get_mut(&r).expect("section registered").1.entry(key).or_default();
                if entries.iter().any(|e| e.window.is_none()) || (window.is_none() && !entries.is_empty()) {
                    return Err(Error::parse(line, format!("duplicate key `{}`", k.trim())));
                }
                entries.push(Entry { window, value, line });
            }
        }
    }
    Ok(raw)
}

fn meta_value<'a>(raw: &'a RawFile, key: &str) -> Option<&'a (String, usize)> {
    raw.meta.get(key)
}

fn meta_usize(raw: &RawFile, key: &str, max: usize) -> Result<Option<usize>> {
    let Some((v, line)) = meta_value(raw, key) else {
        return Ok(None);
    };
    let n: usize = v
        .parse()
        .map_err(|_| Error::parse(*line, format!("`{key}` must be a non-negative integer, got `{v}`")))?;
    if n == 0 || n > max {
        return Err(Error::parse(*line, format!("`{key}` must lie in 1..={max}, got {n}")));
    }
    Ok(Some(n))
}

fn require<T>(value: Option<T>, key: &str) -> Result<T> {
    value.ok_or_else(|| Error::parse(0, format!("[meta] is missing `{key}`")))
}

struct Shapes {
    horizon: f64,
}

impl Shapes {
    fn check(&self, what: &str, line: usize, m: &DMatrix<f64>, rows: usize, cols: usize, vector: bool) -> Result<DMatrix<f64>> {
        if m.shape() == (rows, cols) {
            return Ok(m.clone());
        }
        if vector && cols == 1 && m.shape() == (1, rows) {
            return Ok(m.transpose());
        }
        Err(Error::Dimension {
            key: format!("{what} (line {line})"),
            expected: format!("{rows}x{cols}"),
            found: format!("{}x{}", m.nrows(), m.ncols()),
        })
    }

    fn piecewise(
        &self,
        label: &str,
        entries: Option<Vec<Entry>>,
        rows: usize,
        cols: usize,
        vector: bool,
        symmetric: bool,
    ) -> Result<PiecewiseMatrix> {
        let Some(entries) = entries else {
            return Ok(PiecewiseMatrix::zeros(rows, cols));
        };
        let mut pieces = Vec::with_capacity(entries.len());
        for e in &entries {
            let mut value = self.check(label, e.line, &e.value, rows, cols, vector)?;
            if symmetric {
                value = symmetrize_checked(label, e.line, &value)?;
            }
            match e.window {
                None => return Ok(PiecewiseMatrix::constant(value)),
                Some((t0, t1)) => {
                    if t0 < 0.0 || t1 > self.horizon {
                        return Err(Error::parse(
                            e.line,
                            format!("window [{t0}, {t1}] leaves [0, {}]", self.horizon),
                        ));
                    }
                    pieces.push(TimePiece {
                        start: t0,
                        end: t1,
                        value,
                    });
                }
            }
        }
        PiecewiseMatrix::from_pieces(pieces, self.horizon)
            .map_err(|err| Error::parse(entries[0].line, format!("`{label}`: {err}")))
    }

    fn terminal(&self, label: &str, entries: Option<Vec<Entry>>, rows: usize, cols: usize, vector: bool, symmetric: bool) -> Result<DMatrix<f64>> {
        let Some(entries) = entries else {
            return Ok(DMatrix::zeros(rows, cols));
        };
        let e = &entries[0];
        if e.window.is_some() {
            return Err(Error::parse(e.line, format!("`{label}` is terminal data and takes no time window")));
        }
        let value = self.check(label, e.line, &e.value, rows, cols, vector)?;
        if symmetric {
            symmetrize_checked(label, e.line, &value)
        } else {
            Ok(value)
        }
    }
}

fn symmetrize_checked(label: &str, _line: usize, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let scale = m.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    let asym = asymmetry(m);
    if asym > SYMMETRY_TOLERANCE * scale {
        return Err(Error::Asymmetric {
            key: label.to_string(),
            asymmetry: asym,
        });
    }
    if asym == 0.0 {
        Ok(m.clone())
    } else {
        Ok(symmetrized(m))
    }
}

type KeySpec = (&'static str, usize, usize, bool, bool);

fn take_keys(
    entries: &mut BTreeMap<String, Vec<Entry>>,
    allowed: &[&str],
    regime: usize,
) -> Result<()> {
    if let Some((key, list)) = entries.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
        return Err(Error::parse(
            list[0].line,
            format!("unknown key `{key}` in [regime {regime}]"),
        ));
    }
    Ok(())
}

fn build_generator(raw: &RawFile, d: usize, horizon: f64) -> Result<Generator> {
    if !raw.generator_rows.is_empty() && !raw.generator_entries.is_empty() {
        return Err(Error::parse(raw.generator_entries[0].line, "mix of bare rows and `rates =` entries"));
    }
    let as_generator_error = |line: usize, err: Error| match err {
        Error::Generator { .. } | Error::Parse { .. } => err,
        other => Error::parse(line, other.to_string()),
    };
    if !raw.generator_rows.is_empty() {
        if raw.generator_rows.len() != d {
            return Err(Error::Dimension {
                key: format!("[generator] (line {})", raw.generator_rows[0].1),
                expected: format!("{d} rows"),
                found: format!("{} rows", raw.generator_rows.len()),
            });
        }
        let mut m = DMatrix::zeros(d, d);
        for (i, (row, line)) in raw.generator_rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::Dimension {
                    key: format!("[generator] row {} (line {line})", i + 1),
                    expected: format!("{d} rates"),
                    found: format!("{} rates", row.len()),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        return Generator::constant(m).map_err(|e| as_generator_error(raw.generator_rows[0].1, e));
    }
    if raw.generator_entries.is_empty() {
        return Err(Error::parse(0, "missing [generator] rates"));
    }
    let shapes = Shapes { horizon };
    let mut pieces = Vec::new();
    for e in &raw.generator_entries {
        let value = shapes.check("generator", e.line, &e.value, d, d, false)?;
        match e.window {
            None if raw.generator_entries.len() == 1 => {
                return Generator::constant(value).map_err(|err| as_generator_error(e.line, err));
            }
            None => return Err(Error::parse(e.line, "duplicate key `rates`")),
            Some((t0, t1)) => pieces.push(GeneratorPiece {
                start: t0,
                end: t1,
                rates: value,
            }),
        }
    }
    pieces.sort_by(|a, b| a.start.total_cmp(&b.start));
    let first_line = raw.generator_entries[0].line;
    if pieces.last().map(|p| p.end) != Some(horizon) {
        return Err(Error::parse(first_line, format!("generator windows must end at T = {horizon}")));
    }
    Generator::piecewise(pieces).map_err(|e| as_generator_error(first_line, e))
}

/// Parses and validates a problem file.
pub fn load_problem(source: &str) -> Result<ProblemData> {
    let mut raw = scan(source)?;

    for (key, (_, line)) in &raw.meta {
        if !["T", "n", "m1", "m2", "D", "grid_steps", "kind"].contains(&key.as_str()) {
            return Err(Error::parse(*line, format!("unknown [meta] key `{key}`")));
        }
    }
    let (t_text, t_line) = meta_value(&raw, "T").ok_or_else(|| Error::parse(0, "[meta] is missing `T`"))?;
    let horizon = parse_number(t_text).map_err(|m| Error::parse(*t_line, m))?;
    if horizon <= 0.0 {
        return Err(Error::parse(*t_line, "`T` must be positive"));
    }
    let n = require(meta_usize(&raw, "n", MAX_DIMENSION)?, "n")?;
    let d = require(meta_usize(&raw, "D", MAX_DIMENSION)?, "D")?;
    let m2 = require(meta_usize(&raw, "m2", MAX_DIMENSION)?, "m2")?;
    let grid_steps = meta_usize(&raw, "grid_steps", MAX_GRID_STEPS)?.unwrap_or(DEFAULT_GRID_STEPS);
    let leader_kind = match meta_value(&raw, "kind") {
        None => false,
        Some((v, _)) if v == "game" => false,
        Some((v, _)) if v == "leader" => true,
        Some((v, line)) => return Err(Error::parse(*line, format!("unknown kind `{v}`"))),
    };
    let m1 = if leader_kind {
        if let Some((_, line)) = meta_value(&raw, "m1") {
            return Err(Error::parse(*line, "`m1` is meaningless for kind = leader"));
        }
        0
    } else {
        require(meta_usize(&raw, "m1", MAX_DIMENSION)?, "m1")?
    };

    let generator = build_generator(&raw, d, horizon)?;

    if let Some((&k, (line, _))) = raw.regimes.iter().find(|(&k, _)| k > d) {
        return Err(Error::parse(*line, format!("[regime {k}] exceeds D = {d}")));
    }
    if let Some(missing) = (1..=d).find(|k| !raw.regimes.contains_key(k)) {
        return Err(Error::parse(0, format!("missing section [regime {missing}]")));
    }

    let shapes = Shapes { horizon };
    let kind = if leader_kind {
        let keys: [KeySpec; 13] = [
            ("Ahat", n, n, false, false),
            ("Chat", n, n, false, false),
            ("Hhat", n, m2, false, false),
            ("fhat", n, 1, true, false),
            ("G", n, n, false, true),
            ("S1", n, n, false, false),
            ("S2", m2, n, false, false),
            ("T11", n, n, false, true),
            ("T12", n, m2, false, false),
            ("T22", m2, m2, false, true),
            ("q", n, 1, true, false),
            ("rho1", n, 1, true, false),
            ("rho2", m2, 1, true, false),
        ];
        let mut regimes = Vec::with_capacity(d);
        for k in 1..=d {
            let entries = &mut raw.regimes.get_mut(&k).expect("checked").1;
            let mut allowed: Vec<&str> = keys.iter().map(|s| s.0).collect();
            allowed.push("m");
            take_keys(entries, &allowed, k)?;
            let mut get = |spec: &KeySpec| {
                let label = format!("{} in [regime {k}]", spec.0);
                shapes.piecewise(&label, entries.remove(spec.0), spec.1, spec.2, spec.3, spec.4)
            };
            let mut tables = Vec::with_capacity(keys.len());
            for spec in &keys {
                tables.push(get(spec)?);
            }
            let terminal = shapes.terminal(&format!("m in [regime {k}]"), entries.remove("m"), n, 1, true, false)?;
            let mut it = tables.into_iter();
            let mut next = || it.next().expect("13 tables");
            regimes.push(ReducedRegime {
                a_hat: next(),
                c_hat: next(),
                h_hat: next(),
                f_hat: next(),
                g: next(),
                s1: next(),
                s2: next(),
                t11: next(),
                t12: next(),
                t22: next(),
                q: next(),
                rho1: next(),
                rho2: next(),
                terminal_linear: DVector::from_column_slice(terminal.as_slice()),
            });
        }
        ProblemKind::Leader {
            leader_dim: m2,
            regimes,
        }
    } else {
        let keys: [KeySpec; 11] = [
            ("A", n, n, false, false),
            ("B1", n, m1, false, false),
            ("B2", n, m2, false, false),
            ("C", n, n, false, false),
            ("D1", n, m1, false, false),
            ("D2", n, m2, false, false),
            ("Q", n, n, false, true),
            ("R1", m1, m1, false, true),
            ("R2", m2, m2, false, true),
            ("b", n, 1, true, false),
            ("sigma", n, 1, true, false),
        ];
        let mut regimes = Vec::with_capacity(d);
        for k in 1..=d {
            let entries = &mut raw.regimes.get_mut(&k).expect("checked").1;
            let mut allowed: Vec<&str> = keys.iter().map(|s| s.0).collect();
            allowed.extend(["M", "m"]);
            take_keys(entries, &allowed, k)?;
            let mut tables = Vec::with_capacity(keys.len());
            for spec in &keys {
                let label = format!("{} in [regime {k}]", spec.0);
                tables.push(shapes.piecewise(&label, entries.remove(spec.0), spec.1, spec.2, spec.3, spec.4)?);
            }
            let weight = shapes.terminal(&format!("M in [regime {k}]"), entries.remove("M"), n, n, false, true)?;
            let linear = shapes.terminal(&format!("m in [regime {k}]"), entries.remove("m"), n, 1, true, false)?;
            let mut it = tables.into_iter();
            let mut next = || it.next().expect("11 tables");
            regimes.push(GameRegime {
                a: next(),
                b1: next(),
                b2: next(),
                c: next(),
                d1: next(),
                d2: next(),
                q: next(),
                r1: next(),
                r2: next(),
                drift: next(),
                diffusion: next(),
                terminal_weight: weight,
                terminal_linear: DVector::from_column_slice(linear.as_slice()),
            });
        }
        ProblemKind::Game {
            follower_dim: m1,
            leader_dim: m2,
            regimes,
        }
    };

    for (key, (_, line)) in &raw.initial {
        if key != "x" && key != "i" {
            return Err(Error::parse(*line, format!("unknown [initial] key `{key}`")));
        }
    }
    let initial_state = match raw.initial.get("x") {
        None => DVector::zeros(n),
        Some((v, line)) => {
            let m = parse_matrix_literal(v).map_err(|e| Error::parse(*line, e))?;
            let m = shapes.check("x", *line, &m, n, 1, true)?;
            DVector::from_column_slice(m.as_slice())
        }
    };
    let initial_regime = match raw.initial.get("i") {
        None => Regime::from_index(0),
        Some((v, line)) => v
            .parse::<usize>()
            .ok()
            .filter(|&i| i <= d)
            .and_then(Regime::from_number)
            .ok_or_else(|| Error::parse(*line, format!("initial regime `{v}` outside 1..={d}")))?,
    };

    let problem = ProblemData {
        horizon,
        state_dim: n,
        grid_steps,
        generator,
        initial_state,
        initial_regime,
        kind,
    };
    problem.default_grid()?;
    Ok(problem)
}

fn literal(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for r in 0..m.nrows() {
        if r > 0 {
            out.push_str("; ");
        }
        for c in 0..m.ncols() {
            if c > 0 {
                out.push(' ');
            }
            // `Display` for f64 is the shortest string that parses back exactly.
            let _ = write!(out, "{}", m[(r, c)]);
        }
    }
    out
}

fn write_table(out: &mut String, key: &str, table: &PiecewiseMatrix) {
    if table.is_constant() {
        let _ = writeln!(out, "{key} = {}", literal(&table.pieces()[0].value));
    } else {
        for p in table.pieces() {
            let _ = writeln!(out, "{key}@{}:{} = {}", p.start, p.end, literal(&p.value));
        }
    }
}

/// Writes a problem back in the file format. Every number round-trips exactly.
pub fn to_problem_file(p: &ProblemData) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "[meta]");
    match &p.kind {
        ProblemKind::Game { follower_dim, leader_dim, .. } => {
            let _ = writeln!(out, "kind = game\nT = {}\nn = {}\nm1 = {follower_dim}\nm2 = {leader_dim}", p.horizon, p.state_dim);
        }
        ProblemKind::Leader { leader_dim, .. } => {
            let _ = writeln!(out, "kind = leader\nT = {}\nn = {}\nm2 = {leader_dim}", p.horizon, p.state_dim);
        }
    }
    let _ = writeln!(out, "D = {}\ngrid_steps = {}\n\n[generator]", p.num_regimes(), p.grid_steps);
    let pieces = p.generator.pieces();
    if pieces.len() == 1 {
        let _ = writeln!(out, "rates = {}", literal(&pieces[0].rates));
    } else {
        for (idx, piece) in pieces.iter().enumerate() {
            let end = if idx + 1 == pieces.len() { p.horizon } else { piece.end };
            let _ = writeln!(out, "rates@{}:{} = {}", piece.start, end, literal(&piece.rates));
        }
    }
    let column = |v: &DVector<f64>| literal(&DMatrix::from_column_slice(v.len(), 1, v.as_slice()));
    match &p.kind {
        ProblemKind::Game { regimes, .. } => {
            for (k, r) in regimes.iter().enumerate() {
                let _ = writeln!(out, "\n[regime {}]", k + 1);
                for (key, table) in [
                    ("A", &r.a),
                    ("B1", &r.b1),
                    ("B2", &r.b2),
                    ("C", &r.c),
                    ("D1", &r.d1),
                    ("D2", &r.d2),
                    ("Q", &r.q),
                    ("R1", &r.r1),
                    ("R2", &r.r2),
                    ("b", &r.drift),
                    ("sigma", &r.diffusion),
                ] {
                    write_table(&mut out, key, table);
                }
                let _ = writeln!(out, "M = {}", literal(&r.terminal_weight));
                let _ = writeln!(out, "m = {}", column(&r.terminal_linear));
            }
        }
        ProblemKind::Leader { regimes, .. } => {
            for (k, r) in regimes.iter().enumerate() {
                let _ = writeln!(out, "\n[regime {}]", k + 1);
                for (key, table) in [
                    ("Ahat", &r.a_hat),
                    ("Chat", &r.c_hat),
                    ("Hhat", &r.h_hat),
                    ("fhat", &r.f_hat),
                    ("G", &r.g),
                    ("S1", &r.s1),
                    ("S2", &r.s2),
                    ("T11", &r.t11),
                    ("T12", &r.t12),
                    ("T22", &r.t22),
                    ("q", &r.q),
                    ("rho1", &r.rho1),
                    ("rho2", &r.rho2),
                ] {
                    write_table(&mut out, key, table);
                }
                let _ = writeln!(out, "m = {}", column(&r.terminal_linear));
            }
        }
    }
    let _ = writeln!(out, "\n[initial]\nx = {}\ni = {}", column(&p.initial_state), p.initial_regime);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_lists() {
        assert_eq!(parse_lambda_list("10, 1e2 1000").unwrap(), vec![10.0, 100.0, 1000.0]);
        for bad in ["", "1,1", "-1", "10,5", "nan", "inf", "1,,x"] {
            assert!(parse_lambda_list(bad).is_err(), "{bad}");
        }
    }

    const EXAMPLE1: &str = "
[meta]
T = 1
n = 1
m1 = 1
m2 = 1
D = 2
grid_steps = 1000

[generator]
-0.5 0.5
0.7 -0.7

[regime 1]
B2 = 1
D1 = 2
R1 = 5
R2 = -1
M = -1

[regime 2]
B2 = -2
D1 = 1
R1 = 2
R2 = -4
M = -1

[initial]
x = 1
i = 1
";

    #[test]
    fn example1_echoes_coefficients() {
        let p = load_problem(EXAMPLE1).unwrap();
        let regimes = p.game_regimes().unwrap();
        let first = |m: &PiecewiseMatrix| m.at(0.3)[(0, 0)];
        assert_eq!(regimes.iter().map(|r| first(&r.b2)).collect::<Vec<_>>(), [1.0, -2.0]);
        assert_eq!(regimes.iter().map(|r| first(&r.d1)).collect::<Vec<_>>(), [2.0, 1.0]);
        assert_eq!(regimes.iter().map(|r| first(&r.r1)).collect::<Vec<_>>(), [5.0, 2.0]);
        assert_eq!(regimes.iter().map(|r| first(&r.r2)).collect::<Vec<_>>(), [-1.0, -4.0]);
        assert_eq!(regimes.iter().map(|r| r.terminal_weight[(0, 0)]).collect::<Vec<_>>(), [-1.0, -1.0]);
        assert!(regimes.iter().all(|r| r.a.is_zero() && r.c.is_zero() && r.b1.is_zero()));
    }

    #[test]
    fn wrong_shape_names_the_key() {
        let text = EXAMPLE1.replace("R1 = 5", "R1 = 5; 2; 3");
        match load_problem(&text).unwrap_err() {
            Error::Dimension { key, expected, found } => {
                assert!(key.starts_with("R1"), "{key}");
                assert_eq!(expected, "1x1");
                assert_eq!(found, "3x1");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = EXAMPLE1.replace("D1 = 2", "D1 = two");
        match load_problem(&text).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 16),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn asymmetric_weight_rejected() {
        let text = EXAMPLE1
            .replace("n = 1", "n = 2")
            .replace("M = -1\n\n[regime 2]", "M = -1 0; 1 -1\n\n[regime 2]")
            .replace("B2 = 1\n", "B2 = 1; 0\n")
            .replace("B2 = -2", "B2 = -2; 0")
            .replace("D1 = 2", "D1 = 2; 0")
            .replace("D1 = 1", "D1 = 1; 0")
            .replace("M = -1\n\n[initial]", "M = -1 0; 0 -1\n\n[initial]")
            .replace("x = 1", "x = 1 0");
        assert!(matches!(load_problem(&text), Err(Error::Asymmetric { .. })));
    }

    #[test]
    fn time_windows_build_pieces() {
        let text = EXAMPLE1.replace("R1 = 5", "R1@0:0.5 = 5\nR1@0.5:1 = 4");
        let p = load_problem(&text).unwrap();
        let r1 = &p.game_regimes().unwrap()[0].r1;
        assert_eq!(r1.at(0.2)[(0, 0)], 5.0);
        assert_eq!(r1.at(0.5)[(0, 0)], 4.0);
        assert_eq!(p.breakpoints(), vec![0.5]);
        let gap = EXAMPLE1.replace("R1 = 5", "R1@0:0.4 = 5\nR1@0.5:1 = 4");
        assert!(load_problem(&gap).is_err());
        let misaligned = EXAMPLE1
            .replace("R1 = 5", "R1@0:0.33335 = 5\nR1@0.33335:1 = 4");
        assert!(matches!(load_problem(&misaligned), Err(Error::Grid(_))));
    }

    #[test]
    fn generator_errors_surface() {
        let text = EXAMPLE1.replace("0.7 -0.7", "1 -0.7");
        assert!(matches!(load_problem(&text), Err(Error::Generator { row: 2, .. })));
    }

    #[test]
    fn round_trip_is_exact() {
        let p = load_problem(EXAMPLE1).unwrap();
        let again = load_problem(&to_problem_file(&p)).unwrap();
        assert_eq!(p, again);
    }

    #[test]
    fn matrix_literals() {
        let m = parse_matrix_literal("1 2; 3 4").unwrap();
        assert_eq!(m[(1, 0)], 3.0);
        assert!(parse_matrix_literal("1 2; 3").is_err());
        assert!(parse_matrix_literal("1 ;").is_err());
        assert!(parse_matrix_literal("nan").is_err());
        assert!(parse_matrix_literal("inf").is_err());
        assert!(parse_matrix_literal("1e400").is_err());
    }
}
