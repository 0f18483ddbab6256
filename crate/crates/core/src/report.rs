//! CSV writers. Floats use `{:.16e}` (17 significant digits, round-trip
//! exact); regime and matrix indices are 1-based.

use std::fmt::Write;

use nalgebra::{DMatrix, DVector};

use crate::equilibrium::BackwardTable;
use crate::regime::Regime;
use crate::riccati::{LambdaStudyRow, RiccatiSolution};

pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(float).unwrap_or_default()
}

fn push_matrix(out: &mut String, s: f64, regime: usize, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let _ = writeln!(out, "{},{},{},{},{}", float(s), regime + 1, r + 1, c + 1, float(m[(r, c)]));
        }
    }
}

/// Long-format table of a Riccati solution.
pub fn riccati_csv(solution: &RiccatiSolution) -> String {
    let grid = solution.grid();
    let meta = solution.meta();
    let mut out = format!(
        "# {} step={} rk4_steps={} max_residual={} max_condition={} min_margin={}\ns,regime,row,col,value\n",
        solution.kind().label(),
        float(meta.step),
        meta.rk4_steps,
        opt(meta.max_residual),
        opt(meta.max_condition),
        opt(meta.min_margin),
    );
    for j in 0..grid.num_nodes() {
        for (i, m) in solution.node_values(j).iter().enumerate() {
            push_matrix(&mut out, grid.time(j), i, m);
        }
    }
    out
}

/// Long-format table of a regime-indexed backward solution.
pub fn backward_csv(label: &str, table: &BackwardTable) -> String {
    let mut out = format!("# {label}\ns,regime,row,col,value\n");
    for (s, i, v) in crate::equilibrium::phi_rows(table) {
        push_matrix(&mut out, s, i, &DMatrix::from_column_slice(v.len(), 1, v.as_slice()));
    }
    out
}

/// One row of `values.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueSummary {
    pub regime: Regime,
    pub x: DVector<f64>,
    pub leader_value: f64,
    pub equilibrium_value: Option<f64>,
    pub monte_carlo: Option<(f64, f64)>,
}

pub fn values_csv(rows: &[ValueSummary]) -> String {
    let mut out = String::from("# value functions at the initial state\nregime,x,leader_value,equilibrium_value,mc_mean,mc_std_error\n");
    for r in rows {
        let x: Vec<String> = r.x.iter().map(|v| float(*v)).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.regime.number(),
            x.join(" "),
            float(r.leader_value),
            opt(r.equilibrium_value),
            opt(r.monte_carlo.map(|m| m.0)),
            opt(r.monte_carlo.map(|m| m.1)),
        );
    }
    out
}

pub fn lambda_study_csv(rows: &[LambdaStudyRow]) -> String {
    let mut out = String::from("# inverse of the lambda family against the leader solution\nlambda,distance,monotone,margin,error\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            float(r.lambda),
            opt(r.distance),
            r.monotone.map(|b| b.to_string()).unwrap_or_default(),
            opt(r.margin),
            r.error.as_deref().unwrap_or("").replace(',', ";"),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 1e300, 123456789.123456789] {
            assert_eq!(float(v).parse::<f64>().unwrap(), v);
        }
    }
}
