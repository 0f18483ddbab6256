#![allow(dead_code)]

use regime_stackelberg::{load_problem, ProblemData};

pub fn read_problem(name: &str) -> ProblemData {
    let path = format!("{}/../../problems/{name}", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"));
    load_problem(&text).unwrap()
}

pub fn example1() -> ProblemData {
    read_problem("example1.prob")
}

pub fn example2() -> ProblemData {
    read_problem("example2.prob")
}

/// Backward integration of `y' = f(s, y)` from `y(t1) = terminal` to `t0`
/// with the Kutta 3/8 rule. Returns node values, node 0 first.
pub fn kutta38_backward(
    f: &dyn Fn(f64, &[f64]) -> Vec<f64>,
    terminal: &[f64],
    t0: f64,
    t1: f64,
    steps: usize,
) -> Vec<Vec<f64>> {
    let h = -(t1 - t0) / steps as f64;
    let axpy = |y: &[f64], terms: &[(&[f64], f64)]| -> Vec<f64> {
        let mut out = y.to_vec();
        for (k, c) in terms {
            for (o, v) in out.iter_mut().zip(k.iter()) {
                *o += c * v;
            }
        }
        out
    };
    let mut y = terminal.to_vec();
    let mut out = vec![y.clone()];
    for j in 0..steps {
        let s = t1 + h * j as f64;
        let k1 = f(s, &y);
        let k2 = f(s + h / 3.0, &axpy(&y, &[(&k1, h / 3.0)]));
        let k3 = f(s + 2.0 * h / 3.0, &axpy(&y, &[(&k1, -h / 3.0), (&k2, h)]));
        let k4 = f(s + h, &axpy(&y, &[(&k1, h), (&k2, -h), (&k3, h)]));
        y = axpy(&y, &[(&k1, h / 8.0), (&k2, 3.0 * h / 8.0), (&k3, 3.0 * h / 8.0), (&k4, h / 8.0)]);
        out.push(y.clone());
    }
    out.reverse();
    out
}

/// Scalar right-hand side of the two-regime leader equation of example 2,
/// written from its explicit scalar form, followed by the linear φ equation.
pub fn example2_sigma_phi_rhs(_s: f64, y: &[f64]) -> Vec<f64> {
    let (s1, s2) = (y[0], y[1]);
    let coupling1 = -0.5 * s1 + 0.5 * s2;
    let coupling2 = 0.7 * s1 - 0.7 * s2;
    let d1 = 6.0 * s1 - 8.0 + 17.0 / 7.0 * s1 * s1 + s1 * s1 / (14.0 + 49.0 * s1) - coupling1;
    let d2 = -20.0 / 3.0 * s2 - 7.0 / 3.0 + 8.0 / 3.0 * s2 * s2 + (2.0 + 2.0 * s2).powi(2) / (3.0 + 9.0 * s2) - coupling2;
    let mut out = vec![d1, d2];
    if y.len() == 4 {
        // φ' = [Ahat - Fhat(Σ) Σ S1~ / That(Σ) + Σ G - Hhat(Σ) S2 / T22] φ - Σ_k λ_ik φ_k
        // with That = 1 + Σ T11~, Fhat = F~ + Σ S1~, Hhat(Σ) = Hhat + Σ S2.
        let coef = |sig: f64, a: f64, f_t: f64, s1_t: f64, t11_t: f64, g: f64, h: f64, s2: f64, t22: f64| {
            a - (f_t + sig * s1_t) * sig * s1_t / (1.0 + sig * t11_t) + sig * g - (h + sig * s2) * s2 / t22
        };
        let c1 = coef(s1, 1.0, 0.0, -0.5, 3.5, 3.0, -4.0, 1.0, 2.0);
        let c2 = coef(s2, -1.0, 2.0, 2.0, 3.0, 5.0, 2.0, 2.0, 4.0);
        let (p1, p2) = (y[2], y[3]);
        out.push(c1 * p1 - (-0.5 * p1 + 0.5 * p2));
        out.push(c2 * p2 - (0.7 * p1 - 0.7 * p2));
    }
    out
}
