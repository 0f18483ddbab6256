//! Small dense helpers: guarded inverses, symmetry, norms.

use nalgebra::DMatrix;

pub const DEFAULT_CONDITION_CEILING: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InverseFailure {
    NotPositiveDefinite { min_eigenvalue: f64 },
    IllConditioned { condition: f64 },
    Singular,
    NonFinite,
}

impl std::fmt::Display for InverseFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InverseFailure::NotPositiveDefinite { min_eigenvalue } => {
                write!(f, "not positive definite (min eigenvalue {min_eigenvalue:e})")
            }
            InverseFailure::IllConditioned { condition } => {
                write!(f, "condition number {condition:e} above ceiling")
            }
            InverseFailure::Singular => f.write_str("singular"),
            InverseFailure::NonFinite => f.write_str("non-finite entries"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SpdInverse {
    pub inverse: DMatrix<f64>,
    pub min_eigenvalue: f64,
    pub condition: f64,
}

#[derive(Clone, Debug)]
pub struct GeneralInverse {
    pub inverse: DMatrix<f64>,
    pub condition: f64,
}

fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Inverts a symmetric positive definite matrix, rejecting anything indefinite
/// or with condition number above `ceiling`.
pub fn spd_inverse(m: &DMatrix<f64>, ceiling: f64) -> Result<SpdInverse, InverseFailure> {
    if !all_finite(m) {
        return Err(InverseFailure::NonFinite);
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(SpdInverse {
            inverse: DMatrix::zeros(0, 0),
            min_eigenvalue: f64::INFINITY,
            condition: 1.0,
        });
    }
    if n == 1 {
        let v = m[(0, 0)];
        if v <= 0.0 {
            return Err(InverseFailure::NotPositiveDefinite { min_eigenvalue: v });
        }
        return Ok(SpdInverse {
            inverse: DMatrix::from_element(1, 1, 1.0 / v),
            min_eigenvalue: v,
            condition: 1.0,
        });
    }
    let sym = symmetrized(m);
    let eig = sym.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    let max = eig.eigenvalues.max();
    if min <= 0.0 {
        return Err(InverseFailure::NotPositiveDefinite { min_eigenvalue: min });
    }
    let condition = max / min;
    if condition > ceiling {
        return Err(InverseFailure::IllConditioned { condition });
    }
    let chol = sym
        .cholesky()
        .ok_or(InverseFailure::NotPositiveDefinite { min_eigenvalue: min })?;
    Ok(SpdInverse {
        inverse: chol.inverse(),
        min_eigenvalue: min,
        condition,
    })
}

/// Inverts a general square matrix via LU, with the 2-norm condition number
/// taken from the singular values.
pub fn general_inverse(m: &DMatrix<f64>, ceiling: f64) -> Result<GeneralInverse, InverseFailure> {
    if !all_finite(m) {
        return Err(InverseFailure::NonFinite);
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(GeneralInverse {
            inverse: DMatrix::zeros(0, 0),
            condition: 1.0,
        });
    }
    if n == 1 {
        let v = m[(0, 0)];
        if v == 0.0 {
            return Err(InverseFailure::Singular);
        }
        return Ok(GeneralInverse {
            inverse: DMatrix::from_element(1, 1, 1.0 / v),
            condition: 1.0,
        });
    }
    let sv = m.clone().singular_values();
    let (smin, smax) = (sv.min(), sv.max());
    if smin == 0.0 {
        return Err(InverseFailure::Singular);
    }
    let condition = smax / smin;
    if condition > ceiling {
        return Err(InverseFailure::IllConditioned { condition });
    }
    let inverse = m.clone().lu().try_inverse().ok_or(InverseFailure::Singular)?;
    Ok(GeneralInverse { inverse, condition })
}

/// Smallest eigenvalue of the symmetric part.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    match m.nrows() {
        0 => f64::INFINITY,
        1 => m[(0, 0)],
        _ => symmetrized(m).symmetric_eigen().eigenvalues.min(),
    }
}

pub fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn symmetrize_in_place(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for r in 0..n {
        for c in (r + 1)..n {
            let v = 0.5 * (m[(r, c)] + m[(c, r)]);
            m[(r, c)] = v;
            m[(c, r)] = v;
        }
    }
}

/// Largest |m_rc - m_cr|.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows().min(m.ncols());
    let mut worst: f64 = 0.0;
    for r in 0..n {
        for c in (r + 1)..n {
            worst = worst.max((m[(r, c)] - m[(c, r)]).abs());
        }
    }
    worst
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spd_inverse_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            spd_inverse(&m, DEFAULT_CONDITION_CEILING),
            Err(InverseFailure::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn spd_inverse_reports_condition() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]);
        let inv = spd_inverse(&m, DEFAULT_CONDITION_CEILING).unwrap();
        assert!((inv.condition - 4.0).abs() < 1e-12);
        assert!((inv.inverse[(0, 0)] - 0.25).abs() < 1e-15);
        assert!(matches!(
            spd_inverse(&m, 2.0),
            Err(InverseFailure::IllConditioned { .. })
        ));
    }

    #[test]
    fn general_inverse_roundtrip() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, -1.0, 3.0]);
        let inv = general_inverse(&m, DEFAULT_CONDITION_CEILING).unwrap();
        let id = &m * &inv.inverse;
        assert!((id - DMatrix::identity(2, 2)).abs().max() < 1e-14);
        let sing = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(general_inverse(&sing, DEFAULT_CONDITION_CEILING).is_err());
    }

    #[test]
    fn empty_matrices_invert() {
        let m = DMatrix::<f64>::zeros(0, 0);
        assert_eq!(spd_inverse(&m, 1.0).unwrap().inverse.nrows(), 0);
        assert_eq!(general_inverse(&m, 1.0).unwrap().inverse.nrows(), 0);
    }
}
