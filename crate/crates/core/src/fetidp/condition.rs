use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::par::Execution;

use super::{FetiError, PcgHistory};

pub const EXACT_LIMIT: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionMode {
    Exact,
    #[default]
    Lanczos,
}

impl std::str::FromStr for ConditionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(ConditionMode::Exact),
            "lanczos" => Ok(ConditionMode::Lanczos),
            other => Err(format!(
                "unknown condition mode {other:?} (expected exact or lanczos)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionEstimate {
    pub omega_max: f64,
    pub omega_min: f64,
    pub cond: f64,
}

impl ConditionEstimate {
    fn from_extremes(omega_min: f64, omega_max: f64) -> Self {
        ConditionEstimate {
            omega_max,
            omega_min,
            cond: omega_max / omega_min,
        }
    }
}

/// Extreme eigenvalues of the Lanczos tridiagonal built from CG coefficients.
pub fn lanczos_estimate(hist: &PcgHistory) -> Option<ConditionEstimate> {
    let k = hist.alphas.len();
    if k == 0 {
        return None;
    }
    let mut t = DMatrix::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = 1.0 / hist.alphas[i];
        if i > 0 {
            t[(i, i)] += hist.betas[i - 1] / hist.alphas[i - 1];
            let off = hist.betas[i - 1].sqrt() / hist.alphas[i - 1];
            t[(i, i - 1)] = off;
            t[(i - 1, i)] = off;
        }
    }
    let eig = t.symmetric_eigenvalues();
    Some(ConditionEstimate::from_extremes(eig.min(), eig.max()))
}

/// Assembles an operator column by column.
pub fn dense_operator(
    n: usize,
    apply: impl Fn(&[f64]) -> Vec<f64> + Sync + Send,
    exec: Execution,
) -> DMatrix<f64> {
    let cols = exec.map_range(n, |j| {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        apply(&e)
    });
    DMatrix::from_fn(n, n, |i, j| cols[j][i])
}

/// Extreme eigenvalues of `M A` for SPD `A` and SPD `M`, given densely:
/// with `A = L L^T` these are the eigenvalues of `L^T M L`.
pub fn exact_estimate(a: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<ConditionEstimate, FetiError> {
    let n = a.nrows();
    if n > EXACT_LIMIT {
        return Err(FetiError::TooLarge {
            size: n,
            limit: EXACT_LIMIT,
        });
    }
    let a_sym = (a + a.transpose()) * 0.5;
    let m_sym = (m + m.transpose()) * 0.5;
    let l = a_sym
        .cholesky()
        .ok_or(FetiError::InterfaceNotDefinite)?
        .unpack();
    let core = l.tr_mul(&m_sym) * &l;
    let core = (&core + core.transpose()) * 0.5;
    let eig = SymmetricEigen::new(core).eigenvalues;
    Ok(ConditionEstimate::from_extremes(eig.min(), eig.max()))
}
