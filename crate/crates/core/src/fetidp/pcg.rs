use serde::{Deserialize, Serialize};

use crate::sparse::dot;

use super::FetiError;

/// Iteration record of a preconditioned CG run. `alphas` and `betas` are the
/// CG step coefficients, from which the Lanczos tridiagonal is rebuilt.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PcgHistory {
    pub iterations: usize,
    /// `sqrt(r^T z) / sqrt(r0^T z0)` after every iteration, starting with 1.
    pub residuals: Vec<f64>,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
}

/// Preconditioned conjugate gradients from a zero initial guess for an SPD
/// operator `a` and SPD preconditioner `m`. Stops when the relative
/// preconditioned residual drops to `tol`.
pub fn pcg(
    a: impl Fn(&[f64]) -> Vec<f64>,
    m: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, PcgHistory), FetiError> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut hist = PcgHistory::default();
    let mut r = b.to_vec();
    let mut z = m(&r);
    let mut rz = dot(&r, &z);
    if n == 0 || rz <= 0.0 || b.iter().all(|&v| v == 0.0) {
        return Ok((x, hist));
    }
    let rz0 = rz;
    hist.residuals.push(1.0);
    let mut p = z.clone();
    for it in 1..=max_iter {
        let ap = a(&p);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        z = m(&r);
        let rz_new = dot(&r, &z);
        let rel = (rz_new.max(0.0) / rz0).sqrt();
        hist.alphas.push(alpha);
        hist.residuals.push(rel);
        hist.iterations = it;
        if rel <= tol {
            return Ok((x, hist));
        }
        let beta = rz_new / rz;
        hist.betas.push(beta);
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rz = rz_new;
    }
    Err(FetiError::NoConvergence {
        iterations: max_iter,
        residual: *hist.residuals.last().unwrap(),
    })
}
