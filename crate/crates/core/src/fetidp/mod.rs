//! Dual-primal tearing and interconnecting: coupling matrices, the interface
//! operator `S = G F^{-1} G^T - W`, the Dirichlet preconditioner, PCG and
//! recovery of the subdomain fields.
//!
//! `F` and `S` as defined here are negative definite; the solver runs CG on
//! `-S` and factorizes `-F`.

mod condition;
mod coupling;
mod operators;
mod pcg;

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::LocalSystem;
use crate::gauge::{DofClass, GaugeDecomposition};
use crate::par::Execution;
use crate::sparse::{max_abs, FactorError};
use crate::splines::GraphTags;

pub use condition::{
    dense_operator, exact_estimate, lanczos_estimate, ConditionEstimate, ConditionMode, EXACT_LIMIT,
};
pub use coupling::{build_coupling, Constraint, CouplingMatrices};
pub use operators::{DirichletPreconditioner, DualPrimalOperators, SubdomainBlocks};
pub use pcg::{pcg, PcgHistory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FetiError {
    #[error("remaining edge {edge} is shared by {sharers} subdomains")]
    RedundantConstraint { edge: usize, sharers: usize },
    #[error("subdomain {subdomain}: {block} is not positive definite ({source})")]
    LocalSingular {
        subdomain: usize,
        block: &'static str,
        source: FactorError,
    },
    #[error("coarse matrix is not definite")]
    CoarseNotDefinite,
    #[error("interface operator is not definite")]
    InterfaceNotDefinite,
    #[error("PCG did not converge in {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("exact condition estimate needs a {size}x{size} dense matrix (limit {limit})")]
    TooLarge { size: usize, limit: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub cond_mode: ConditionMode,
    pub precondition: bool,
    pub exec: Execution,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-6,
            max_iter: 500,
            cond_mode: ConditionMode::Lanczos,
            precondition: true,
            exec: Execution::Parallel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub build: f64,
    pub solve: f64,
    pub recover: f64,
    pub condition: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub residuals: Vec<f64>,
    pub condition: Option<ConditionEstimate>,
    pub n_gp: usize,
    pub m_r: usize,
    pub n_r: usize,
    /// `||B_r a_r||_inf / ||a_r||_inf` of the recovered fields.
    pub relative_jump: f64,
    pub timings: PhaseTimings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionFields {
    pub lambda: Vec<f64>,
    pub primal: Vec<f64>,
    pub remaining: Vec<Vec<f64>>,
    /// Full local coefficient vectors, indexed like the subdomain edges.
    pub coefficients: Vec<Vec<f64>>,
}

/// `p = F^{-1}(d - G^T lambda)`, then
/// `a_r = K_rr^{-1}(j_r - K_rp C p - B_r^T lambda)` per subdomain.
pub fn recover_solution(ops: &DualPrimalOperators, lambda: &[f64]) -> SolutionFields {
    let primal = if ops.n_gp() > 0 {
        ops.solve_coarse(&(&ops.d - ops.apply_gt(lambda)))
    } else {
        DVector::zeros(0)
    };
    let bt = ops.coupling.scatter_transpose(lambda);
    let rhs: Vec<Vec<f64>> = ops
        .blocks
        .iter()
        .zip(&bt)
        .map(|(b, btk)| {
            let pk: Vec<f64> = b.primal_coarse.iter().map(|&g| primal[g]).collect();
            let kp = b.krp.mul_vec(&pk);
            (0..b.jr.len()).map(|i| b.jr[i] - kp[i] - btk[i]).collect()
        })
        .collect();
    let remaining = ops.solve_rr(rhs);
    let coefficients = ops
        .blocks
        .iter()
        .zip(&remaining)
        .map(|(b, ar)| {
            let mut full = b.fixed.clone();
            for (&i, &v) in b.remaining.iter().zip(ar) {
                full[i] = v;
            }
            for (&i, &g) in b.primal.iter().zip(&b.primal_coarse) {
                full[i] = primal[g];
            }
            full
        })
        .collect();
    SolutionFields {
        lambda: lambda.to_vec(),
        primal: primal.as_slice().to_vec(),
        remaining,
        coefficients,
    }
}

/// Condition number of the preconditioned interface operator.
pub fn estimate_condition(
    ops: &DualPrimalOperators,
    precond: Option<&DirichletPreconditioner>,
    mode: ConditionMode,
    hist: &PcgHistory,
) -> Result<Option<ConditionEstimate>, FetiError> {
    let m_r = ops.m_r();
    if m_r == 0 {
        return Ok(None);
    }
    match mode {
        ConditionMode::Lanczos => Ok(lanczos_estimate(hist)),
        ConditionMode::Exact => {
            if m_r > EXACT_LIMIT {
                return Err(FetiError::TooLarge {
                    size: m_r,
                    limit: EXACT_LIMIT,
                });
            }
            let neg_s = dense_operator(
                m_r,
                |x| ops.apply_s(x).into_iter().map(|v| -v).collect(),
                ops.exec,
            );
            let m = match precond {
                Some(pc) => dense_operator(m_r, |x| pc.apply(&ops.coupling, x), ops.exec),
                None => nalgebra::DMatrix::identity(m_r, m_r),
            };
            exact_estimate(&neg_s, &m).map(Some)
        }
    }
}

/// Builds the operators, runs PCG on `-S`, recovers the fields and estimates
/// the condition number.
pub fn solve(
    locals: &[LocalSystem],
    gauge: &GaugeDecomposition,
    tags: &GraphTags,
    lifting: &[f64],
    options: &SolverOptions,
) -> Result<(SolutionFields, SolveReport), FetiError> {
    let t0 = Instant::now();
    let coupling = build_coupling(gauge, tags)?;
    let ops = DualPrimalOperators::build(locals, gauge, coupling, lifting, options.exec)?;
    let precond = if options.precondition {
        Some(DirichletPreconditioner::build(&ops, gauge)?)
    } else {
        None
    };
    let build = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let rhs: Vec<f64> = ops.interface_rhs().into_iter().map(|v| -v).collect();
    let apply_a = |x: &[f64]| ops.apply_s(x).into_iter().map(|v| -v).collect::<Vec<f64>>();
    let (lambda, hist) = match &precond {
        Some(pc) => pcg(
            apply_a,
            |r| pc.apply(&ops.coupling, r),
            &rhs,
            options.tol,
            options.max_iter,
        )?,
        None => pcg(apply_a, |r| r.to_vec(), &rhs, options.tol, options.max_iter)?,
    };
    let solve_time = t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let fields = recover_solution(&ops, &lambda);
    let jump = max_abs(&ops.coupling.gather(&fields.remaining));
    let scale = fields
        .remaining
        .iter()
        .map(|r| max_abs(r))
        .fold(0.0, f64::max);
    let recover = t2.elapsed().as_secs_f64();

    let t3 = Instant::now();
    let condition = estimate_condition(&ops, precond.as_ref(), options.cond_mode, &hist)?;
    let condition_time = t3.elapsed().as_secs_f64();

    let report = SolveReport {
        iterations: hist.iterations,
        residuals: hist.residuals,
        condition,
        n_gp: ops.n_gp(),
        m_r: ops.m_r(),
        n_r: ops.coupling.n_r(),
        relative_jump: if scale > 0.0 { jump / scale } else { jump },
        timings: PhaseTimings {
            build,
            solve: solve_time,
            recover,
            condition: condition_time,
        },
    };
    Ok((fields, report))
}

/// Number of non-Dirichlet, non-tree unknowns on subdomain interfaces that
/// are not primal, counted from the gauge alone.
pub fn expected_multipliers(gauge: &GaugeDecomposition, tags: &GraphTags) -> usize {
    (0..gauge.classes.len())
        .filter(|&e| gauge.classes[e] == DofClass::Remaining && tags.edge_subdomains[e].len() == 2)
        .count()
}
