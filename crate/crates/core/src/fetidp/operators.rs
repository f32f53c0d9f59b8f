use nalgebra::{DMatrix, DVector};

use crate::assembly::LocalSystem;
use crate::gauge::{GaugeDecomposition, SubdomainDofs};
use crate::par::Execution;
use crate::sparse::{Cholesky, CsrMatrix};

use super::{CouplingMatrices, FetiError};

/// Gauged blocks of one subdomain.
#[derive(Debug, Clone)]
pub struct SubdomainBlocks {
    pub subdomain: usize,
    /// Local indices of the remaining and primal unknowns.
    pub remaining: Vec<usize>,
    pub primal: Vec<usize>,
    pub primal_coarse: Vec<usize>,
    /// Local vector holding the Dirichlet values and zeros on tree edges.
    pub fixed: Vec<f64>,
    pub krr: CsrMatrix,
    pub krp: CsrMatrix,
    pub kpp: DMatrix<f64>,
    pub jr: Vec<f64>,
    pub jp: Vec<f64>,
    pub krr_factor: Cholesky,
    /// `K_rr^{-1} K_rp`, one column per local primal unknown.
    pub krr_inv_krp: DMatrix<f64>,
}

fn index_map(n: usize, idx: &[usize]) -> Vec<Option<usize>> {
    let mut map = vec![None; n];
    for (i, &j) in idx.iter().enumerate() {
        map[j] = Some(i);
    }
    map
}

impl SubdomainBlocks {
    pub fn build(
        local: &LocalSystem,
        dofs: &SubdomainDofs,
        lifting: &[f64],
    ) -> Result<Self, FetiError> {
        let n = local.edges.len();
        let k = dofs.subdomain;
        let mut fixed = vec![0.0; n];
        for &i in &dofs.dirichlet {
            fixed[i] = lifting[local.edges[i]];
        }
        let r_map = index_map(n, &dofs.remaining);
        let p_map = index_map(n, &dofs.primal);
        let nr = dofs.remaining.len();
        let np = dofs.primal.len();
        let krr = local.matrix.submatrix(&dofs.remaining, &r_map, nr);
        let krp = local.matrix.submatrix(&dofs.remaining, &p_map, np);
        let kpp = local.matrix.submatrix(&dofs.primal, &p_map, np).to_dense();
        let kf = local.matrix.mul_vec(&fixed);
        let jr = dofs
            .remaining
            .iter()
            .map(|&i| local.load[i] - kf[i])
            .collect();
        let jp = dofs.primal.iter().map(|&i| local.load[i] - kf[i]).collect();
        let krr_factor = Cholesky::factor(&krr).map_err(|source| FetiError::LocalSingular {
            subdomain: k,
            block: "K_rr",
            source,
        })?;
        let mut cols = krp.to_dense();
        krr_factor.solve_many_in_place(cols.as_mut_slice(), np);
        Ok(SubdomainBlocks {
            subdomain: k,
            remaining: dofs.remaining.clone(),
            primal: dofs.primal.clone(),
            primal_coarse: dofs.primal_coarse.clone(),
            fixed,
            krr,
            krp,
            kpp,
            jr,
            jp,
            krr_factor,
            krr_inv_krp: cols,
        })
    }

    fn primal_from_coarse(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.primal.len(), self.primal_coarse.iter().map(|&g| x[g]))
    }
}

/// The dual-primal operators with `F` assembled and factorized.
#[derive(Debug, Clone)]
pub struct DualPrimalOperators {
    pub blocks: Vec<SubdomainBlocks>,
    pub coupling: CouplingMatrices,
    /// `C^T K_pr K_rr^{-1} K_rp C - C^T K_pp C`, negative definite.
    pub f: DMatrix<f64>,
    neg_f_factor: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    pub d: DVector<f64>,
    pub e: Vec<f64>,
    pub exec: Execution,
}

impl DualPrimalOperators {
    pub fn build(
        locals: &[LocalSystem],
        gauge: &GaugeDecomposition,
        coupling: CouplingMatrices,
        lifting: &[f64],
        exec: Execution,
    ) -> Result<Self, FetiError> {
        let blocks = exec.try_map_range(locals.len(), |k| {
            SubdomainBlocks::build(&locals[k], &gauge.subdomains[k], lifting)
        })?;
        let n_gp = coupling.n_gp;
        let mut f = DMatrix::zeros(n_gp, n_gp);
        let mut d = DVector::zeros(n_gp);
        for b in &blocks {
            let local_f = b.krp.to_dense().tr_mul(&b.krr_inv_krp) - &b.kpp;
            let jr = DVector::from_column_slice(&b.jr);
            let local_d = b.krr_inv_krp.tr_mul(&jr) - DVector::from_column_slice(&b.jp);
            for (i, &gi) in b.primal_coarse.iter().enumerate() {
                d[gi] += local_d[i];
                for (j, &gj) in b.primal_coarse.iter().enumerate() {
                    f[(gi, gj)] += local_f[(i, j)];
                }
            }
        }
        // symmetrize the rounding of the two-sided products
        let f = (&f + f.transpose()) * 0.5;
        let neg_f_factor = if n_gp > 0 {
            Some((-&f).cholesky().ok_or(FetiError::CoarseNotDefinite)?)
        } else {
            None
        };
        let mut ops = DualPrimalOperators {
            blocks,
            coupling,
            f,
            neg_f_factor,
            d,
            e: Vec::new(),
            exec,
        };
        let jr: Vec<Vec<f64>> = ops.blocks.iter().map(|b| b.jr.clone()).collect();
        ops.e = ops.coupling.gather(&ops.solve_rr(jr));
        Ok(ops)
    }

    pub fn n_gp(&self) -> usize {
        self.coupling.n_gp
    }

    pub fn m_r(&self) -> usize {
        self.coupling.m_r()
    }

    /// Applies `K_rr^{-1}` subdomain by subdomain.
    pub fn solve_rr(&self, u: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
        let blocks = &self.blocks;
        self.exec.map_range(blocks.len(), |k| {
            let mut x = u[k].clone();
            blocks[k].krr_factor.solve_in_place(&mut x);
            x
        })
    }

    /// `F^{-1} y`.
    pub fn solve_coarse(&self, y: &DVector<f64>) -> DVector<f64> {
        match &self.neg_f_factor {
            Some(ch) => -ch.solve(y),
            None => DVector::zeros(0),
        }
    }

    /// `G x = B_r K_rr^{-1} K_rp C x` from the cached columns.
    pub fn apply_g(&self, x: &DVector<f64>) -> Vec<f64> {
        let u: Vec<Vec<f64>> = self
            .blocks
            .iter()
            .map(|b| {
                (&b.krr_inv_krp * b.primal_from_coarse(x))
                    .as_slice()
                    .to_vec()
            })
            .collect();
        self.coupling.gather(&u)
    }

    /// `G x` with fresh subdomain solves instead of cached columns.
    pub fn apply_g_direct(&self, x: &DVector<f64>) -> Vec<f64> {
        let u: Vec<Vec<f64>> = self
            .blocks
            .iter()
            .map(|b| b.krp.mul_vec(b.primal_from_coarse(x).as_slice()))
            .collect();
        self.coupling.gather(&self.solve_rr(u))
    }

    /// `G^T lambda = C^T K_pr K_rr^{-1} B_r^T lambda`.
    pub fn apply_gt(&self, lambda: &[f64]) -> DVector<f64> {
        let u = self.coupling.scatter_transpose(lambda);
        let mut out = DVector::zeros(self.n_gp());
        for (b, uk) in self.blocks.iter().zip(&u) {
            let local = b.krr_inv_krp.tr_mul(&DVector::from_column_slice(uk));
            for (i, &g) in b.primal_coarse.iter().enumerate() {
                out[g] += local[i];
            }
        }
        out
    }

    /// `W lambda = B_r K_rr^{-1} B_r^T lambda`.
    pub fn apply_w(&self, lambda: &[f64]) -> Vec<f64> {
        self.coupling
            .gather(&self.solve_rr(self.coupling.scatter_transpose(lambda)))
    }

    /// `S lambda = (G F^{-1} G^T - W) lambda`.
    pub fn apply_s(&self, lambda: &[f64]) -> Vec<f64> {
        let mut out = self.apply_w(lambda);
        out.iter_mut().for_each(|v| *v = -*v);
        if self.n_gp() > 0 {
            let g = self.apply_g(&self.solve_coarse(&self.apply_gt(lambda)));
            for (o, gi) in out.iter_mut().zip(g) {
                *o += gi;
            }
        }
        out
    }

    /// Right-hand side `G F^{-1} d - e` of the interface problem.
    pub fn interface_rhs(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.e.iter().map(|v| -v).collect();
        if self.n_gp() > 0 {
            let g = self.apply_g(&self.solve_coarse(&self.d));
            for (o, gi) in out.iter_mut().zip(g) {
                *o += gi;
            }
        }
        out
    }
}

/// `B_{r_I} S_{r_I r_I} B_{r_I}^T` with local Schur complements
/// `K_II - K_IV K_VV^{-1} K_VI` on the interface part of the remaining set.
#[derive(Debug, Clone)]
pub struct DirichletPreconditioner {
    parts: Vec<SchurBlock>,
    exec: Execution,
}

#[derive(Debug, Clone)]
struct SchurBlock {
    interface: Vec<usize>,
    kii: CsrMatrix,
    kiv: CsrMatrix,
    kvi: CsrMatrix,
    kvv_factor: Cholesky,
}

impl SchurBlock {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.kii.mul_vec(x);
        if self.kvv_factor.dim() > 0 {
            let mut t = self.kvi.mul_vec(x);
            self.kvv_factor.solve_in_place(&mut t);
            for (yi, zi) in y.iter_mut().zip(self.kiv.mul_vec(&t)) {
                *yi -= zi;
            }
        }
        y
    }
}

impl DirichletPreconditioner {
    pub fn build(ops: &DualPrimalOperators, gauge: &GaugeDecomposition) -> Result<Self, FetiError> {
        let exec = ops.exec;
        let parts = exec.try_map_range(ops.blocks.len(), |k| {
            let dofs = &gauge.subdomains[k];
            let krr = &ops.blocks[k].krr;
            let nr = krr.nrows();
            let i_map = index_map(nr, &dofs.r_interface);
            let v_map = index_map(nr, &dofs.r_interior);
            let kvv = krr.submatrix(&dofs.r_interior, &v_map, dofs.r_interior.len());
            let kvv_factor = Cholesky::factor(&kvv).map_err(|source| FetiError::LocalSingular {
                subdomain: k,
                block: "K_VV",
                source,
            })?;
            Ok(SchurBlock {
                interface: dofs.r_interface.clone(),
                kii: krr.submatrix(&dofs.r_interface, &i_map, dofs.r_interface.len()),
                kiv: krr.submatrix(&dofs.r_interface, &v_map, dofs.r_interior.len()),
                kvi: krr.submatrix(&dofs.r_interior, &i_map, dofs.r_interface.len()),
                kvv_factor,
            })
        })?;
        Ok(DirichletPreconditioner { parts, exec })
    }

    pub fn apply(&self, coupling: &CouplingMatrices, lambda: &[f64]) -> Vec<f64> {
        let u = coupling.scatter_transpose(lambda);
        let parts = &self.parts;
        let v = self.exec.map_range(parts.len(), |k| {
            let part = &parts[k];
            let x: Vec<f64> = part.interface.iter().map(|&i| u[k][i]).collect();
            let y = part.apply(&x);
            let mut full = vec![0.0; u[k].len()];
            for (&i, yi) in part.interface.iter().zip(y) {
                full[i] = yi;
            }
            full
        });
        coupling.gather(&v)
    }
}
