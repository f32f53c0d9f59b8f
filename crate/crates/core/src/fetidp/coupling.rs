use serde::{Deserialize, Serialize};

use crate::gauge::{DofClass, GaugeDecomposition};
use crate::sparse::CsrMatrix;
use crate::splines::GraphTags;

use super::FetiError;

/// One continuity constraint `a_plus - a_minus = 0` between the copies of a
/// remaining edge in two subdomains. Positions index the subdomains'
/// remaining sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraint {
    pub edge: usize,
    pub plus: (usize, usize),
    pub minus: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrices {
    pub constraints: Vec<Constraint>,
    /// Remaining-set sizes per subdomain.
    pub n_remaining: Vec<usize>,
    /// Coarse index of every local primal unknown, per subdomain.
    pub primal_coarse: Vec<Vec<usize>>,
    pub n_gp: usize,
}

impl CouplingMatrices {
    pub fn m_r(&self) -> usize {
        self.constraints.len()
    }

    pub fn n_r(&self) -> usize {
        self.n_remaining.iter().sum()
    }

    fn offsets(sizes: &[usize]) -> Vec<usize> {
        let mut out = vec![0; sizes.len() + 1];
        for (k, s) in sizes.iter().enumerate() {
            out[k + 1] = out[k] + s;
        }
        out
    }

    /// Signed boolean matrix over the stacked remaining unknowns.
    pub fn b_r(&self) -> CsrMatrix {
        let off = Self::offsets(&self.n_remaining);
        let rows = self
            .constraints
            .iter()
            .map(|c| {
                let mut r = vec![
                    (off[c.plus.0] + c.plus.1, 1.0),
                    (off[c.minus.0] + c.minus.1, -1.0),
                ];
                r.sort_unstable_by_key(|e| e.0);
                r
            })
            .collect();
        CsrMatrix::from_sorted_rows(self.n_r(), rows)
    }

    /// Assembly matrix from coarse unknowns to the stacked local primal
    /// unknowns.
    pub fn c_p(&self) -> CsrMatrix {
        let rows = self
            .primal_coarse
            .iter()
            .flatten()
            .map(|&g| vec![(g, 1.0)])
            .collect();
        CsrMatrix::from_sorted_rows(self.n_gp, rows)
    }

    /// `B_r^T lambda` split per subdomain.
    pub fn scatter_transpose(&self, lambda: &[f64]) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = self.n_remaining.iter().map(|&n| vec![0.0; n]).collect();
        for (c, &l) in self.constraints.iter().zip(lambda) {
            out[c.plus.0][c.plus.1] += l;
            out[c.minus.0][c.minus.1] -= l;
        }
        out
    }

    /// `B_r u` for per-subdomain remaining vectors.
    pub fn gather(&self, u: &[Vec<f64>]) -> Vec<f64> {
        self.constraints
            .iter()
            .map(|c| u[c.plus.0][c.plus.1] - u[c.minus.0][c.minus.1])
            .collect()
    }
}

/// One constraint per remaining edge shared by two subdomains, ordered by
/// edge. A remaining edge with more sharers means a cross edge escaped the
/// primal set.
pub fn build_coupling(
    gauge: &GaugeDecomposition,
    tags: &GraphTags,
) -> Result<CouplingMatrices, FetiError> {
    let n_sub = gauge.n_subdomains();
    let mut pos_of: Vec<Vec<(usize, usize)>> = vec![Vec::new(); gauge.classes.len()];
    for dofs in &gauge.subdomains {
        for (pos, &i) in dofs.remaining.iter().enumerate() {
            pos_of[dofs.edges[i]].push((dofs.subdomain, pos));
        }
    }
    let mut constraints = Vec::new();
    for (edge, class) in gauge.classes.iter().enumerate() {
        if *class != DofClass::Remaining {
            continue;
        }
        let sharers = tags.edge_subdomains[edge].len();
        match pos_of[edge].as_slice() {
            [_] if sharers == 1 => {}
            [a, b] => constraints.push(Constraint {
                edge,
                plus: *a,
                minus: *b,
            }),
            _ => return Err(FetiError::RedundantConstraint { edge, sharers }),
        }
    }
    Ok(CouplingMatrices {
        constraints,
        n_remaining: gauge.subdomains.iter().map(|d| d.remaining.len()).collect(),
        primal_coarse: (0..n_sub)
            .map(|k| gauge.subdomains[k].primal_coarse.clone())
            .collect(),
        n_gp: gauge.n_gp(),
    })
}
