use serde::{Deserialize, Serialize};

use super::SplineError;

/// Open uniform knot vector on `[0, 1]` with `divs` cells and simple
/// interior knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotVector {
    degree: usize,
    divs: usize,
    knots: Vec<f64>,
}

impl KnotVector {
    pub fn open_uniform(degree: usize, divs: usize) -> Self {
        assert!(divs >= 1);
        let mut knots = vec![0.0; degree + 1];
        knots.extend((1..divs).map(|i| i as f64 / divs as f64));
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        KnotVector {
            degree,
            divs,
            knots,
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn divs(&self) -> usize {
        self.divs
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn dim(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    /// Degree-lowered knot vector with the first and last knot removed.
    pub fn reduced(&self) -> KnotVector {
        assert!(self.degree >= 1);
        KnotVector {
            degree: self.degree - 1,
            divs: self.divs,
            knots: self.knots[1..self.knots.len() - 1].to_vec(),
        }
    }

    pub fn cell_of(&self, x: f64) -> usize {
        ((x * self.divs as f64).floor().max(0.0) as usize).min(self.divs - 1)
    }

    pub fn cell_bounds(&self, cell: usize) -> (f64, f64) {
        (
            cell as f64 / self.divs as f64,
            (cell + 1) as f64 / self.divs as f64,
        )
    }

    pub fn greville(&self, i: usize) -> f64 {
        if self.degree == 0 {
            return 0.5 * (self.knots[i] + self.knots[i + 1]);
        }
        self.knots[i + 1..=i + self.degree].iter().sum::<f64>() / self.degree as f64
    }

    /// Values and first derivatives of the `degree + 1` basis functions that
    /// are nonzero on `cell`; the first one has global index `cell`.
    pub fn eval_with_derivative(&self, cell: usize, x: f64) -> (Vec<f64>, Vec<f64>) {
        let p = self.degree;
        let span = cell + p;
        let t = &self.knots;
        // Triangular table of basis values of increasing degree.
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let tmp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            ndu[j][j] = saved;
        }
        let values: Vec<f64> = (0..=p).map(|j| ndu[j][p]).collect();
        let mut ders = vec![0.0; p + 1];
        if p >= 1 {
            for (r, d) in ders.iter_mut().enumerate() {
                let mut acc = 0.0;
                if r >= 1 {
                    acc += ndu[r - 1][p - 1] / ndu[p][r - 1];
                }
                if r < p {
                    acc -= ndu[r][p - 1] / ndu[p][r];
                }
                *d = acc * p as f64;
            }
        }
        (values, ders)
    }
}

/// Gauss–Legendre rule with `n` points on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[n - 1 - i] = 0.5 * (1.0 + z);
        w[n - 1 - i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// Tensor-product rule with `n` points per direction on the cell
/// `[lo, hi]`.
pub(crate) fn cell_rule(n: usize, lo: [f64; 3], hi: [f64; 3]) -> Vec<([f64; 3], f64)> {
    let (x, w) = gauss_legendre(n);
    let mut out = Vec::with_capacity(n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let pt = [
                    lo[0] + (hi[0] - lo[0]) * x[i],
                    lo[1] + (hi[1] - lo[1]) * x[j],
                    lo[2] + (hi[2] - lo[2]) * x[k],
                ];
                let wt = w[i] * w[j] * w[k] * (hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2]);
                out.push((pt, wt));
            }
        }
    }
    out
}

/// Degree-`p` tensor B-splines on the reference cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarSpace {
    pub knots: KnotVector,
}

impl ScalarSpace {
    pub fn degree(&self) -> usize {
        self.knots.degree()
    }

    pub fn n(&self) -> usize {
        self.knots.dim()
    }

    pub fn dim(&self) -> usize {
        self.n().pow(3)
    }

    pub fn index(&self, idx: [usize; 3]) -> usize {
        let n = self.n();
        idx[0] + n * (idx[1] + n * idx[2])
    }

    pub fn multi_index(&self, i: usize) -> [usize; 3] {
        let n = self.n();
        [i % n, (i / n) % n, i / (n * n)]
    }

    pub fn greville(&self, idx: [usize; 3]) -> [f64; 3] {
        idx.map(|i| self.knots.greville(i))
    }

    /// `(dof, value, gradient)` for all functions nonzero at `x`.
    pub fn eval(&self, x: [f64; 3]) -> Vec<(usize, f64, [f64; 3])> {
        let cells = x.map(|xi| self.knots.cell_of(xi));
        let tabs: Vec<_> = (0..3)
            .map(|d| self.knots.eval_with_derivative(cells[d], x[d]))
            .collect();
        let m = self.degree() + 1;
        let mut out = Vec::with_capacity(m * m * m);
        for c in 0..m {
            for b in 0..m {
                for a in 0..m {
                    let (va, vb, vc) = (tabs[0].0[a], tabs[1].0[b], tabs[2].0[c]);
                    let grad = [
                        tabs[0].1[a] * vb * vc,
                        va * tabs[1].1[b] * vc,
                        va * vb * tabs[2].1[c],
                    ];
                    let dof = self.index([cells[0] + a, cells[1] + b, cells[2] + c]);
                    out.push((dof, va * vb * vc, grad));
                }
            }
        }
        out
    }
}

/// Curl-conforming tensor spline space: component `c` has degree `p - 1`
/// along direction `c` and degree `p` along the other two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurlSpace {
    pub full: KnotVector,
    pub reduced: KnotVector,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurlSample {
    pub dof: usize,
    pub value: [f64; 3],
    pub curl: [f64; 3],
}

impl CurlSpace {
    pub fn degree(&self) -> usize {
        self.full.degree()
    }

    pub fn divs(&self) -> usize {
        self.full.divs()
    }

    /// 0-form count per direction.
    pub fn n(&self) -> usize {
        self.full.dim()
    }

    pub fn component_dims(&self, c: usize) -> [usize; 3] {
        let n = self.n();
        let mut d = [n; 3];
        d[c] = n - 1;
        d
    }

    pub fn component_dim(&self, c: usize) -> usize {
        self.component_dims(c).iter().product()
    }

    pub fn offset(&self, c: usize) -> usize {
        (0..c).map(|k| self.component_dim(k)).sum()
    }

    pub fn dim(&self) -> usize {
        (0..3).map(|c| self.component_dim(c)).sum()
    }

    pub fn index(&self, c: usize, idx: [usize; 3]) -> usize {
        let d = self.component_dims(c);
        self.offset(c) + idx[0] + d[0] * (idx[1] + d[1] * idx[2])
    }

    pub fn multi_index(&self, dof: usize) -> (usize, [usize; 3]) {
        let mut rest = dof;
        for c in 0..3 {
            let n = self.component_dim(c);
            if rest < n {
                let d = self.component_dims(c);
                return (c, [rest % d[0], (rest / d[0]) % d[1], rest / (d[0] * d[1])]);
            }
            rest -= n;
        }
        panic!("dof {dof} out of range");
    }

    /// Scale turning reduced-degree B-spline `i` into the derivative-compatible
    /// basis, so that the discrete gradient is an incidence matrix.
    pub(crate) fn reduced_scale(&self, i: usize) -> f64 {
        let p = self.degree();
        let t = self.reduced.knots();
        p as f64 / (t[i + p] - t[i])
    }

    /// One-dimensional tabulation on a cell: (full values, full derivatives,
    /// scaled reduced values), first index equal to `cell` in both cases.
    pub(crate) fn tabulate_1d(&self, cell: usize, x: f64) -> ([f64; 4], [f64; 4], [f64; 3]) {
        let (nv, nd) = self.full.eval_with_derivative(cell, x);
        let (dv, _) = self.reduced.eval_with_derivative(cell, x);
        let mut out = ([0.0; 4], [0.0; 4], [0.0; 3]);
        out.0[..nv.len()].copy_from_slice(&nv);
        out.1[..nd.len()].copy_from_slice(&nd);
        for a in 0..dv.len() {
            out.2[a] = dv[a] * self.reduced_scale(cell + a);
        }
        out
    }

    /// Reference values and reference curls of every function nonzero at `x`.
    pub fn eval(&self, x: [f64; 3]) -> Vec<CurlSample> {
        let cells = x.map(|xi| self.full.cell_of(xi));
        let tabs = [0, 1, 2].map(|d| self.tabulate_1d(cells[d], x[d]));
        let mut out = Vec::new();
        for_each_cell_function(self, cells, |c, local, dof| {
            let (value, curl) = local_value_curl(&tabs, c, local);
            out.push(CurlSample { dof, value, curl });
        });
        out
    }

    /// Number of functions supported on one cell.
    pub fn functions_per_cell(&self) -> usize {
        let p = self.degree();
        3 * p * (p + 1) * (p + 1)
    }

    pub fn n_cells(&self) -> usize {
        self.divs().pow(3)
    }
}

/// Visits `(component, local 1d offsets, dof)` for all functions on a cell,
/// in a fixed order.
pub(crate) fn for_each_cell_function(
    space: &CurlSpace,
    cells: [usize; 3],
    mut f: impl FnMut(usize, [usize; 3], usize),
) {
    let p = space.degree();
    for c in 0..3 {
        let counts = [0, 1, 2].map(|d| if d == c { p } else { p + 1 });
        for k in 0..counts[2] {
            for j in 0..counts[1] {
                for i in 0..counts[0] {
                    let local = [i, j, k];
                    let idx = [cells[0] + i, cells[1] + j, cells[2] + k];
                    f(c, local, space.index(c, idx));
                }
            }
        }
    }
}

type Tab1d = ([f64; 4], [f64; 4], [f64; 3]);

/// Reference value and curl of one tensor function from 1d tables.
pub(crate) fn local_value_curl(
    tabs: &[Tab1d; 3],
    c: usize,
    local: [usize; 3],
) -> ([f64; 3], [f64; 3]) {
    // f = product over directions; D-type along c, N-type elsewhere.
    let val = |d: usize| {
        if d == c {
            tabs[d].2[local[d]]
        } else {
            tabs[d].0[local[d]]
        }
    };
    let der = |d: usize| tabs[d].1[local[d]];
    let (v0, v1, v2) = (val(0), val(1), val(2));
    let f = v0 * v1 * v2;
    let mut value = [0.0; 3];
    value[c] = f;
    // Partial derivatives of f along the two N-type directions.
    let curl = match c {
        0 => [0.0, v0 * v1 * der(2), -v0 * der(1) * v2],
        1 => [-v0 * v1 * der(2), 0.0, der(0) * v1 * v2],
        _ => [v0 * der(1) * v2, -der(0) * v1 * v2, 0.0],
    };
    (value, curl)
}

pub fn make_spaces(degree: usize, divs: usize) -> Result<(ScalarSpace, CurlSpace), SplineError> {
    if !(1..=3).contains(&degree) {
        return Err(SplineError::UnsupportedDegree(degree));
    }
    if divs == 0 {
        return Err(SplineError::NoCells);
    }
    let full = KnotVector::open_uniform(degree, divs);
    let reduced = full.reduced();
    Ok((
        ScalarSpace {
            knots: full.clone(),
        },
        CurlSpace { full, reduced },
    ))
}
