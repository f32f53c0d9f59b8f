//! Curl-curl stiffness matrices and loads per patch and per subdomain, the
//! manufactured test problem, Dirichlet lifting, the monolithic reference
//! solve and the flux density error.

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{MultipatchTopology, PatchGeometry, Point, SubdomainLayout};
use crate::par::Execution;
use crate::sparse::{Cholesky, CsrMatrix, FactorError};
use crate::splines::{
    cell_rule, for_each_cell_function, gauss_legendre, local_value_curl, ControlGraph, CurlSpace,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error("patch {patch}: non-positive Jacobian determinant {det:e} at a quadrature point")]
    SingularJacobian { patch: usize, det: f64 },
    #[error("subdomain {subdomain}: edge {edge} of patch {patch} has no local index")]
    DofMapMismatch {
        subdomain: usize,
        patch: usize,
        edge: usize,
    },
    #[error("gauged monolithic system is singular: {0}")]
    SingularAfterGauge(FactorError),
    #[error("boundary projection failed: {0}")]
    Lifting(FactorError),
}

/// Closed-form magnetostatic solution on `(0, 3)^3` with unit reluctivity:
/// `A = (cos y cos z sin x, -2 cos x cos z sin y, cos x cos y sin z)`,
/// `B = curl A`, `J = curl curl A = 3 A`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManufacturedCase {
    #[default]
    Trigonometric,
    /// Everything zero.
    Zero,
}

impl ManufacturedCase {
    pub fn potential(self, x: Point) -> Point {
        match self {
            ManufacturedCase::Zero => [0.0; 3],
            ManufacturedCase::Trigonometric => {
                let (sx, cx) = x[0].sin_cos();
                let (sy, cy) = x[1].sin_cos();
                let (sz, cz) = x[2].sin_cos();
                [cy * cz * sx, -2.0 * cx * cz * sy, cx * cy * sz]
            }
        }
    }

    pub fn flux(self, x: Point) -> Point {
        match self {
            ManufacturedCase::Zero => [0.0; 3],
            ManufacturedCase::Trigonometric => {
                let (sx, cx) = x[0].sin_cos();
                let (sy, _) = x[1].sin_cos();
                let (sz, cz) = x[2].sin_cos();
                [-3.0 * cx * sy * sz, 0.0, 3.0 * sx * sy * cz]
            }
        }
    }

    pub fn source(self, x: Point) -> Point {
        self.potential(x).map(|a| 3.0 * a)
    }

    /// `||B||^2` over `(0, 3)^3` from one-dimensional integrals.
    pub fn flux_norm_sq_closed_form(self) -> f64 {
        match self {
            ManufacturedCase::Zero => 0.0,
            ManufacturedCase::Trigonometric => {
                let sin2 = 1.5 - 6f64.sin() / 4.0;
                let cos2 = 1.5 + 6f64.sin() / 4.0;
                18.0 * cos2 * sin2 * sin2
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSystem {
    pub matrix: CsrMatrix,
    pub load: Vec<f64>,
}

/// Sparsity of a patch matrix: two functions couple when their supports
/// share a cell.
pub fn patch_pattern(space: &CurlSpace) -> CsrMatrix {
    let p = space.degree();
    let divs = space.divs();
    let n = space.n();
    let support = |reduced: bool, i: usize| {
        let deg = if reduced { p - 1 } else { p };
        (i.saturating_sub(deg), i.min(divs - 1))
    };
    let mut rows = Vec::with_capacity(space.dim());
    for dof in 0..space.dim() {
        let (c, idx) = space.multi_index(dof);
        let mut cols = Vec::new();
        for c2 in 0..3 {
            let dims = space.component_dims(c2);
            let range = |d: usize| {
                let (lo, hi) = support(d == c, idx[d]);
                let reduced_col = d == c2;
                let top = hi + if reduced_col { p - 1 } else { p };
                let last = if reduced_col { n - 2 } else { n - 1 };
                lo..=top.min(last)
            };
            debug_assert_eq!(dims[c2], n - 1);
            for k in range(2) {
                for j in range(1) {
                    for i in range(0) {
                        cols.push(space.index(c2, [i, j, k]));
                    }
                }
            }
        }
        rows.push(cols);
    }
    CsrMatrix::from_pattern(space.dim(), rows)
}

enum Integrand<'a> {
    /// `nu (curl u, curl v)` and `(f, v)`.
    CurlCurl {
        nu: f64,
        source: &'a (dyn Fn(Point) -> Point + Sync),
    },
    /// `(u, v)` and `(f, v)`.
    Mass {
        source: &'a (dyn Fn(Point) -> Point + Sync),
    },
}

fn integrate_patch(
    geom: &PatchGeometry,
    patch: usize,
    space: &CurlSpace,
    template: &CsrMatrix,
    integrand: Integrand<'_>,
) -> Result<PatchSystem, AssemblyError> {
    let p = space.degree();
    let divs = space.divs();
    let nf = space.functions_per_cell();
    let (gx, gw) = gauss_legendre(p + 1);
    let nq = gx.len().pow(3);
    let mut matrix = template.clone();
    let mut load = vec![0.0; space.dim()];
    let mut dofs = Vec::with_capacity(nf);
    let mut funcs = Vec::with_capacity(nf);
    let mut forms = DMatrix::<f64>::zeros(3 * nq, nf);
    let mut weighted = DMatrix::<f64>::zeros(3 * nq, nf);
    let h = 1.0 / divs as f64;
    for cz in 0..divs {
        for cy in 0..divs {
            for cx in 0..divs {
                let cells = [cx, cy, cz];
                dofs.clear();
                funcs.clear();
                for_each_cell_function(space, cells, |c, local, dof| {
                    funcs.push((c, local));
                    dofs.push(dof);
                });
                let mut local_load = vec![0.0; nf];
                let mut q = 0;
                for k in 0..gx.len() {
                    for j in 0..gx.len() {
                        for i in 0..gx.len() {
                            let u = [
                                (cx as f64 + gx[i]) * h,
                                (cy as f64 + gx[j]) * h,
                                (cz as f64 + gx[k]) * h,
                            ];
                            let wt = gw[i] * gw[j] * gw[k] * h * h * h;
                            let jac = geom.jacobian(u);
                            let det = jac.determinant();
                            if !(det > 0.0) {
                                return Err(AssemblyError::SingularJacobian { patch, det });
                            }
                            let jinv = jac.try_inverse().expect("positive determinant");
                            let tabs = [0, 1, 2].map(|d| space.tabulate_1d(cells[d], u[d]));
                            let (metric, f) = match &integrand {
                                Integrand::CurlCurl { nu, source } => {
                                    (jac.transpose() * jac * (nu * wt / det), source(geom.map(u)))
                                }
                                Integrand::Mass { source } => {
                                    (jinv * jinv.transpose() * (wt * det), source(geom.map(u)))
                                }
                            };
                            let g = jinv * Vector3::from(f) * (wt * det);
                            for (a, &(c, local)) in funcs.iter().enumerate() {
                                let (value, curl) = local_value_curl(&tabs, c, local);
                                let form = match integrand {
                                    Integrand::CurlCurl { .. } => Vector3::from(curl),
                                    Integrand::Mass { .. } => Vector3::from(value),
                                };
                                let mf = metric * form;
                                for r in 0..3 {
                                    forms[(3 * q + r, a)] = form[r];
                                    weighted[(3 * q + r, a)] = mf[r];
                                }
                                local_load[a] += value[c] * g[c];
                            }
                            q += 1;
                        }
                    }
                }
                let elem = forms.tr_mul(&weighted);
                for (a, &da) in dofs.iter().enumerate() {
                    for (b, &db) in dofs.iter().enumerate() {
                        matrix.add(da, db, elem[(a, b)]);
                    }
                    load[da] += local_load[a];
                }
            }
        }
    }
    Ok(PatchSystem { matrix, load })
}

/// Stiffness matrix and load of one patch, with covariant Piola mapping of
/// the basis and the patch reluctivity.
pub fn assemble_patch(
    geom: &PatchGeometry,
    patch: usize,
    space: &CurlSpace,
    template: &CsrMatrix,
    source: &(dyn Fn(Point) -> Point + Sync),
) -> Result<PatchSystem, AssemblyError> {
    integrate_patch(
        geom,
        patch,
        space,
        template,
        Integrand::CurlCurl {
            nu: geom.nu,
            source,
        },
    )
}

/// Mass matrix and `(f, v)` on one patch.
pub fn assemble_patch_mass(
    geom: &PatchGeometry,
    patch: usize,
    space: &CurlSpace,
    template: &CsrMatrix,
    source: &(dyn Fn(Point) -> Point + Sync),
) -> Result<PatchSystem, AssemblyError> {
    integrate_patch(geom, patch, space, template, Integrand::Mass { source })
}

pub fn assemble_patches(
    topology: &MultipatchTopology,
    space: &CurlSpace,
    case: ManufacturedCase,
    exec: Execution,
) -> Result<Vec<PatchSystem>, AssemblyError> {
    let template = patch_pattern(space);
    let source = move |x: Point| case.source(x);
    exec.try_map_range(topology.n_patches(), |j| {
        assemble_patch(&topology.patches[j], j, space, &template, &source)
    })
}

/// A subdomain matrix over the subdomain's edges (sorted global ids).
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSystem {
    pub subdomain: usize,
    pub edges: Vec<usize>,
    pub matrix: CsrMatrix,
    pub load: Vec<f64>,
}

impl LocalSystem {
    pub fn local_of(&self, edge: usize) -> Option<usize> {
        self.edges.binary_search(&edge).ok()
    }
}

/// Sums the patch systems of subdomain `k` over its glued edge numbering.
pub fn assemble_subdomain(
    graph: &ControlGraph,
    patches: &[PatchSystem],
    layout: &SubdomainLayout,
    k: usize,
    edges: &[usize],
) -> Result<LocalSystem, AssemblyError> {
    let n = edges.len();
    let mut trips = Vec::new();
    let mut load = vec![0.0; n];
    for j in layout.patches_of(k) {
        let map: Vec<(usize, f64)> = graph.patch_edges[j]
            .iter()
            .map(|le| {
                edges
                    .binary_search(&le.edge)
                    .map(|i| (i, f64::from(le.sign)))
                    .map_err(|_| AssemblyError::DofMapMismatch {
                        subdomain: k,
                        patch: j,
                        edge: le.edge,
                    })
            })
            .collect::<Result<_, _>>()?;
        let sys = &patches[j];
        for (a, &(ia, sa)) in map.iter().enumerate() {
            for (b, v) in sys.matrix.row(a) {
                let (ib, sb) = map[b];
                trips.push((ia, ib, sa * sb * v));
            }
            load[ia] += sa * sys.load[a];
        }
    }
    Ok(LocalSystem {
        subdomain: k,
        edges: edges.to_vec(),
        matrix: CsrMatrix::from_triplets(n, n, trips),
        load,
    })
}

pub fn assemble_subdomains(
    graph: &ControlGraph,
    patches: &[PatchSystem],
    layout: &SubdomainLayout,
    subdomain_edges: &[Vec<usize>],
    exec: Execution,
) -> Result<Vec<LocalSystem>, AssemblyError> {
    exec.try_map_range(layout.n_sub, |k| {
        assemble_subdomain(graph, patches, layout, k, &subdomain_edges[k])
    })
}

/// The fully assembled system over all edges, summing patches in index order.
pub fn assemble_global(graph: &ControlGraph, patches: &[PatchSystem]) -> LocalSystem {
    let all: Vec<usize> = (0..graph.n_edges()).collect();
    let layout = SubdomainLayout::single(patches.len());
    assemble_subdomain(graph, patches, &layout, 0, &all).expect("every edge is global")
}

/// Coefficients of the Dirichlet edges from the boundary `L2` projection of
/// the tangential trace `n x field`. Non-Dirichlet entries are zero.
pub fn dirichlet_lifting(
    topology: &MultipatchTopology,
    graph: &ControlGraph,
    field: &(dyn Fn(Point) -> Point + Sync),
) -> Result<Vec<f64>, AssemblyError> {
    let space = &graph.space;
    let dir_edges = graph.dirichlet_edges();
    let mut row_of = vec![usize::MAX; graph.n_edges()];
    for (i, &e) in dir_edges.iter().enumerate() {
        row_of[e] = i;
    }
    let p = space.degree();
    let divs = space.divs();
    let (gx, gw) = gauss_legendre(p + 2);
    let mut trips = Vec::new();
    let mut rhs = vec![0.0; dir_edges.len()];
    for f in &topology.boundary {
        let geom = &topology.patches[f.patch];
        let mut on_side = vec![false; space.dim()];
        for dof in graph.local_edges_on_side(f.side) {
            on_side[dof] = true;
        }
        let [t0, t1] = f.side.tangent_axes();
        let normal_coord = if f.side.is_high() { 1.0 } else { 0.0 };
        let h = 1.0 / divs as f64;
        for c1 in 0..divs {
            for c0 in 0..divs {
                for (&x1, &w1) in gx.iter().zip(&gw) {
                    for (&x0, &w0) in gx.iter().zip(&gw) {
                        let mut u = [0.0; 3];
                        u[f.side.axis()] = normal_coord;
                        u[t0] = (c0 as f64 + x0) * h;
                        u[t1] = (c1 as f64 + x1) * h;
                        let jac = geom.jacobian(u);
                        let jinv_t = jac.try_inverse().expect("regular patch").transpose();
                        let cross = jac.column(t0).cross(&jac.column(t1));
                        let area = cross.norm();
                        let n = cross / area;
                        let wt = w0 * w1 * h * h * area;
                        let target = n.cross(&Vector3::from(field(geom.map(u))));
                        let traces: Vec<(usize, f64, Vector3<f64>)> = space
                            .eval(u)
                            .into_iter()
                            .filter(|s| on_side[s.dof])
                            .map(|s| {
                                let le = graph.patch_edges[f.patch][s.dof];
                                let t = n.cross(&(jinv_t * Vector3::from(s.value)));
                                (row_of[le.edge], f64::from(le.sign), t)
                            })
                            .collect();
                        for &(ra, sa, ta) in &traces {
                            rhs[ra] += wt * sa * ta.dot(&target);
                            for &(rb, sb, tb) in &traces {
                                trips.push((ra, rb, wt * sa * sb * ta.dot(&tb)));
                            }
                        }
                    }
                }
            }
        }
    }
    let mass = CsrMatrix::from_triplets(dir_edges.len(), dir_edges.len(), trips);
    let chol = Cholesky::factor(&mass).map_err(AssemblyError::Lifting)?;
    let values = chol.solve(&rhs);
    let mut out = vec![0.0; graph.n_edges()];
    for (i, &e) in dir_edges.iter().enumerate() {
        out[e] = values[i];
    }
    Ok(out)
}

/// Solves the gauged global system: Dirichlet edges take the lifted values,
/// non-Dirichlet tree edges are zero, the cotree edges are unknowns.
pub fn solve_monolithic(
    global: &LocalSystem,
    graph: &ControlGraph,
    in_tree: &[bool],
    lifting: &[f64],
) -> Result<Vec<f64>, AssemblyError> {
    let n = graph.n_edges();
    let unknowns: Vec<usize> = (0..n)
        .filter(|&e| !graph.edge_dirichlet[e] && !in_tree[e])
        .collect();
    let mut col_map = vec![None; n];
    for (i, &e) in unknowns.iter().enumerate() {
        col_map[e] = Some(i);
    }
    let kuu = global.matrix.submatrix(&unknowns, &col_map, unknowns.len());
    let kg = global.matrix.mul_vec(lifting);
    let rhs: Vec<f64> = unknowns.iter().map(|&e| global.load[e] - kg[e]).collect();
    let chol = Cholesky::factor(&kuu).map_err(AssemblyError::SingularAfterGauge)?;
    let x = chol.solve(&rhs);
    let mut a = lifting.to_vec();
    for (i, &e) in unknowns.iter().enumerate() {
        a[e] = x[i];
    }
    Ok(a)
}

/// Patch-local coefficients from a lookup of glued edge values.
pub fn local_coefficients(
    graph: &ControlGraph,
    patch: usize,
    value: impl Fn(usize) -> f64,
) -> Vec<f64> {
    graph.patch_edges[patch]
        .iter()
        .map(|le| f64::from(le.sign) * value(le.edge))
        .collect()
}

/// `int |reference - curl u_h|^2` over one patch with `nq` Gauss points per
/// direction and cell.
pub fn patch_flux_error_sq(
    geom: &PatchGeometry,
    space: &CurlSpace,
    coeffs: &[f64],
    reference: &(dyn Fn(Point) -> Point + Sync),
    nq: usize,
) -> f64 {
    let divs = space.divs();
    let h = 1.0 / divs as f64;
    let mut total = 0.0;
    for cz in 0..divs {
        for cy in 0..divs {
            for cx in 0..divs {
                let cells = [cx, cy, cz];
                let lo = [cx as f64 * h, cy as f64 * h, cz as f64 * h];
                let hi = [lo[0] + h, lo[1] + h, lo[2] + h];
                for (u, wt) in cell_rule(nq, lo, hi) {
                    let jac = geom.jacobian(u);
                    let det = jac.determinant();
                    let tabs = [0, 1, 2].map(|d| space.tabulate_1d(cells[d], u[d]));
                    let mut curl_ref = Vector3::zeros();
                    for_each_cell_function(space, cells, |c, local, dof| {
                        if coeffs[dof] != 0.0 {
                            let (_, curl) = local_value_curl(&tabs, c, local);
                            curl_ref += Vector3::from(curl) * coeffs[dof];
                        }
                    });
                    let bh = jac * curl_ref / det;
                    let diff = Vector3::from(reference(geom.map(u))) - bh;
                    total += diff.norm_squared() * wt * det;
                }
            }
        }
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorNorm {
    pub value: f64,
    pub per_subdomain_sq: Vec<f64>,
}

/// Flux density error of per-subdomain solutions: subdomain `k` provides
/// values on its sorted edge list `edges[k]`.
pub fn error_norm(
    topology: &MultipatchTopology,
    graph: &ControlGraph,
    layout: &SubdomainLayout,
    edges: &[Vec<usize>],
    coeffs: &[Vec<f64>],
    reference: &(dyn Fn(Point) -> Point + Sync),
    exec: Execution,
) -> ErrorNorm {
    let nq = graph.space.degree() + 2;
    let per_patch = exec.map_range(topology.n_patches(), |j| {
        let k = layout.subdomain_of(j);
        let local = local_coefficients(graph, j, |e| {
            edges[k].binary_search(&e).map_or(0.0, |i| coeffs[k][i])
        });
        patch_flux_error_sq(&topology.patches[j], &graph.space, &local, reference, nq)
    });
    let mut per_subdomain_sq = vec![0.0; layout.n_sub];
    for (j, v) in per_patch.into_iter().enumerate() {
        per_subdomain_sq[layout.subdomain_of(j)] += v;
    }
    let value = per_subdomain_sq.iter().sum::<f64>().sqrt();
    ErrorNorm {
        value,
        per_subdomain_sq,
    }
}

/// `||B||^2` over all patches by tensor Gauss quadrature, `nq` points per
/// direction on each patch.
pub fn flux_norm_sq_quadrature(
    topology: &MultipatchTopology,
    case: ManufacturedCase,
    nq: usize,
) -> f64 {
    topology
        .patches
        .iter()
        .map(|geom| {
            cell_rule(nq, [0.0; 3], [1.0; 3])
                .into_iter()
                .map(|(u, wt)| {
                    let det = geom.jacobian(u).determinant();
                    let b = case.flux(geom.map(u));
                    (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]) * wt * det
                })
                .sum::<f64>()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauge::{classify_edges, gauge, kruskal_tree};
    use crate::geometry::{
        box_grid, build_facets, build_topology, cube27_three_part_layout, DirichletGranularity,
    };
    use crate::splines::{control_graph, discrete_gradient, make_spaces, tag_graph};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cube27() -> MultipatchTopology {
        build_topology(box_grid([3, 3, 3], [3.0; 3]), 1e-9).unwrap()
    }

    fn unit() -> MultipatchTopology {
        build_topology(
            vec![PatchGeometry::axis_aligned([0.0; 3], [1.0; 3], 1.0)],
            1e-9,
        )
        .unwrap()
    }

    fn skewed() -> PatchGeometry {
        let mut g = PatchGeometry::axis_aligned([0.0; 3], [1.0; 3], 2.0);
        g.corners[7] = [1.2, 1.1, 1.3];
        g.corners[1] = [0.9, 0.1, -0.1];
        g
    }

    fn zero_source(_: Point) -> Point {
        [0.0; 3]
    }

    /// Derivative table `d[i][j] = d A_i / d x_j`, written out by hand.
    fn potential_jacobian(x: Point) -> [[f64; 3]; 3] {
        let (sx, cx) = x[0].sin_cos();
        let (sy, cy) = x[1].sin_cos();
        let (sz, cz) = x[2].sin_cos();
        [
            [cy * cz * cx, -sy * cz * sx, -cy * sz * sx],
            [2.0 * sx * cz * sy, -2.0 * cx * cz * cy, 2.0 * cx * sz * sy],
            [-sx * cy * sz, -cx * sy * sz, cx * cy * cz],
        ]
    }

    fn flux_jacobian(x: Point) -> [[f64; 3]; 3] {
        let (sx, cx) = x[0].sin_cos();
        let (sy, cy) = x[1].sin_cos();
        let (sz, cz) = x[2].sin_cos();
        [
            [3.0 * sx * sy * sz, -3.0 * cx * cy * sz, -3.0 * cx * sy * cz],
            [0.0, 0.0, 0.0],
            [3.0 * cx * sy * cz, 3.0 * sx * cy * cz, -3.0 * sx * sy * sz],
        ]
    }

    fn curl_of(d: [[f64; 3]; 3]) -> [f64; 3] {
        [d[2][1] - d[1][2], d[0][2] - d[2][0], d[1][0] - d[0][1]]
    }

    #[test]
    fn manufactured_identities() {
        let case = ManufacturedCase::Trigonometric;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x = [0, 1, 2].map(|_| rng.random_range(0.0..3.0));
            let da = potential_jacobian(x);
            assert!((da[0][0] + da[1][1] + da[2][2]).abs() < 1e-12);
            let b = curl_of(da);
            let bc = case.flux(x);
            let j = curl_of(flux_jacobian(x));
            let js = case.source(x);
            let a = case.potential(x);
            for i in 0..3 {
                assert!((b[i] - bc[i]).abs() < 1e-12);
                assert!((j[i] - js[i]).abs() < 1e-12);
                assert!((js[i] - 3.0 * a[i]).abs() < 1e-12);
            }
            // the hand-written derivatives against central differences
            let h = 1e-5;
            for k in 0..3 {
                let mut xp = x;
                let mut xm = x;
                xp[k] += h;
                xm[k] -= h;
                let (ap, am) = (case.potential(xp), case.potential(xm));
                for i in 0..3 {
                    assert!(((ap[i] - am[i]) / (2.0 * h) - da[i][k]).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn flux_norm_closed_form() {
        let case = ManufacturedCase::Trigonometric;
        let exact = case.flux_norm_sq_closed_form();
        assert!((exact.sqrt() - 7.965).abs() < 1e-3);
        let quad = flux_norm_sq_quadrature(&cube27(), case, 14);
        assert!((quad - exact).abs() < 1e-10 * exact);
    }

    #[test]
    fn pattern_holds_all_element_couplings() {
        for p in 1..=3 {
            let (_, space) = make_spaces(p, 3).unwrap();
            let pattern = patch_pattern(&space);
            let mut count = vec![vec![false; space.dim()]; space.dim()];
            for c in 0..27 {
                let cells = [c % 3, (c / 3) % 3, c / 9];
                let mut dofs = Vec::new();
                for_each_cell_function(&space, cells, |_, _, d| dofs.push(d));
                for &a in &dofs {
                    for &b in &dofs {
                        count[a][b] = true;
                    }
                }
            }
            let mut expected = 0;
            for a in 0..space.dim() {
                for b in 0..space.dim() {
                    if count[a][b] {
                        expected += 1;
                        assert!(pattern.row(a).any(|(j, _)| j == b));
                    }
                }
            }
            assert_eq!(pattern.nnz(), expected, "p = {p}");
        }
    }

    #[test]
    fn patch_matrix_is_symmetric_psd_with_gradient_kernel() {
        let topo = unit();
        for p in 1..=3 {
            let (s, space) = make_spaces(p, 2).unwrap();
            let graph = control_graph(&topo, &s, &space).unwrap();
            for geom in [topo.patches[0].clone(), skewed()] {
                let sys =
                    assemble_patch(&geom, 0, &space, &patch_pattern(&space), &zero_source).unwrap();
                assert!(sys.load.iter().all(|&v| v == 0.0));
                let k = &sys.matrix;
                let scale = k.max_abs();
                assert!(k.asymmetry() <= 1e-12 * scale);
                let grad = discrete_gradient(&graph);
                let mut rng = ChaCha8Rng::seed_from_u64(p as u64);
                let phi: Vec<f64> = (0..graph.n_vertices)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect();
                let a_glob = grad.mul_vec(&phi);
                let a = local_coefficients(&graph, 0, |e| a_glob[e]);
                let ka = k.mul_vec(&a);
                assert!(crate::sparse::max_abs(&ka) <= 1e-10 * scale, "p = {p}");
                let eig = k.to_dense().symmetric_eigenvalues();
                assert!(eig.min() >= -1e-10 * scale);
            }
        }
    }

    #[test]
    fn energy_of_projection_approaches_exact_energy() {
        // One patch (0, 1)^3 of the manufactured field, L2 projection of A.
        let topo = unit();
        let case = ManufacturedCase::Trigonometric;
        let exact = {
            // dense quadrature oracle with many more points than assembly
            let mut e = 0.0;
            for (u, wt) in cell_rule(12, [0.0; 3], [1.0; 3]) {
                let b = case.flux(u);
                e += (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]) * wt;
            }
            e
        };
        let mut errs = Vec::new();
        for divs in [2, 4] {
            let (_, space) = make_spaces(2, divs).unwrap();
            let tpl = patch_pattern(&space);
            let pot = move |x: Point| case.potential(x);
            let mass = assemble_patch_mass(&topo.patches[0], 0, &space, &tpl, &pot).unwrap();
            let a = Cholesky::factor(&mass.matrix).unwrap().solve(&mass.load);
            let k = assemble_patch(&topo.patches[0], 0, &space, &tpl, &zero_source).unwrap();
            let energy = crate::sparse::dot(&a, &k.matrix.mul_vec(&a));
            errs.push((energy - exact).abs() / exact);
        }
        assert!(errs[1] < 0.02, "{errs:?}");
        assert!(errs[1] < errs[0] / 3.0, "{errs:?}");
    }

    struct Pipeline {
        topo: MultipatchTopology,
        graph: ControlGraph,
        tags: crate::splines::GraphTags,
        layout: SubdomainLayout,
    }

    fn pipeline(layout: SubdomainLayout, p: usize, divs: usize) -> Pipeline {
        let topo = cube27();
        let facets = build_facets(&topo, &layout, DirichletGranularity::PerPatchFacet).unwrap();
        let (s, w) = make_spaces(p, divs).unwrap();
        let graph = control_graph(&topo, &s, &w).unwrap();
        let tags = tag_graph(&graph, &layout, &facets);
        Pipeline {
            topo,
            graph,
            tags,
            layout,
        }
    }

    #[test]
    fn subdomain_assembly_glues_patches() {
        let bar = build_topology(box_grid([2, 1, 1], [2.0, 1.0, 1.0]), 1e-9).unwrap();
        let (s, w) = make_spaces(1, 1).unwrap();
        let graph = control_graph(&bar, &s, &w).unwrap();
        let patches: Vec<PatchSystem> = (0..2)
            .map(|j| {
                assemble_patch(&bar.patches[j], j, &w, &patch_pattern(&w), &zero_source).unwrap()
            })
            .collect();
        let layout = SubdomainLayout::single(2);
        let all: Vec<usize> = (0..graph.n_edges()).collect();
        let sys = assemble_subdomain(&graph, &patches, &layout, 0, &all).unwrap();
        assert_eq!(sys.matrix.nrows(), 20);
        // single-patch subdomain reproduces the patch system up to signs
        let split = SubdomainLayout::new(vec![0, 1]).unwrap();
        let mut e0: Vec<usize> = graph.patch_edges[0].iter().map(|le| le.edge).collect();
        e0.sort_unstable();
        let s0 = assemble_subdomain(&graph, &patches, &split, 0, &e0).unwrap();
        for (a, la) in graph.patch_edges[0].iter().enumerate() {
            for (b, lb) in graph.patch_edges[0].iter().enumerate() {
                let ia = s0.local_of(la.edge).unwrap();
                let ib = s0.local_of(lb.edge).unwrap();
                let expected = f64::from(la.sign * lb.sign) * patches[0].matrix.get(a, b);
                assert_eq!(s0.matrix.get(ia, ib), expected);
            }
        }
        // missing edges are reported
        assert!(matches!(
            assemble_subdomain(&graph, &patches, &split, 1, &e0),
            Err(AssemblyError::DofMapMismatch { subdomain: 1, .. })
        ));
    }

    #[test]
    fn diagonal_counts_contributing_patches() {
        // With unit mass-like entries, every diagonal entry of a glued sum
        // counts the patches of the subdomain that contain the edge.
        let pl = pipeline(cube27_three_part_layout(), 1, 1);
        let ones: Vec<PatchSystem> = (0..27)
            .map(|_| {
                let n = pl.graph.space.dim();
                let rows = (0..n).map(|i| vec![(i, 1.0)]).collect();
                PatchSystem {
                    matrix: CsrMatrix::from_sorted_rows(n, rows),
                    load: vec![1.0; n],
                }
            })
            .collect();
        let dec = gauge(&pl.graph, &pl.tags, &pl.layout).unwrap();
        let edges: Vec<Vec<usize>> = dec.subdomains.iter().map(|d| d.edges.clone()).collect();
        let locals =
            assemble_subdomains(&pl.graph, &ones, &pl.layout, &edges, Execution::Sequential)
                .unwrap();
        for (k, sys) in locals.iter().enumerate() {
            for (i, &e) in sys.edges.iter().enumerate() {
                let expected = pl.graph.edge_patches[e]
                    .iter()
                    .filter(|&&j| pl.layout.subdomain_of(j) == k)
                    .count();
                assert_eq!(sys.matrix.get(i, i), expected as f64);
                assert_eq!(sys.load[i].abs(), expected as f64);
            }
        }
    }

    #[test]
    fn global_matrix_annihilates_gradients() {
        let pl = pipeline(SubdomainLayout::single(27), 2, 2);
        let patches = assemble_patches(
            &pl.topo,
            &pl.graph.space,
            ManufacturedCase::Trigonometric,
            Execution::Parallel,
        )
        .unwrap();
        let global = assemble_global(&pl.graph, &patches);
        let grad = discrete_gradient(&pl.graph);
        let phi: Vec<f64> = pl
            .graph
            .vertex_points
            .iter()
            .map(|x| x[0] * x[1] - x[2].powi(2))
            .collect();
        let ka = global.matrix.mul_vec(&grad.mul_vec(&phi));
        assert!(crate::sparse::max_abs(&ka) <= 1e-10 * global.matrix.max_abs());
        assert!(global.matrix.asymmetry() <= 1e-12 * global.matrix.max_abs());
    }

    #[test]
    fn lifting_reproduces_discrete_gradients() {
        // The tangential trace of grad(phi) for linear phi lies in the
        // boundary space, so the projection returns its exact coefficients.
        let topo = unit();
        let (s, w) = make_spaces(2, 2).unwrap();
        let graph = control_graph(&topo, &s, &w).unwrap();
        let field = |_: Point| [1.0, -2.0, 0.5];
        let lift = dirichlet_lifting(&topo, &graph, &field).unwrap();
        for e in graph.dirichlet_edges() {
            let [a, b] = graph.edges[e];
            let phi = |x: Point| x[0] - 2.0 * x[1] + 0.5 * x[2];
            let expected = phi(graph.vertex_points[b]) - phi(graph.vertex_points[a]);
            assert!((lift[e] - expected).abs() < 1e-12, "edge {e}");
        }
    }

    #[test]
    fn lifting_matches_dense_least_squares() {
        let topo = unit();
        let (s, w) = make_spaces(1, 2).unwrap();
        let graph = control_graph(&topo, &s, &w).unwrap();
        let case = ManufacturedCase::Trigonometric;
        let field = move |x: Point| case.potential(x);
        let lift = dirichlet_lifting(&topo, &graph, &field).unwrap();
        // Oracle: sample n x (A_h - A) on a fine grid of midpoint cells of the
        // six faces and minimize the discrete least-squares functional.
        let dir = graph.dirichlet_edges();
        let m = 40;
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for side in crate::geometry::Side::ALL {
            let [t0, t1] = side.tangent_axes();
            let mut normal = [0.0; 3];
            normal[side.axis()] = if side.is_high() { 1.0 } else { -1.0 };
            for i in 0..m {
                for j in 0..m {
                    let mut u = [0.0; 3];
                    u[side.axis()] = if side.is_high() { 1.0 } else { 0.0 };
                    u[t0] = (i as f64 + 0.5) / m as f64;
                    u[t1] = (j as f64 + 0.5) / m as f64;
                    let samples = w.eval(u);
                    let a = Vector3::from(field(u));
                    let n = Vector3::from(normal);
                    let target = n.cross(&a);
                    for r in 0..3 {
                        let mut row = vec![0.0; dir.len()];
                        for smp in &samples {
                            let le = graph.patch_edges[0][smp.dof];
                            if let Ok(pos) = dir.binary_search(&le.edge) {
                                let t = n.cross(&Vector3::from(smp.value));
                                row[pos] += f64::from(le.sign) * t[r];
                            }
                        }
                        rows.push(row);
                        rhs.push(target[r]);
                    }
                }
            }
        }
        let a = DMatrix::from_fn(rows.len(), dir.len(), |i, j| rows[i][j]);
        let b = nalgebra::DVector::from_vec(rhs);
        let x = (a.transpose() * &a)
            .cholesky()
            .unwrap()
            .solve(&(a.transpose() * b));
        for (i, &e) in dir.iter().enumerate() {
            // midpoint sampling converges at second order in 1/m
            assert!(
                (x[i] - lift[e]).abs() < 2e-3,
                "edge {e}: {} vs {}",
                x[i],
                lift[e]
            );
        }
    }

    #[test]
    fn all_boundary_single_cell_has_empty_reduced_system() {
        let topo = unit();
        let (s, w) = make_spaces(1, 1).unwrap();
        let graph = control_graph(&topo, &s, &w).unwrap();
        assert_eq!(graph.dirichlet_edges().len(), graph.n_edges());
        let patches =
            vec![
                assemble_patch(&topo.patches[0], 0, &w, &patch_pattern(&w), &zero_source).unwrap(),
            ];
        let global = assemble_global(&graph, &patches);
        let tree = vec![false; graph.n_edges()];
        let lift = vec![0.5; graph.n_edges()];
        assert_eq!(
            solve_monolithic(&global, &graph, &tree, &lift).unwrap(),
            lift
        );
    }

    #[test]
    fn zero_problem_has_zero_solution() {
        let pl = pipeline(SubdomainLayout::single(27), 1, 2);
        let patches = assemble_patches(
            &pl.topo,
            &pl.graph.space,
            ManufacturedCase::Zero,
            Execution::Sequential,
        )
        .unwrap();
        let global = assemble_global(&pl.graph, &patches);
        let w = classify_edges(&pl.graph, &pl.tags).unwrap();
        let tree = kruskal_tree(&pl.graph, &w).unwrap();
        let lift = dirichlet_lifting(&pl.topo, &pl.graph, &|x| {
            ManufacturedCase::Zero.potential(x)
        })
        .unwrap();
        let a = solve_monolithic(&global, &pl.graph, &tree, &lift).unwrap();
        assert!(a.iter().all(|&v| v == 0.0));
    }

    fn monolithic_error(p: usize, divs: usize) -> (f64, f64) {
        let case = ManufacturedCase::Trigonometric;
        let pl = pipeline(SubdomainLayout::single(27), p, divs);
        let patches =
            assemble_patches(&pl.topo, &pl.graph.space, case, Execution::Parallel).unwrap();
        let global = assemble_global(&pl.graph, &patches);
        let w = classify_edges(&pl.graph, &pl.tags).unwrap();
        let tree = kruskal_tree(&pl.graph, &w).unwrap();
        let lift = dirichlet_lifting(&pl.topo, &pl.graph, &move |x| case.potential(x)).unwrap();
        let a = solve_monolithic(&global, &pl.graph, &tree, &lift).unwrap();
        // Galerkin surrogate on the unknown rows: j^T a = a^T K a restricted
        let ka = global.matrix.mul_vec(&a);
        let unknown = |e: usize| !pl.graph.edge_dirichlet[e] && !tree[e];
        let res = (0..a.len())
            .filter(|&e| unknown(e))
            .map(|e| (ka[e] - global.load[e]).abs())
            .fold(0.0, f64::max);
        assert!(res < 1e-9 * crate::sparse::max_abs(&global.load));
        let all: Vec<usize> = (0..pl.graph.n_edges()).collect();
        let err = error_norm(
            &pl.topo,
            &pl.graph,
            &pl.layout,
            &[all],
            &[a],
            &move |x| case.flux(x),
            Execution::Parallel,
        );
        (err.value, err.per_subdomain_sq[0])
    }

    #[test]
    fn monolithic_error_converges() {
        let (e2, _) = monolithic_error(1, 2);
        let (e4, _) = monolithic_error(1, 4);
        let eoc = (e2 / e4).log2();
        assert!((0.7..1.4).contains(&eoc), "eoc {eoc}");
        let (f2, _) = monolithic_error(2, 2);
        let (f4, _) = monolithic_error(2, 4);
        let eoc2 = (f2 / f4).log2();
        assert!((1.6..2.5).contains(&eoc2), "eoc {eoc2}");
    }

    #[test]
    fn zero_field_error_is_flux_norm_and_additive() {
        let case = ManufacturedCase::Trigonometric;
        let pl = pipeline(cube27_three_part_layout(), 1, 2);
        let dec = gauge(&pl.graph, &pl.tags, &pl.layout).unwrap();
        let edges: Vec<Vec<usize>> = dec.subdomains.iter().map(|d| d.edges.clone()).collect();
        let zeros: Vec<Vec<f64>> = edges.iter().map(|e| vec![0.0; e.len()]).collect();
        let flux = move |x: Point| case.flux(x);
        let err = error_norm(
            &pl.topo,
            &pl.graph,
            &pl.layout,
            &edges,
            &zeros,
            &flux,
            Execution::Sequential,
        );
        let exact = case.flux_norm_sq_closed_form().sqrt();
        // (p + 2)-point rule on h = 1/6 cells
        assert!((err.value - exact).abs() < 1e-6 * exact);
        let single = SubdomainLayout::single(27);
        let all: Vec<usize> = (0..pl.graph.n_edges()).collect();
        let one = error_norm(
            &pl.topo,
            &pl.graph,
            &single,
            std::slice::from_ref(&all),
            &[vec![0.0; all.len()]],
            &flux,
            Execution::Parallel,
        );
        assert!((one.value - err.value).abs() < 1e-12 * exact);
    }
}
