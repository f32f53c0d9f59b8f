//! Acceptance checks over the experiment sweeps and a property suite.
//!
//! Criteria 2 to 7 read sweep rows back from their CSV form, so the checker
//! consumes exactly what the harness writes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::ManufacturedCase;
use crate::fetidp::{build_coupling, ConditionMode, DirichletPreconditioner, DualPrimalOperators};
use crate::gauge::{is_spanning_tree, verify_dirichlet_consistency};
use crate::geometry::Point;
use crate::harness::{
    default_h_cases, eoc_table, parse_csv, sweep_h, sweep_subdomains, write_csv, CaseConfig,
    CaseResult, CsvRow, GeometrySpec, HarnessError, Pipeline, SubdomainSpec,
};
use crate::par::Execution;
use crate::sparse::{dot, max_abs};
use crate::splines::discrete_gradient;

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionOutcome {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CriterionOutcome {
    fn new(id: u8, name: &'static str, failures: Vec<String>, summary: String) -> Self {
        let passed = failures.is_empty();
        let detail = if passed { summary } else { failures.join("; ") };
        CriterionOutcome {
            id,
            name,
            passed,
            detail,
        }
    }

    pub fn line(&self) -> String {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        format!(
            "criterion {} [{}]: {verdict} ({})",
            self.id, self.name, self.detail
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcceptanceOptions {
    /// `(degree, divs, N_sub)` cases compared with the monolithic solve.
    pub oracle_cases: Vec<(usize, usize, usize)>,
    pub h_cases: Vec<(usize, usize)>,
    pub sub_counts: Vec<usize>,
    pub sub_degrees: Vec<usize>,
    pub sub_divs: usize,
    /// PCG tolerance of the sweep that checks error invariance.
    pub invariance_tol: f64,
    /// `(degree, divs)` of the property suite discretizations.
    pub property_cases: Vec<(usize, usize)>,
    pub seed: u64,
    pub cond_mode: ConditionMode,
    pub exec: Execution,
}

impl AcceptanceOptions {
    pub fn full() -> Self {
        let mut oracle_cases = Vec::new();
        for p in [1, 2] {
            for divs in [2, 4] {
                oracle_cases.extend([1, 2, 3, 8].map(|n| (p, divs, n)));
            }
        }
        AcceptanceOptions {
            oracle_cases,
            h_cases: default_h_cases(),
            sub_counts: (2..=12).collect(),
            sub_degrees: vec![1, 2],
            sub_divs: 4,
            invariance_tol: 1e-10,
            property_cases: vec![(1, 2), (2, 2)],
            seed: 0,
            cond_mode: ConditionMode::Lanczos,
            exec: Execution::Parallel,
        }
    }

    pub fn quick() -> Self {
        AcceptanceOptions {
            oracle_cases: vec![(1, 2, 1), (1, 2, 3), (2, 2, 8)],
            h_cases: vec![(1, 2), (1, 3), (1, 4), (2, 2), (2, 3), (2, 4)],
            sub_counts: vec![2, 5, 8, 12],
            sub_degrees: vec![1],
            sub_divs: 2,
            property_cases: vec![(1, 2)],
            ..Self::full()
        }
    }

    fn base(&self, degree: usize, divs: usize, subdomains: SubdomainSpec) -> CaseConfig {
        CaseConfig {
            seed: self.seed,
            cond_mode: self.cond_mode,
            execution: self.exec,
            ..CaseConfig::new(degree, divs, subdomains)
        }
    }
}

/// Writes the rows as CSV and parses them back.
pub fn through_csv(results: &[CaseResult]) -> Result<Vec<CsvRow>, HarnessError> {
    let rows: Vec<CsvRow> = results.iter().map(CaseResult::row).collect();
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf)?;
    parse_csv(buf.as_slice())
}

/// 1: dual-primal and monolithic flux densities agree.
pub fn check_oracle(options: &AcceptanceOptions) -> Result<CriterionOutcome, HarnessError> {
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for &(p, divs, n) in &options.oracle_cases {
        let config = CaseConfig {
            tol: 1e-10,
            ..options.base(p, divs, SubdomainSpec::Count(n))
        };
        let run = crate::harness::run_case_detailed(&config)?;
        let mono = run.pipeline.restrict(&run.pipeline.monolithic()?);
        let diff = run
            .pipeline
            .relative_flux_difference(&run.fields.coefficients, &mono);
        worst = worst.max(diff);
        if !(diff <= 1e-8) {
            failures.push(format!(
                "p={p} divs={divs} N_sub={n}: relative difference {diff:.3e}"
            ));
        }
    }
    let summary = format!(
        "{} cases, max relative difference {worst:.3e}",
        options.oracle_cases.len()
    );
    Ok(CriterionOutcome::new(
        1,
        "oracle equivalence",
        failures,
        summary,
    ))
}

fn by_degree(rows: &[CsvRow]) -> Vec<(usize, Vec<CsvRow>)> {
    let mut degrees: Vec<usize> = rows.iter().map(|r| r.deg).collect();
    degrees.sort_unstable();
    degrees.dedup();
    degrees
        .into_iter()
        .map(|p| {
            let mut g: Vec<CsvRow> = rows.iter().filter(|r| r.deg == p).copied().collect();
            g.sort_by_key(|r| r.divs);
            (p, g)
        })
        .collect()
}

/// Accepted EOC range for a pair of meshes. The coarsest cubic pair is
/// pre-asymptotic and gets the wider `[2.6, 3.4]` window.
pub fn eoc_window(deg: usize, divs_coarse: usize, coarsest: usize) -> (f64, f64) {
    let p = deg as f64;
    if deg == 3 && divs_coarse == coarsest {
        (2.6, 3.4)
    } else {
        (p - 0.3, p + 0.3)
    }
}

/// 2: experimental order of convergence equals the degree within 0.3.
pub fn check_convergence(rows: &[CsvRow]) -> CriterionOutcome {
    let table = eoc_table(rows);
    let mut failures = Vec::new();
    for e in &table {
        let coarsest = table
            .iter()
            .filter(|f| f.deg == e.deg && f.subs == e.subs)
            .map(|f| f.divs_coarse)
            .min()
            .unwrap_or(e.divs_coarse);
        let (lo, hi) = eoc_window(e.deg, e.divs_coarse, coarsest);
        if !(lo <= e.eoc && e.eoc <= hi) {
            failures.push(format!(
                "p={} divs {}->{}: EOC {:.3} outside [{lo}, {hi}]",
                e.deg, e.divs_coarse, e.divs_fine, e.eoc
            ));
        }
    }
    if table.is_empty() {
        failures.push("no mesh pairs".into());
    }
    let summary = table
        .iter()
        .map(|e| {
            format!(
                "p={} {}->{}: {:.2}",
                e.deg, e.divs_coarse, e.divs_fine, e.eoc
            )
        })
        .collect::<Vec<_>>()
        .join(", ");
    CriterionOutcome::new(2, "convergence order", failures, summary)
}

/// 3: coarse size identical across the mesh-size study.
pub fn check_coarse_invariance(rows: &[CsvRow]) -> CriterionOutcome {
    let mut sizes: Vec<usize> = rows.iter().map(|r| r.pri).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let failures = if sizes.len() == 1 {
        Vec::new()
    } else {
        vec![format!("coarse sizes {sizes:?}")]
    };
    CriterionOutcome::new(
        3,
        "coarse size invariance",
        failures,
        format!("n_gp = {:?} on {} cases", sizes, rows.len()),
    )
}

/// 4: coarse size within `2.5 N_sub + 2`.
pub fn check_coarse_linearity(rows: &[CsvRow]) -> CriterionOutcome {
    let failures = rows
        .iter()
        .filter(|r| r.pri as f64 > 2.5 * r.subs as f64 + 2.0)
        .map(|r| format!("p={} N_sub={}: n_gp={}", r.deg, r.subs, r.pri))
        .collect();
    let mut seen: Vec<(usize, usize)> = rows.iter().map(|r| (r.subs, r.pri)).collect();
    seen.sort_unstable();
    seen.dedup();
    let summary = seen
        .iter()
        .map(|(n, g)| format!("{n}:{g}"))
        .collect::<Vec<_>>()
        .join(" ");
    CriterionOutcome::new(
        4,
        "coarse size linearity",
        failures,
        format!("N_sub:n_gp {summary}"),
    )
}

/// `0.7 (2 + log10(p^2 / h))^2`.
pub fn condition_bound(deg: usize, h: f64) -> f64 {
    let t = 2.0 + ((deg * deg) as f64 / h).log10();
    0.7 * t * t
}

/// 5: condition numbers below the logarithmic bound and non-decreasing as
/// the mesh is refined.
pub fn check_conditioning(rows: &[CsvRow]) -> CriterionOutcome {
    let mut failures = Vec::new();
    let mut summary = Vec::new();
    for (p, g) in by_degree(rows) {
        for r in &g {
            let bound = condition_bound(p, r.mesh_size());
            if !(r.cond <= bound) {
                failures.push(format!(
                    "p={p} divs={}: cond {:.3} above {bound:.3}",
                    r.divs, r.cond
                ));
            }
        }
        for w in g.windows(2) {
            if !(w[1].cond >= w[0].cond) {
                failures.push(format!(
                    "p={p}: cond drops from {:.4} to {:.4} at divs={}",
                    w[0].cond, w[1].cond, w[1].divs
                ));
            }
        }
        let conds: Vec<String> = g.iter().map(|r| format!("{:.2}", r.cond)).collect();
        summary.push(format!("p={p}: [{}]", conds.join(", ")));
    }
    CriterionOutcome::new(5, "conditioning", failures, summary.join(" "))
}

/// 6: iteration counts within 15 on the mesh study and 18 on the
/// subdomain study.
pub fn check_iterations(h_rows: &[CsvRow], sub_rows: &[CsvRow]) -> CriterionOutcome {
    let mut failures = Vec::new();
    for (rows, limit, name) in [(h_rows, 15, "mesh"), (sub_rows, 18, "subdomain")] {
        for r in rows.iter().filter(|r| r.iter > limit) {
            failures.push(format!(
                "{name} study p={} divs={} N_sub={}: {} iterations",
                r.deg, r.divs, r.subs, r.iter
            ));
        }
    }
    let max = |rows: &[CsvRow]| rows.iter().map(|r| r.iter).max().unwrap_or(0);
    let summary = format!(
        "max {} on the mesh study, {} on the subdomain study",
        max(h_rows),
        max(sub_rows)
    );
    CriterionOutcome::new(6, "iteration counts", failures, summary)
}

/// 7: the error does not depend on the decomposition.
pub fn check_error_invariance(rows: &[CsvRow]) -> CriterionOutcome {
    let mut failures = Vec::new();
    let mut summary = Vec::new();
    for (p, g) in by_degree(rows) {
        let lo = g.iter().map(|r| r.err).fold(f64::INFINITY, f64::min);
        let hi = g.iter().map(|r| r.err).fold(f64::NEG_INFINITY, f64::max);
        let spread = (hi - lo) / hi;
        if !(spread <= 1e-8) {
            failures.push(format!("p={p}: relative spread {spread:.3e}"));
        }
        summary.push(format!("p={p}: err {hi:.6e}, spread {spread:.1e}"));
    }
    CriterionOutcome::new(7, "error invariance", failures, summary.join(", "))
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Fourth-order central difference of `f` along axis `d`.
fn derivative(f: &dyn Fn(Point) -> Point, x: Point, d: usize) -> Point {
    let h = 1e-3;
    let at = |s: f64| {
        let mut y = x;
        y[d] += s * h;
        f(y)
    };
    let (m2, m1, p1, p2) = (at(-2.0), at(-1.0), at(1.0), at(2.0));
    std::array::from_fn(|c| (m2[c] - 8.0 * m1[c] + 8.0 * p1[c] - p2[c]) / (12.0 * h))
}

fn curl_fd(f: &dyn Fn(Point) -> Point, x: Point) -> Point {
    let [dx, dy, dz] = [0, 1, 2].map(|d| derivative(f, x, d));
    [dy[2] - dz[1], dz[0] - dx[2], dx[1] - dy[0]]
}

/// Residuals of `B = curl A`, `J = curl B`, `div A = 0` at random points of
/// the cube, relative to the field magnitudes.
pub fn manufactured_identity_residuals(samples: usize, seed: u64) -> [f64; 3] {
    let case = ManufacturedCase::Trigonometric;
    let a = move |x: Point| case.potential(x);
    let b = move |x: Point| case.flux(x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut res = [0.0f64; 3];
    for _ in 0..samples {
        let x: Point = std::array::from_fn(|_| rng.random_range(0.0..3.0));
        let curl_a = curl_fd(&a, x);
        let curl_b = curl_fd(&b, x);
        let div_a: f64 = (0..3).map(|d| derivative(&a, x, d)[d]).sum();
        let (bx, jx) = (case.flux(x), case.source(x));
        for c in 0..3 {
            res[0] = res[0].max((curl_a[c] - bx[c]).abs() / 3.0);
            res[1] = res[1].max((curl_b[c] - jx[c]).abs() / 6.0);
        }
        res[2] = res[2].max(div_a.abs() / 2.0);
    }
    res
}

fn check_pipeline(pipeline: &Pipeline, seed: u64, exec: Execution) -> Vec<String> {
    let mut failures = Vec::new();
    let graph = &pipeline.graph;
    let in_tree = &pipeline.gauge.in_tree;
    let tree_size = in_tree.iter().filter(|&&t| t).count();
    if tree_size + 1 != graph.n_vertices || !is_spanning_tree(graph, in_tree) {
        failures.push(format!(
            "(a) tree has {tree_size} edges for {} vertices",
            graph.n_vertices
        ));
    }
    if let Some(w) = verify_dirichlet_consistency(graph, in_tree) {
        failures.push(format!(
            "(b) Dirichlet restriction is not a spanning forest: {w:?}"
        ));
    }

    let global = crate::assembly::assemble_global(graph, &pipeline.patches);
    let grad = discrete_gradient(graph);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k_norm = (0..global.matrix.nrows())
        .map(|i| global.matrix.row(i).map(|(_, v)| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    for _ in 0..5 {
        let phi = random_vec(&mut rng, graph.n_vertices);
        let g = grad.mul_vec(&phi);
        let kg = global.matrix.mul_vec(&g);
        let rel = max_abs(&kg) / (k_norm * max_abs(&g));
        if !(rel <= 1e-10) {
            failures.push(format!("(c) |K G phi| / (|K| |G phi|) = {rel:.3e}"));
            break;
        }
    }

    let built = build_coupling(&pipeline.gauge, &pipeline.tags)
        .map_err(|e| e.to_string())
        .and_then(|c| {
            DualPrimalOperators::build(
                &pipeline.locals,
                &pipeline.gauge,
                c,
                &pipeline.lifting,
                exec,
            )
            .map_err(|e| e.to_string())
        });
    let ops = match built {
        Ok(ops) => ops,
        Err(e) => {
            failures.push(format!("(d) {e}"));
            return failures;
        }
    };
    let pc = match DirichletPreconditioner::build(&ops, &pipeline.gauge) {
        Ok(pc) => pc,
        Err(e) => {
            failures.push(format!("(d) {e}"));
            return failures;
        }
    };
    let m_r = ops.m_r();
    if m_r > 0 {
        let neg_s = |x: &[f64]| ops.apply_s(x).into_iter().map(|v| -v).collect::<Vec<f64>>();
        let m = |x: &[f64]| pc.apply(&ops.coupling, x);
        for (name, op) in [("S", &neg_s as &dyn Fn(&[f64]) -> Vec<f64>), ("M", &m)] {
            for _ in 0..10 {
                let x = random_vec(&mut rng, m_r);
                let y = random_vec(&mut rng, m_r);
                let (ax, ay) = (op(&x), op(&y));
                let (xay, yax) = (dot(&x, &ay), dot(&y, &ax));
                let scale = (dot(&x, &ax).abs() * dot(&y, &ay).abs()).sqrt();
                if !((xay - yax).abs() <= 1e-10 * scale) {
                    failures.push(format!(
                        "(e) {name} asymmetry {:.3e}",
                        (xay - yax).abs() / scale
                    ));
                    break;
                }
                let xax = dot(&x, &ax);
                if xax < -1e-10 * max_abs(&ax) * max_abs(&x) * m_r as f64 {
                    failures.push(format!("(e) {name} has negative curvature {xax:.3e}"));
                    break;
                }
            }
        }
    }
    failures
}

/// Geometries and layouts covered by the property suite.
pub fn property_configs(options: &AcceptanceOptions) -> Vec<(String, CaseConfig)> {
    let mut out = Vec::new();
    for &(p, divs) in &options.property_cases {
        let mut layouts = vec![("three-part".to_string(), SubdomainSpec::ThreePart)];
        layouts.extend((1..=12).map(|n| (format!("N_sub={n}"), SubdomainSpec::Count(n))));
        for (geometry_name, geometry) in [
            ("cube", GeometrySpec::Cube27),
            (
                "warped cube",
                GeometrySpec::WarpedCube27 { amplitude: 0.15 },
            ),
        ] {
            for (layout_name, spec) in &layouts {
                let config = CaseConfig {
                    geometry: geometry.clone(),
                    ..options.base(p, divs, spec.clone())
                };
                out.push((
                    format!("{geometry_name} {layout_name} p={p} divs={divs}"),
                    config,
                ));
            }
        }
    }
    out
}

/// 8: tree, gauge, kernel, factorization, operator and manufactured
/// solution properties.
pub fn check_properties(options: &AcceptanceOptions) -> Result<CriterionOutcome, HarnessError> {
    let mut failures = Vec::new();
    let configs = property_configs(options);
    for (i, (name, config)) in configs.iter().enumerate() {
        let pipeline = Pipeline::build(config)?;
        let found = check_pipeline(&pipeline, options.seed.wrapping_add(i as u64), options.exec);
        failures.extend(found.into_iter().map(|f| format!("{name}: {f}")));
    }
    let res = manufactured_identity_residuals(200, options.seed);
    for (r, what) in res.iter().zip(["B = curl A", "J = curl B", "div A = 0"]) {
        if !(*r <= 1e-9) {
            failures.push(format!("(f) {what} residual {r:.3e}"));
        }
    }
    let case = ManufacturedCase::Trigonometric;
    let topology = GeometrySpec::Cube27.build()?;
    let quad = crate::assembly::flux_norm_sq_quadrature(&topology, case, 14).sqrt();
    let closed = case.flux_norm_sq_closed_form().sqrt();
    let norm_gap = (quad - closed).abs() / closed;
    if !(norm_gap <= 1e-10) {
        failures.push(format!(
            "(f) |B| quadrature {quad:.12} vs closed form {closed:.12}"
        ));
    }
    let summary = format!(
        "{} discretizations; identity residuals {:.1e}/{:.1e}/{:.1e}; |B| = {closed:.10} (gap {norm_gap:.1e})",
        configs.len(),
        res[0],
        res[1],
        res[2]
    );
    Ok(CriterionOutcome::new(
        8,
        "property suite",
        failures,
        summary,
    ))
}

/// Runs criteria 1 to 8 in order.
pub fn run(options: &AcceptanceOptions) -> Result<Vec<CriterionOutcome>, HarnessError> {
    let mut out = vec![check_oracle(options)?];
    let h_base = options.base(1, 2, SubdomainSpec::ThreePart);
    let h_rows = through_csv(&sweep_h(&h_base, &options.h_cases)?)?;
    let sub_base = options.base(1, options.sub_divs, SubdomainSpec::Count(1));
    let (counts, degrees) = (&options.sub_counts, &options.sub_degrees);
    let sub_rows = through_csv(&sweep_subdomains(&sub_base, counts, degrees)?)?;
    let tight = CaseConfig {
        tol: options.invariance_tol,
        ..sub_base
    };
    let tight_rows = through_csv(&sweep_subdomains(&tight, counts, degrees)?)?;
    out.push(check_convergence(&h_rows));
    out.push(check_coarse_invariance(&h_rows));
    out.push(check_coarse_linearity(&sub_rows));
    out.push(check_conditioning(&h_rows));
    out.push(check_iterations(&h_rows, &sub_rows));
    out.push(check_error_invariance(&tight_rows));
    out.push(check_properties(options)?);
    Ok(out)
}
