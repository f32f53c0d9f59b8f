//! Case configuration, the end-to-end pipeline, parameter sweeps and CSV
//! output.
//!
//! A case is described by a JSON [`CaseConfig`]; [`run_case`] turns it into
//! one [`CaseResult`] row.

mod output;
mod sweep;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{
    assemble_global, assemble_patches, assemble_subdomains, dirichlet_lifting, error_norm,
    solve_monolithic, AssemblyError, LocalSystem, ManufacturedCase, PatchSystem,
};
use crate::fetidp::{
    self, ConditionMode, FetiError, PhaseTimings, SolutionFields, SolveReport, SolverOptions,
};
use crate::gauge::{gauge, GaugeDecomposition, GaugeError};
use crate::geometry::{
    box_grid, build_facets, build_topology, cube27_three_part_layout, default_tolerance,
    warped_grid, DirichletGranularity, FacetDecomposition, GeometryError, MultipatchTopology,
    PatchGeometry, Point, SubdomainLayout,
};
use crate::par::Execution;
use crate::partition::{dual_graph, partition, PartitionError};
use crate::splines::{control_graph, make_spaces, tag_graph, ControlGraph, GraphTags, SplineError};

pub use output::{
    eoc_table, format_sci, parse_csv, plot_script, write_csv, write_eoc_csv, write_gauge_csv,
    write_gauge_dot, write_partition_csv, CsvRow, EocRow, CSV_HEADER,
};
pub use sweep::{default_h_cases, sort_results, sweep_h, sweep_subdomains};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("cannot parse configuration: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("geometry: {0}")]
    Geometry(#[from] GeometryError),
    #[error("partition: {0}")]
    Partition(#[from] PartitionError),
    #[error("discretization: {0}")]
    Spline(#[from] SplineError),
    #[error("gauge: {0}")]
    Gauge(#[from] GaugeError),
    #[error("assembly: {0}")]
    Assembly(#[from] AssemblyError),
    #[error("solve: {0}")]
    Solve(#[from] FetiError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeometrySpec {
    /// 3 × 3 × 3 unit patches filling `(0, 3)^3`.
    #[default]
    Cube27,
    /// The 27-patch cube with interior patch vertices displaced.
    WarpedCube27 { amplitude: f64 },
    Patches {
        patches: Vec<PatchGeometry>,
        #[serde(default)]
        tol: Option<f64>,
    },
}

impl GeometrySpec {
    pub fn n_patches(&self) -> usize {
        match self {
            GeometrySpec::Cube27 | GeometrySpec::WarpedCube27 { .. } => 27,
            GeometrySpec::Patches { patches, .. } => patches.len(),
        }
    }

    pub fn build(&self) -> Result<MultipatchTopology, GeometryError> {
        match self {
            GeometrySpec::Cube27 => {
                let patches = box_grid([3, 3, 3], [3.0; 3]);
                let tol = default_tolerance(&patches);
                build_topology(patches, tol)
            }
            GeometrySpec::WarpedCube27 { amplitude } => {
                let patches = warped_grid([3, 3, 3], [3.0; 3], *amplitude);
                let tol = default_tolerance(&patches);
                build_topology(patches, tol)
            }
            GeometrySpec::Patches { patches, tol } => {
                let tol = tol.unwrap_or_else(|| default_tolerance(patches));
                build_topology(patches.clone(), tol)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubdomainSpec {
    /// Generated by the partitioner.
    Count(usize),
    Assignment(Vec<usize>),
    /// The fixed three-subdomain layout of the 27-patch cube.
    ThreePart,
}

impl Default for SubdomainSpec {
    fn default() -> Self {
        SubdomainSpec::Count(1)
    }
}

fn default_tol() -> f64 {
    1e-6
}

fn default_max_iter() -> usize {
    500
}

fn enabled() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseConfig {
    #[serde(default)]
    pub geometry: GeometrySpec,
    pub degree: usize,
    pub divs: usize,
    #[serde(default)]
    pub subdomains: SubdomainSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub cond_mode: ConditionMode,
    #[serde(default = "enabled")]
    pub precondition: bool,
    #[serde(default)]
    pub case: ManufacturedCase,
    #[serde(default)]
    pub execution: Execution,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl CaseConfig {
    pub fn new(degree: usize, divs: usize, subdomains: SubdomainSpec) -> Self {
        CaseConfig {
            geometry: GeometrySpec::Cube27,
            degree,
            divs,
            subdomains,
            seed: 0,
            tol: default_tol(),
            max_iter: default_max_iter(),
            cond_mode: ConditionMode::default(),
            precondition: true,
            case: ManufacturedCase::default(),
            execution: Execution::default(),
            output: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let config: CaseConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::InvalidConfig(msg));
        if !(1..=3).contains(&self.degree) {
            return bad(format!("degree must be 1, 2 or 3, got {}", self.degree));
        }
        if self.divs == 0 {
            return bad("divs must be positive".into());
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return bad(format!("tol must lie in (0, 1), got {}", self.tol));
        }
        let n = self.geometry.n_patches();
        match &self.subdomains {
            SubdomainSpec::Count(k) if *k == 0 || *k > n => {
                bad(format!("cannot split {n} patches into {k} subdomains"))
            }
            SubdomainSpec::Assignment(a) if a.len() != n => bad(format!(
                "assignment has {} entries for {n} patches",
                a.len()
            )),
            SubdomainSpec::ThreePart if matches!(self.geometry, GeometrySpec::Patches { .. }) => {
                bad("the three-part layout needs a 27-patch cube geometry".into())
            }
            _ => Ok(()),
        }
    }

    /// Mesh size `1 / (divs * N_patches^(1/3))`.
    pub fn mesh_size(&self) -> f64 {
        1.0 / (self.divs as f64 * (self.geometry.n_patches() as f64).cbrt())
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            cond_mode: self.cond_mode,
            precondition: self.precondition,
            exec: self.execution,
        }
    }

    pub fn layout(&self, topology: &MultipatchTopology) -> Result<SubdomainLayout, HarnessError> {
        Ok(match &self.subdomains {
            SubdomainSpec::Count(1) => SubdomainLayout::single(topology.n_patches()),
            SubdomainSpec::Count(k) => partition(&dual_graph(topology), *k, self.seed)?,
            SubdomainSpec::Assignment(a) => SubdomainLayout::new(a.clone())?,
            SubdomainSpec::ThreePart => cube27_three_part_layout(),
        })
    }
}

/// Everything the solver consumes, built once per case.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub topology: MultipatchTopology,
    pub layout: SubdomainLayout,
    pub facets: FacetDecomposition,
    pub graph: ControlGraph,
    pub tags: GraphTags,
    pub gauge: GaugeDecomposition,
    pub patches: Vec<PatchSystem>,
    pub locals: Vec<LocalSystem>,
    pub lifting: Vec<f64>,
    pub case: ManufacturedCase,
    pub exec: Execution,
    pub timings: SetupTimings,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SetupTimings {
    pub discretize: f64,
    pub assemble: f64,
}

impl Pipeline {
    /// Geometry, partition, control graph and gauge only.
    pub fn discretize(config: &CaseConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        let t0 = Instant::now();
        let topology = config.geometry.build()?;
        let layout = config.layout(&topology)?;
        let facets = build_facets(&topology, &layout, DirichletGranularity::PerPatchFacet)?;
        let (scalar, space) = make_spaces(config.degree, config.divs)?;
        let graph = control_graph(&topology, &scalar, &space)?;
        let tags = tag_graph(&graph, &layout, &facets);
        let gauge = gauge(&graph, &tags, &layout)?;
        let timings = SetupTimings {
            discretize: t0.elapsed().as_secs_f64(),
            assemble: 0.0,
        };
        Ok(Pipeline {
            topology,
            layout,
            facets,
            graph,
            tags,
            gauge,
            patches: Vec::new(),
            locals: Vec::new(),
            lifting: Vec::new(),
            case: config.case,
            exec: config.execution,
            timings,
        })
    }

    pub fn build(config: &CaseConfig) -> Result<Self, HarnessError> {
        let mut p = Self::discretize(config)?;
        let t0 = Instant::now();
        p.patches = assemble_patches(&p.topology, &p.graph.space, p.case, p.exec)?;
        let edges = p.subdomain_edges();
        p.locals = assemble_subdomains(&p.graph, &p.patches, &p.layout, &edges, p.exec)?;
        let case = p.case;
        p.lifting = dirichlet_lifting(&p.topology, &p.graph, &move |x| case.potential(x))?;
        p.timings.assemble = t0.elapsed().as_secs_f64();
        Ok(p)
    }

    pub fn subdomain_edges(&self) -> Vec<Vec<usize>> {
        self.gauge
            .subdomains
            .iter()
            .map(|d| d.edges.clone())
            .collect()
    }

    pub fn solve(
        &self,
        options: &SolverOptions,
    ) -> Result<(SolutionFields, SolveReport), FetiError> {
        fetidp::solve(
            &self.locals,
            &self.gauge,
            &self.tags,
            &self.lifting,
            options,
        )
    }

    /// `||B - curl A_h||` for per-subdomain coefficient vectors.
    pub fn flux_error(
        &self,
        coefficients: &[Vec<f64>],
        reference: &(dyn Fn(Point) -> Point + Sync),
    ) -> f64 {
        let edges = self.subdomain_edges();
        error_norm(
            &self.topology,
            &self.graph,
            &self.layout,
            &edges,
            coefficients,
            reference,
            self.exec,
        )
        .value
    }

    /// Gauged solve of the assembled global system with the same tree.
    pub fn monolithic(&self) -> Result<Vec<f64>, AssemblyError> {
        let global = assemble_global(&self.graph, &self.patches);
        solve_monolithic(&global, &self.graph, &self.gauge.in_tree, &self.lifting)
    }

    /// Restricts a global coefficient vector to the subdomain numberings.
    pub fn restrict(&self, global: &[f64]) -> Vec<Vec<f64>> {
        self.gauge
            .subdomains
            .iter()
            .map(|d| d.edges.iter().map(|&e| global[e]).collect())
            .collect()
    }

    /// `||curl(A_1 - A_2)|| / ||curl A_2||`.
    pub fn relative_flux_difference(
        &self,
        coefficients: &[Vec<f64>],
        reference: &[Vec<f64>],
    ) -> f64 {
        let diff: Vec<Vec<f64>> = coefficients
            .iter()
            .zip(reference)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect();
        let zero = |_: Point| [0.0; 3];
        let d = self.flux_error(&diff, &zero);
        let r = self.flux_error(reference, &zero);
        if r > 0.0 {
            d / r
        } else {
            d
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CaseTimings {
    pub setup: SetupTimings,
    pub solver: PhaseTimings,
    pub error: f64,
}

/// One row of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub divs: usize,
    pub patchs: usize,
    pub deg: usize,
    pub subs: usize,
    /// Coarse problem size.
    pub pri: usize,
    /// `||B - curl A_h||` in `L2`.
    pub err: f64,
    /// Condition number estimate, NaN without multipliers.
    pub cond: f64,
    pub iter: usize,
    pub h: f64,
    pub multipliers: usize,
    pub dofs: usize,
    pub timings: CaseTimings,
}

impl CaseResult {
    pub fn row(&self) -> CsvRow {
        CsvRow {
            divs: self.divs,
            patchs: self.patchs,
            deg: self.deg,
            subs: self.subs,
            pri: self.pri,
            err: self.err,
            cond: self.cond,
            iter: self.iter,
        }
    }
}

/// Pipeline, solution and report of one case.
#[derive(Debug, Clone)]
pub struct CaseRun {
    pub pipeline: Pipeline,
    pub fields: SolutionFields,
    pub report: SolveReport,
    pub result: CaseResult,
}

pub fn run_case_detailed(config: &CaseConfig) -> Result<CaseRun, HarnessError> {
    let pipeline = Pipeline::build(config)?;
    let (fields, report) = pipeline.solve(&config.solver_options())?;
    let t0 = Instant::now();
    let case = config.case;
    let err = pipeline.flux_error(&fields.coefficients, &move |x| case.flux(x));
    let error_time = t0.elapsed().as_secs_f64();
    let result = CaseResult {
        divs: config.divs,
        patchs: pipeline.topology.n_patches(),
        deg: config.degree,
        subs: pipeline.layout.n_sub,
        pri: report.n_gp,
        err,
        cond: report.condition.map_or(f64::NAN, |c| c.cond),
        iter: report.iterations,
        h: config.mesh_size(),
        multipliers: report.m_r,
        dofs: pipeline.graph.n_edges(),
        timings: CaseTimings {
            setup: pipeline.timings,
            solver: report.timings,
            error: error_time,
        },
    };
    Ok(CaseRun {
        pipeline,
        fields,
        report,
        result,
    })
}

/// Runs geometry → partition → gauge → assembly → solve → error.
pub fn run_case(config: &CaseConfig) -> Result<CaseResult, HarnessError> {
    run_case_detailed(config).map(|run| run.result)
}

#[cfg(test)]
mod tests;
