use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use magneto_dd::acceptance::{self, AcceptanceOptions};
use magneto_dd::fetidp::ConditionMode;
use magneto_dd::harness::{
    self, default_h_cases, eoc_table, plot_script, sweep_h, sweep_subdomains, write_csv,
    write_eoc_csv, write_gauge_csv, write_gauge_dot, write_partition_csv, CaseConfig, CaseResult,
    HarnessError, Pipeline, SubdomainSpec,
};
use magneto_dd::par::set_threads;

#[derive(Parser)]
#[command(
    name = "magneto-dd",
    version,
    about = "Dual-primal domain decomposition for multipatch magnetostatics"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON case configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file (stdout when omitted)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads, 0 for all cores
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Relative PCG tolerance
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[arg(long, global = true, value_parser = ["exact", "lanczos"])]
    cond_mode: Option<String>,
    /// Partitioner seed
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one case; prints a JSON report and writes the CSV row to --out
    Solve,
    /// Print the patch-to-subdomain assignment as CSV
    Partition,
    /// Print the per-edge weight and class as CSV
    Gauge {
        /// Also write a DOT rendering of the subdomain graphs
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Mesh-size study on the three-subdomain layout
    SweepH {
        /// Degrees, overriding the default study
        #[arg(long, value_delimiter = ',')]
        degrees: Vec<usize>,
        /// Cells per patch direction, used with --degrees
        #[arg(long, value_delimiter = ',', default_value = "2,3,4,6")]
        divs: Vec<usize>,
    },
    /// Subdomain-count study with generated layouts
    SweepSub {
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "2,3,4,5,6,7,8,9,10,11,12"
        )]
        subs: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1,2")]
        degrees: Vec<usize>,
        #[arg(long, default_value_t = 4)]
        divs: usize,
    },
    /// Run the acceptance suite; exits nonzero on failure
    Check {
        /// Smaller sweeps for a fast smoke run
        #[arg(long)]
        quick: bool,
    },
}

fn base_config(common: &Common, default: SubdomainSpec) -> Result<CaseConfig, HarnessError> {
    let mut config = match &common.config {
        Some(path) => CaseConfig::load(path)?,
        None => CaseConfig::new(2, 4, default),
    };
    if let Some(tol) = common.tol {
        config.tol = tol;
    }
    if let Some(mode) = &common.cond_mode {
        config.cond_mode = mode
            .parse::<ConditionMode>()
            .map_err(HarnessError::InvalidConfig)?;
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if common.out.is_some() {
        config.output = common.out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn sink(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn companion(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn emit_sweep(
    results: &[CaseResult],
    out: Option<&Path>,
    against_subdomains: bool,
) -> Result<(), HarnessError> {
    let rows: Vec<_> = results.iter().map(CaseResult::row).collect();
    write_csv(&rows, sink(out)?)?;
    if let Some(path) = out {
        if !against_subdomains {
            write_eoc_csv(&eoc_table(&rows), sink(Some(&companion(path, ".eoc.csv")))?)?;
        }
        let name = path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        std::fs::write(
            companion(path, ".plot.py"),
            plot_script(&name, against_subdomains),
        )?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode, HarnessError> {
    set_threads(cli.common.threads);
    let out = cli.common.out.as_deref();
    match cli.command {
        Command::Solve => {
            let config = base_config(&cli.common, SubdomainSpec::ThreePart)?;
            let result = harness::run_case(&config)?;
            if let Some(path) = &config.output {
                write_csv(&[result.row()], sink(Some(path))?)?;
            }
            println!("{}", serde_json::to_string_pretty(&result)?);
        }
        Command::Partition => {
            let config = base_config(&cli.common, SubdomainSpec::Count(3))?;
            let topology = config.geometry.build()?;
            write_partition_csv(&config.layout(&topology)?, sink(out)?)?;
        }
        Command::Gauge { dot } => {
            let config = base_config(&cli.common, SubdomainSpec::ThreePart)?;
            let pipeline = Pipeline::discretize(&config)?;
            write_gauge_csv(&pipeline.gauge, sink(out)?)?;
            if let Some(path) = dot {
                write_gauge_dot(&pipeline.graph, &pipeline.gauge, sink(Some(&path))?)?;
            }
        }
        Command::SweepH { degrees, divs } => {
            let base = base_config(&cli.common, SubdomainSpec::ThreePart)?;
            let cases = if degrees.is_empty() {
                default_h_cases()
            } else {
                degrees
                    .iter()
                    .flat_map(|&p| divs.iter().map(move |&d| (p, d)))
                    .collect()
            };
            emit_sweep(&sweep_h(&base, &cases)?, out, false)?;
        }
        Command::SweepSub {
            subs,
            degrees,
            divs,
        } => {
            let base = CaseConfig {
                divs,
                ..base_config(&cli.common, SubdomainSpec::Count(1))?
            };
            emit_sweep(&sweep_subdomains(&base, &subs, &degrees)?, out, true)?;
        }
        Command::Check { quick } => {
            let mut options = if quick {
                AcceptanceOptions::quick()
            } else {
                AcceptanceOptions::full()
            };
            if let Some(seed) = cli.common.seed {
                options.seed = seed;
            }
            if let Some(mode) = &cli.common.cond_mode {
                options.cond_mode = mode.parse().map_err(HarnessError::InvalidConfig)?;
            }
            let outcomes = acceptance::run(&options)?;
            let mut w = sink(out)?;
            for o in &outcomes {
                writeln!(w, "{}", o.line())?;
            }
            w.flush()?;
            if outcomes.iter().any(|o| !o.passed) {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
