use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::gauge::{subdomain_dot, GaugeDecomposition};
use crate::geometry::SubdomainLayout;
use crate::splines::ControlGraph;

use super::HarnessError;

pub const CSV_HEADER: [&str; 8] = [
    "divs", "patchs", "deg", "subs", "pri", "err", "cond", "iter",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub divs: usize,
    pub patchs: usize,
    pub deg: usize,
    pub subs: usize,
    pub pri: usize,
    pub err: f64,
    pub cond: f64,
    pub iter: usize,
}

impl CsvRow {
    pub fn mesh_size(&self) -> f64 {
        1.0 / (self.divs as f64 * (self.patchs as f64).cbrt())
    }
}

/// `printf("%.16e")`: 16 fractional digits and a signed exponent of at least
/// two digits.
pub fn format_sci(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let s = format!("{x:.16e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    format!(
        "{mantissa}e{}{:02}",
        if exp < 0 { '-' } else { '+' },
        exp.abs()
    )
}

pub fn write_csv<W: Write>(rows: &[CsvRow], out: W) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.divs.to_string(),
            r.patchs.to_string(),
            r.deg.to_string(),
            r.subs.to_string(),
            r.pri.to_string(),
            format_sci(r.err),
            format_sci(r.cond),
            r.iter.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_csv<R: Read>(input: R) -> Result<Vec<CsvRow>, HarnessError> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != CSV_HEADER {
        return Err(HarnessError::InvalidConfig(format!(
            "unexpected CSV header {header:?}"
        )));
    }
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EocRow {
    pub deg: usize,
    pub subs: usize,
    pub divs_coarse: usize,
    pub divs_fine: usize,
    pub eoc: f64,
}

/// Orders of convergence `log(e_1 / e_2) / log(h_1 / h_2)` between
/// consecutive mesh sizes of the same degree and subdomain count.
pub fn eoc_table(rows: &[CsvRow]) -> Vec<EocRow> {
    let mut groups: BTreeMap<(usize, usize), Vec<CsvRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.deg, r.subs)).or_default().push(*r);
    }
    let mut out = Vec::new();
    for ((deg, subs), mut g) in groups {
        g.sort_by_key(|r| r.divs);
        g.dedup_by_key(|r| r.divs);
        for w in g.windows(2) {
            let eoc = (w[0].err / w[1].err).ln() / (w[0].mesh_size() / w[1].mesh_size()).ln();
            out.push(EocRow {
                deg,
                subs,
                divs_coarse: w[0].divs,
                divs_fine: w[1].divs,
                eoc,
            });
        }
    }
    out
}

pub fn write_eoc_csv<W: Write>(rows: &[EocRow], mut out: W) -> Result<(), HarnessError> {
    writeln!(out, "deg,subs,divs_coarse,divs_fine,eoc")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.deg,
            r.subs,
            r.divs_coarse,
            r.divs_fine,
            format_sci(r.eoc)
        )?;
    }
    Ok(())
}

pub fn write_partition_csv<W: Write>(
    layout: &SubdomainLayout,
    mut out: W,
) -> Result<(), HarnessError> {
    writeln!(out, "patch_id,subdomain_id")?;
    for (j, k) in layout.assignment.iter().enumerate() {
        writeln!(out, "{j},{k}")?;
    }
    Ok(())
}

pub fn write_gauge_csv<W: Write>(
    gauge: &GaugeDecomposition,
    mut out: W,
) -> Result<(), HarnessError> {
    writeln!(out, "edge_id,weight,class")?;
    for (e, (w, c)) in gauge.weights.iter().zip(&gauge.classes).enumerate() {
        writeln!(out, "{e},{w},{}", c.label())?;
    }
    Ok(())
}

/// One DOT graph per subdomain, concatenated.
pub fn write_gauge_dot<W: Write>(
    graph: &ControlGraph,
    gauge: &GaugeDecomposition,
    mut out: W,
) -> Result<(), HarnessError> {
    for k in 0..gauge.n_subdomains() {
        out.write_all(subdomain_dot(graph, gauge, k).as_bytes())?;
    }
    Ok(())
}

/// Matplotlib script drawing coarse size, error, condition number and
/// iterations from a sweep CSV, against `1/h` or the subdomain count.
pub fn plot_script(csv_name: &str, against_subdomains: bool) -> String {
    let (x_expr, x_label, log_x) = if against_subdomains {
        ("d['subs']", "number of subdomains", "False")
    } else {
        ("d['divs'] * d['patchs'] ** (1.0 / 3.0)", "1/h", "True")
    };
    format!(
        r#"import sys
import pandas as pd
import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "{csv_name}"
d = pd.read_csv(path)
d["x"] = {x_expr}
panels = [("pri", "coarse problem size", False), ("err", "flux density error", True),
          ("cond", "condition number", False), ("iter", "iterations", False)]
fig, axes = plt.subplots(1, 4, figsize=(16, 4))
for ax, (col, title, log_y) in zip(axes, panels):
    for key, g in d.groupby("deg"):
        g = g.sort_values("x")
        ax.plot(g["x"], g[col], marker="o", label="p = %d" % key)
    ax.set_title(title)
    ax.set_xlabel("{x_label}")
    if {log_x}:
        ax.set_xscale("log")
    if log_y:
        ax.set_yscale("log")
    ax.legend()
fig.tight_layout()
fig.savefig(path.rsplit(".", 1)[0] + ".pdf")
"#
    )
}
