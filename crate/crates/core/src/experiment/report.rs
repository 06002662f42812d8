use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::runner::CellResult;
use crate::defense::DefenseId;
use crate::error::{Error, Result};
use crate::metrics::{aggregate, MetricReport, NodeMetrics, Summary};
use crate::models::Architecture;

/// Metrics of one (architecture, defense) column pooled over iterations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub dataset: String,
    pub architecture: Architecture,
    pub defense: DefenseId,
    pub iterations: usize,
    pub report: MetricReport,
}

const METRICS: [&str; 5] = ["fidelity", "fidelity-abs", "sparsity", "stability", "consistency"];

fn metric(report: &MetricReport, name: &str) -> Summary {
    match name {
        "fidelity" => report.fidelity_agreement,
        "fidelity-abs" => report.fidelity_abs,
        "sparsity" => report.sparsity,
        "stability" => report.stability,
        _ => report.consistency,
    }
}

/// Pools per-node values of successful cells by (architecture, defense),
/// in grid order with defenses in table order.
pub fn grid_reports(results: &[CellResult]) -> Result<Vec<GridReport>> {
    let ok: Vec<&CellResult> = results.iter().filter(|c| c.is_ok()).collect();
    let Some(first) = ok.first() else {
        return Err(Error::UndefinedMetric("no successful cells to summarize".into()));
    };
    let mut archs: Vec<Architecture> = Vec::new();
    for c in &ok {
        if !archs.contains(&c.key.architecture) {
            archs.push(c.key.architecture);
        }
    }
    let mut out = Vec::new();
    for arch in archs {
        for defense in DefenseId::ALL {
            let cells: Vec<&&CellResult> = ok
                .iter()
                .filter(|c| c.key.architecture == arch && c.key.defense == defense)
                .collect();
            if cells.is_empty() {
                continue;
            }
            let nodes: Vec<NodeMetrics> = cells.iter().flat_map(|c| c.nodes.iter().copied()).collect();
            out.push(GridReport {
                dataset: first.key.dataset.clone(),
                architecture: arch,
                defense,
                iterations: cells.len(),
                report: aggregate(&nodes, first.protocol.runs_per_node, first.protocol.fidelity_mode)?,
            });
        }
    }
    Ok(out)
}

/// Rows are (metric, architecture); columns are defenses in table order.
pub fn summary_csv(reports: &[GridReport]) -> String {
    let mut defenses: Vec<DefenseId> = Vec::new();
    let mut archs: Vec<Architecture> = Vec::new();
    for r in reports {
        if !defenses.contains(&r.defense) {
            defenses.push(r.defense);
        }
        if !archs.contains(&r.architecture) {
            archs.push(r.architecture);
        }
    }
    defenses.sort_by_key(|d| DefenseId::ALL.iter().position(|x| x == d));
    let mut csv = String::from("metric,architecture");
    for d in &defenses {
        csv.push(',');
        csv.push_str(d.abbreviation());
    }
    csv.push('\n');
    for name in METRICS {
        for &arch in &archs {
            csv.push_str(name);
            csv.push(',');
            csv.push_str(arch.id());
            for d in &defenses {
                csv.push(',');
                if let Some(r) = reports.iter().find(|r| r.architecture == arch && r.defense == *d) {
                    csv.push_str(&metric(&r.report, name).display(3));
                }
            }
            csv.push('\n');
        }
    }
    csv
}

const PALETTE: [&str; 8] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#9c755f",
];

/// Grouped bar chart of one metric: a group per architecture, a bar per
/// defense, whiskers at ± one standard deviation.
pub fn render_chart(metric_name: &str, reports: &[GridReport]) -> String {
    let mut archs: Vec<Architecture> = Vec::new();
    let mut defenses: Vec<DefenseId> = Vec::new();
    for r in reports {
        if !archs.contains(&r.architecture) {
            archs.push(r.architecture);
        }
        if !defenses.contains(&r.defense) {
            defenses.push(r.defense);
        }
    }
    let top = reports
        .iter()
        .map(|r| {
            let s = metric(&r.report, metric_name);
            s.mean + s.std
        })
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let (bar, gap, left, plot_h, top_pad) = (18.0, 24.0, 60.0, 240.0, 30.0);
    let group_w = bar * defenses.len() as f64 + gap;
    let width = left + group_w * archs.len() as f64 + 140.0;
    let height = top_pad + plot_h + 60.0;
    let y = |v: f64| top_pad + plot_h * (1.0 - v / top);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<text x="{left}" y="18" font-size="14">{metric_name}</text>"#);
    let _ = writeln!(
        svg,
        r#"<line x1="{left}" y1="{:.2}" x2="{left}" y2="{:.2}" stroke="black"/>"#,
        top_pad,
        top_pad + plot_h
    );
    for k in 0..=4 {
        let v = top * f64::from(k) / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.3}</text>"#,
            left - 4.0,
            y(v) + 4.0
        );
    }
    for (gi, arch) in archs.iter().enumerate() {
        let x0 = left + gap / 2.0 + group_w * gi as f64;
        for (di, defense) in defenses.iter().enumerate() {
            let Some(r) = reports.iter().find(|r| r.architecture == *arch && r.defense == *defense) else {
                continue;
            };
            let s = metric(&r.report, metric_name);
            let x = x0 + bar * di as f64;
            let color = PALETTE[di % PALETTE.len()];
            let _ = writeln!(
                svg,
                r#"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}"><title>{} {}: {}</title></rect>"#,
                y(s.mean.max(0.0)),
                bar - 2.0,
                (plot_h - (y(s.mean.max(0.0)) - top_pad)).max(0.0),
                arch.id(),
                defense.abbreviation(),
                s.display(3)
            );
            let cx = x + (bar - 2.0) / 2.0;
            let _ = writeln!(
                svg,
                r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
                y((s.mean - s.std).max(0.0)),
                y(s.mean + s.std)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            x0 + bar * defenses.len() as f64 / 2.0,
            top_pad + plot_h + 16.0,
            arch.id()
        );
    }
    let lx = left + group_w * archs.len() as f64 + 10.0;
    for (di, defense) in defenses.iter().enumerate() {
        let ly = top_pad + 14.0 * di as f64;
        let _ = writeln!(
            svg,
            r#"<rect x="{lx:.2}" y="{ly:.2}" width="10" height="10" fill="{}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            PALETTE[di % PALETTE.len()],
            lx + 14.0,
            ly + 9.0,
            defense.abbreviation()
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes `summary.csv`, `summary.json` and one chart per metric.
pub fn write_summary(results: &[CellResult], root: &Path) -> Result<()> {
    let reports = grid_reports(results)?;
    let write = |rel: &str, text: String| {
        let path = root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    };
    write("summary.csv", summary_csv(&reports))?;
    write("summary.json", serde_json::to_string_pretty(&reports)? + "\n")?;
    for name in METRICS {
        write(&format!("charts/{name}.svg"), render_chart(name, &reports))?;
    }
    Ok(())
}
