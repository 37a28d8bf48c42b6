use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use foodseg_core::metrics::FOODSEG103_REFERENCE;

use super::EvalSummary;
use crate::failure::CmdResult;
use crate::provenance::{blob_hash, RunDir};

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), |x| format!("{:.2}", 100.0 * x))
}

fn delta(v: Option<f64>, base: Option<f64>) -> String {
    match (v, base) {
        (Some(a), Some(b)) => format!("{:+.2}", 100.0 * (a - b)),
        _ => "undefined".into(),
    }
}

/// Comparison table in percent; deltas are against the first run. Published
/// full-scale results follow as reference rows.
pub fn comparison_table(runs: &[(String, EvalSummary)]) -> String {
    let mut out = String::from("run\tmethod\tinit\tmIoU\tmAcc\taAcc\tparams\tdelta_mIoU\tdelta_mAcc\n");
    let base = runs.first().map(|(_, s)| (s.report.miou, s.report.macc));
    for (name, s) in runs {
        let (bm, ba) = base.unwrap_or_default();
        let params = s.num_parameters.map_or_else(|| "-".into(), |p| p.to_string());
        let _ = writeln!(
            out,
            "{name}\t{}\t{}\t{}\t{}\t{}\t{params}\t{}\t{}",
            s.method,
            s.init,
            pct(s.report.miou),
            pct(s.report.macc),
            pct(s.report.aacc),
            delta(s.report.miou, bm),
            delta(s.report.macc, ba),
        );
    }
    out.push_str("\n# published full-scale FoodSeg103 results, for orientation only\n");
    out.push_str("reference\tmIoU\tmAcc\n");
    for (name, miou, macc) in FOODSEG103_REFERENCE {
        let _ = writeln!(out, "{name}\t{miou:.1}\t{macc:.1}");
    }
    out
}

/// Grouped horizontal bars of per-class IoU, one color per run.
fn iou_svg(runs: &[(String, EvalSummary)]) -> String {
    const COLORS: [&str; 6] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948"];
    let names = runs.first().map(|(_, s)| s.class_names.clone()).unwrap_or_default();
    let bar = 12.0;
    let group = bar * runs.len() as f64 + 8.0;
    let (left, width) = (140.0, 400.0);
    let height = 40.0 + group * names.len() as f64;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"10\">\n",
        left + width + 20.0
    );
    for (i, (run, _)) in runs.iter().enumerate() {
        let x = left + 110.0 * i as f64;
        let _ = writeln!(
            svg,
            "<rect x=\"{x}\" y=\"6\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{}\" y=\"15\">{run}</text>",
            COLORS[i % COLORS.len()],
            x + 14.0
        );
    }
    for (k, name) in names.iter().enumerate() {
        let y0 = 30.0 + group * k as f64;
        let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{name}</text>", left - 6.0, y0 + group / 2.0);
        for (i, (_, s)) in runs.iter().enumerate() {
            let iou = s.report.per_class_iou.get(k).copied().flatten().unwrap_or(0.0);
            let _ = writeln!(
                svg,
                "<rect x=\"{left}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{}\" fill=\"{}\"/>",
                y0 + bar * i as f64,
                width * iou,
                bar - 2.0,
                COLORS[i % COLORS.len()]
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn report(out: &Path, plot: bool, run_dirs: &[PathBuf]) -> CmdResult {
    let mut run = RunDir::create(out, "report")?;
    let mut runs = Vec::with_capacity(run_dirs.len());
    for dir in run_dirs {
        let path = dir.join("metrics.json");
        run.input(&path)?;
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let summary: EvalSummary =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        runs.push((dir.display().to_string(), summary));
    }
    run.write("comparison.tsv", comparison_table(&runs))?;
    if plot {
        run.write("per_class_iou.svg", iou_svg(&runs))?;
    }
    let listing: Vec<String> = runs.iter().map(|(n, _)| n.clone()).collect();
    run.finish(&blob_hash(listing.join("\n").as_bytes()), 0)
}
