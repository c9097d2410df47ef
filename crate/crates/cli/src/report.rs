//! Plain-text and JSON reports.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use serde::Serialize;

use tsar_core::evalkit::{cloud_metrics, scaled_thresholds, CloudMetrics, DepthErrorStats};
use tsar_core::io;
use tsar_core::pipeline::ablation::{score_view, MaskScores, REL_THRESHOLD};
use tsar_core::pipeline::{truth_cloud, Reconstruction};

const CLOUD_HEADER: &str = "# accuracy: fraction of predicted points within the tolerance of a ground-truth point\n\
# completeness: fraction of ground-truth points within the tolerance of a predicted point\n";

pub fn cloud_table(metrics: &[CloudMetrics]) -> String {
    let mut s = String::from(CLOUD_HEADER);
    let _ = writeln!(s, "{:>12} {:>9} {:>12} {:>8}", "tolerance", "accuracy", "completeness", "f-score");
    for m in metrics {
        let _ = writeln!(
            s,
            "{:>12.6} {:>9.4} {:>12.4} {:>8.4}",
            m.tolerance, m.accuracy, m.completeness, m.f_score
        );
    }
    s
}

pub fn depth_table(rows: &[(String, DepthErrorStats)], absolute: bool) -> String {
    let kind = if absolute { "absolute" } else { "relative" };
    let mut s = format!(
        "# fraction of pixels with {kind} depth error below each threshold\n\
         # denominator: every mask pixel with ground truth; discarded pixels count as errors\n"
    );
    if let Some((_, first)) = rows.first() {
        let _ = write!(s, "{:<28} {:>9}", "map", "pixels");
        for t in &first.thresholds {
            let _ = write!(s, " {:>10}", format!("< {t}"));
        }
        s.push('\n');
    }
    for (name, st) in rows {
        let _ = write!(s, "{name:<28} {:>9}", st.evaluated);
        for f in &st.frac_below {
            let _ = write!(s, " {f:>10.4}");
        }
        s.push('\n');
    }
    s
}

#[derive(Serialize)]
struct ViewReport {
    id: usize,
    scores: MaskScores,
}

#[derive(Serialize)]
struct RunReport<'a> {
    config_hash: &'a str,
    dataset: &'a str,
    points: usize,
    cloud: Vec<CloudMetrics>,
    relative_threshold: f64,
    views: Vec<ViewReport>,
}

/// Scores a run against its ground truth, when there is one, and writes
/// `report.txt` and `report.json` next to the other artifacts.
pub fn write_run_report(out: &Path, rec: &Reconstruction) -> Result<String> {
    let mut text = format!(
        "{}: {} points, config {}\n",
        rec.manifest.dataset,
        rec.cloud.len(),
        rec.manifest.config_hash
    );
    let mut report = RunReport {
        config_hash: &rec.manifest.config_hash,
        dataset: &rec.manifest.dataset,
        points: rec.cloud.len(),
        cloud: Vec::new(),
        relative_threshold: REL_THRESHOLD,
        views: Vec::new(),
    };
    if let Some(truths) = &rec.truths {
        let gt = truth_cloud(&rec.views, truths, &rec.config.fusion)?;
        io::write_ply(&out.join("gt_cloud.ply"), &gt)?;
        let (lo, hi) = truths
            .iter()
            .flat_map(|t| t.depth.iter().copied())
            .filter(|&d| d > 0.0)
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d), hi.max(d)));
        if !rec.cloud.is_empty() {
            for t in scaled_thresholds(lo, hi) {
                report.cloud.push(cloud_metrics(&rec.cloud, &gt, t)?);
            }
            text.push_str(&cloud_table(&report.cloud));
        }
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |f| format!("{f:.4}"));
        let _ = writeln!(
            text,
            "# per view: fraction of pixels with relative depth error < {REL_THRESHOLD}\n\
             # denominator: every ground-truth pixel of the mask; discarded pixels count as errors"
        );
        let _ = writeln!(text, "{:<6} {:>11} {:>9} {:>9}", "view", "textureless", "textured", "all");
        for (i, t) in truths.iter().enumerate() {
            let scores = score_view(&rec.maps[i], t)?;
            let _ = writeln!(
                text,
                "{:<6} {:>11} {:>9} {:>9}",
                i,
                cell(scores.textureless),
                cell(scores.textured),
                cell(scores.all)
            );
            report.views.push(ViewReport { id: i, scores });
        }
    }
    std::fs::write(out.join("report.txt"), &text)?;
    std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(text)
}
