//! Stage ablations scored against ground truth on one view.

use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;

use crate::evalkit::{relative_depth_error_stats, EvalError};
use crate::grid::Grid;
use crate::pmstereo::{HypothesisMap, StateCounts};
use crate::synthgen::ViewTruth;

use super::{effective_config, patchmatch_view, post_process, truth_at_views, Dataset, PipelineConfig, PipelineError, Variant};

/// Relative depth error below which a pixel counts as correct.
pub const REL_THRESHOLD: f64 = 0.01;

/// Fraction of pixels with relative depth error below [`REL_THRESHOLD`]
/// per ground-truth mask. Every mask pixel is in the denominator; Discarded
/// pixels count as errors. `None` for an empty mask.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MaskScores {
    pub textureless: Option<f64>,
    pub textured: Option<f64>,
    pub all: Option<f64>,
}

fn frac(map: &HypothesisMap, truth: &ViewTruth, mask: &Grid<bool>) -> Result<Option<f64>, EvalError> {
    match relative_depth_error_stats(map, &truth.depth, mask, &[REL_THRESHOLD]) {
        Ok(s) => Ok(Some(s.frac_below[0])),
        Err(EvalError::EmptyMask) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn score_view(map: &HypothesisMap, truth: &ViewTruth) -> Result<MaskScores, EvalError> {
    Ok(MaskScores {
        textureless: frac(map, truth, &truth.textureless)?,
        textured: frac(map, truth, &truth.textured())?,
        all: frac(map, truth, &truth.valid())?,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub scores: MaskScores,
    pub counts: StateCounts,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Ablation {
    pub dataset: String,
    pub view: usize,
    pub rng_seed: u64,
    pub patchmatch_seconds: f64,
    pub rows: Vec<AblationRow>,
}

impl Ablation {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v.label())
    }

    pub fn table(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |f| format!("{f:.4}"));
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# {} view {} seed {}: fraction of pixels with relative depth error < {REL_THRESHOLD}",
            self.dataset, self.view, self.rng_seed
        );
        let _ = writeln!(s, "# denominator: every ground-truth pixel of the mask; discarded pixels count as errors");
        let _ = writeln!(
            s,
            "{:<12} {:>11} {:>9} {:>9} {:>10} {:>9} {:>8}",
            "variant", "textureless", "textured", "all", "confident", "filled", "seconds"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<12} {:>11} {:>9} {:>9} {:>10} {:>9} {:>8.2}",
                r.variant,
                cell(r.scores.textureless),
                cell(r.scores.textured),
                cell(r.scores.all),
                r.counts.confident,
                r.counts.filled,
                r.seconds
            );
        }
        s
    }
}

/// Runs PatchMatch once on `view` and every variant's post-processing on
/// that result. The dataset needs ground truth.
pub fn ablate(
    cfg: &PipelineConfig,
    dataset: &Dataset,
    view: usize,
    variants: &[Variant],
) -> Result<Ablation, PipelineError> {
    cfg.validate()?;
    let truth = dataset
        .truth
        .as_ref()
        .ok_or_else(|| PipelineError::MissingInput("ablation needs ground truth".into()))?;
    if view >= dataset.views.len() {
        return Err(PipelineError::MissingInput(format!("no view {view}")));
    }
    let views: Vec<_> = dataset.views.iter().map(|v| v.downsampled(cfg.run.downsample)).collect();
    let truths = truth_at_views(truth, &views);
    let config = effective_config(cfg, Some(&truths));
    let t = Instant::now();
    let initial = patchmatch_view(&views, view, &config.patchmatch_config())?;
    let patchmatch_seconds = t.elapsed().as_secs_f64();
    let mut rows = Vec::with_capacity(variants.len());
    for &v in variants {
        let t = Instant::now();
        let out = post_process(initial.clone(), &views[view], &v.apply(&config))?;
        rows.push(AblationRow {
            variant: v.label().to_string(),
            scores: score_view(&out.map, &truths[view])?,
            counts: out.map.state_counts(),
            seconds: t.elapsed().as_secs_f64(),
        });
        log::info!("{}: {:?}", v.label(), rows.last().map(|r| r.scores));
    }
    Ok(Ablation {
        dataset: dataset.name.clone(),
        view,
        rng_seed: config.run.rng_seed,
        patchmatch_seconds,
        rows,
    })
}
