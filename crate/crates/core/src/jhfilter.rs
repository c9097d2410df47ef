//! Joint hypothesis filtering.
//!
//! A per-pixel confidence derived from the matching cost is multiplied by
//! the complement of a depth discontinuity flag. Pixels whose aggregate
//! score falls below the threshold are marked [`PixelState::Discarded`];
//! their hypotheses stay in the map so later stages can restore them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;
use crate::pmstereo::{HypothesisMap, PixelState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("invalid filter configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Falloff of the Gaussian confidence, in cost units.
    pub sigma_conf: f64,
    /// Side of the square median window (odd).
    pub disc_window: usize,
    /// Relative deviation from the local median that counts as a jump.
    pub disc_rel_threshold: f64,
    pub score_threshold: f64,
    pub enable_confidence: bool,
    pub enable_discontinuity: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            sigma_conf: 0.3,
            disc_window: 5,
            disc_rel_threshold: 0.05,
            score_threshold: 0.5,
            enable_confidence: true,
            enable_discontinuity: true,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        let bad = |m: &str| Err(FilterError::InvalidConfig(m.to_string()));
        if !(self.sigma_conf > 0.0) {
            return bad("sigma_conf must be positive");
        }
        if self.disc_window < 3 || self.disc_window % 2 == 0 {
            return bad("disc_window must be odd and >= 3");
        }
        if !(self.disc_rel_threshold > 0.0 && self.disc_rel_threshold < 1.0) {
            return bad("disc_rel_threshold must be in (0, 1)");
        }
        if !(self.score_threshold > 0.0 && self.score_threshold < 1.0) {
            return bad("score_threshold must be in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap {
    pub confidence: Grid<f64>,
    pub discontinuity: Grid<bool>,
    pub aggregate: Grid<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FilterWarning {
    /// More than 99% of pixels were discarded; parameters are likely off.
    AllDiscarded { fraction: f64 },
}

#[derive(Clone, Debug)]
pub struct JointFilterOutput {
    pub map: HypothesisMap,
    pub scores: ScoreMap,
    pub warning: Option<FilterWarning>,
}

/// `exp(−cost² / (2 σ²))` per pixel.
pub fn confidence_estimate(map: &HypothesisMap, cfg: &FilterConfig) -> Grid<f64> {
    let denom = 2.0 * cfg.sigma_conf * cfg.sigma_conf;
    map.cost.map(|c| (-(c * c) / denom).exp())
}

/// Lower median of `values` (reorders the slice).
fn lower_median(values: &mut [f64]) -> f64 {
    let k = (values.len() - 1) / 2;
    *values.select_nth_unstable_by(k, f64::total_cmp).1
}

/// Flags pixels whose depth deviates from the window median by more than
/// `disc_rel_threshold` relative to the median. Windows are clipped at the
/// border; even-sized clipped windows use the lower median.
pub fn discontinuity_detect(map: &HypothesisMap, cfg: &FilterConfig) -> Grid<bool> {
    let (w, h) = map.dims();
    let r = (cfg.disc_window / 2) as i64;
    let mut buf = Vec::with_capacity(cfg.disc_window * cfg.disc_window);
    Grid::from_fn(w, h, |x, y| {
        buf.clear();
        for dy in -r..=r {
            for dx in -r..=r {
                if let Some(hq) = map.hyps.get_checked(x as i64 + dx, y as i64 + dy) {
                    buf.push(hq.depth);
                }
            }
        }
        let med = lower_median(&mut buf);
        let d = map.hyps.get(x, y).depth;
        (d - med).abs() / med > cfg.disc_rel_threshold
    })
}

pub fn score_map(map: &HypothesisMap, cfg: &FilterConfig) -> ScoreMap {
    let (w, h) = map.dims();
    let confidence = if cfg.enable_confidence {
        confidence_estimate(map, cfg)
    } else {
        Grid::new(w, h, 1.0)
    };
    let discontinuity = if cfg.enable_discontinuity {
        discontinuity_detect(map, cfg)
    } else {
        Grid::new(w, h, false)
    };
    let aggregate = Grid::from_fn(w, h, |x, y| {
        if *discontinuity.get(x, y) {
            0.0
        } else {
            *confidence.get(x, y)
        }
    });
    ScoreMap {
        confidence,
        discontinuity,
        aggregate,
    }
}

/// Scores every pixel and discards Confident pixels whose aggregate score
/// is strictly below `score_threshold`.
pub fn joint_filter(map: &HypothesisMap, cfg: &FilterConfig) -> Result<JointFilterOutput, FilterError> {
    cfg.validate()?;
    let scores = score_map(map, cfg);
    let mut out = map.clone();
    for (i, s) in out.state.as_mut_slice().iter_mut().enumerate() {
        if *s == PixelState::Confident && scores.aggregate[i] < cfg.score_threshold {
            *s = PixelState::Discarded;
        }
    }
    let fraction = out.state_counts().discarded as f64 / out.state.len() as f64;
    let warning = (fraction > 0.99).then(|| {
        log::warn!("joint filter discarded {:.1}% of pixels", fraction * 100.0);
        FilterWarning::AllDiscarded { fraction }
    });
    Ok(JointFilterOutput {
        map: out,
        scores,
        warning,
    })
}
