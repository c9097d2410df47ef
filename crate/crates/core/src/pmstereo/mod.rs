//! Baseline PatchMatch multi-view stereo.
//!
//! Random plane initialization followed by red/black checkerboard
//! propagation, scored with a bilateral-weighted NCC aggregated over the
//! best half of the source views.

mod cost;
mod propagate;

pub use cost::{
    best_half_mean, bilateral_ncc_cost, multiview_cost, RefPatch, SourceSet, SpatialKernel,
};
pub use propagate::{checkerboard_iterate, half_pass, Parity, VisitOrder};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{CameraView, PlaneHypothesis, Vec3};
use crate::grid::Grid;
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PatchMatchError {
    #[error("invalid PatchMatch configuration: {0}")]
    InvalidConfig(String),
    #[error("PatchMatch needs at least one source view")]
    InsufficientViews,
    #[error("map is {got:?} but the reference view is {expected:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
}

/// Per-pixel reliability state carried through the refinement stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PixelState {
    Confident,
    /// Provisionally rejected; the hypothesis is kept for possible restoration.
    Discarded,
    /// Assigned by refinement or planarization.
    Filled,
}

/// Per-image hypotheses, matching costs and pixel states.
#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisMap {
    pub hyps: Grid<PlaneHypothesis>,
    pub cost: Grid<f64>,
    pub state: Grid<PixelState>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateCounts {
    pub confident: usize,
    pub discarded: usize,
    pub filled: usize,
}

impl HypothesisMap {
    /// Map with every pixel Confident.
    pub fn new(hyps: Grid<PlaneHypothesis>, cost: Grid<f64>) -> Self {
        assert!(hyps.same_dims(&cost));
        let state = Grid::new(hyps.width(), hyps.height(), PixelState::Confident);
        Self { hyps, cost, state }
    }

    pub fn width(&self) -> usize {
        self.hyps.width()
    }

    pub fn height(&self) -> usize {
        self.hyps.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.hyps.dims()
    }

    pub fn depth_grid(&self) -> Grid<f64> {
        self.hyps.map(|h| h.depth)
    }

    /// Depths with Discarded pixels zeroed, the on-disk convention.
    pub fn masked_depth_grid(&self) -> Grid<f64> {
        Grid::from_fn(self.width(), self.height(), |x, y| {
            if *self.state.get(x, y) == PixelState::Discarded {
                0.0
            } else {
                self.hyps.get(x, y).depth
            }
        })
    }

    pub fn state_counts(&self) -> StateCounts {
        let mut c = StateCounts::default();
        for s in self.state.iter() {
            match s {
                PixelState::Confident => c.confident += 1,
                PixelState::Discarded => c.discarded += 1,
                PixelState::Filled => c.filled += 1,
            }
        }
        c
    }

    pub fn mean_cost(&self) -> f64 {
        self.cost.iter().sum::<f64>() / self.cost.len() as f64
    }
}

/// PatchMatch parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchMatchConfig {
    pub iterations: usize,
    pub patch_radius: usize,
    pub depth_min: f64,
    pub depth_max: f64,
    /// `None` uses every supplied source view.
    pub num_src_views: Option<usize>,
    pub bilateral_sigma_spatial: f64,
    pub bilateral_sigma_color: f64,
    pub cost_max: f64,
    /// Set from the run seed, not from configuration files.
    #[serde(skip)]
    pub rng_seed: u64,
}

impl Default for PatchMatchConfig {
    fn default() -> Self {
        Self {
            iterations: 4,
            patch_radius: 5,
            depth_min: 1.0,
            depth_max: 5.0,
            num_src_views: None,
            bilateral_sigma_spatial: 5.0,
            bilateral_sigma_color: 0.12,
            cost_max: 2.0,
            rng_seed: 0,
        }
    }
}

impl PatchMatchConfig {
    pub fn validate(&self) -> Result<(), PatchMatchError> {
        let bad = |m: &str| Err(PatchMatchError::InvalidConfig(m.to_string()));
        if self.iterations < 1 {
            return bad("iterations must be >= 1");
        }
        if self.patch_radius < 1 {
            return bad("patch_radius must be >= 1");
        }
        if !(self.depth_min > 0.0 && self.depth_min <= self.depth_max) {
            return bad("need 0 < depth_min <= depth_max");
        }
        if !(self.bilateral_sigma_spatial > 0.0 && self.bilateral_sigma_color > 0.0) {
            return bad("bilateral sigmas must be positive");
        }
        if !(self.cost_max > 0.0) {
            return bad("cost_max must be positive");
        }
        if self.num_src_views == Some(0) {
            return bad("num_src_views must be positive");
        }
        Ok(())
    }
}

/// Uniform random unit normal facing the camera along `ray`.
pub(crate) fn random_normal(rng: &mut impl Rng, ray: &Vec3) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-9 {
            let v = v / n;
            return if v.dot(ray) >= 0.0 { -v } else { v };
        }
    }
}

pub(crate) fn random_hypothesis(
    rng: &mut impl Rng,
    ray: &Vec3,
    cfg: &PatchMatchConfig,
) -> PlaneHypothesis {
    let depth = if cfg.depth_max > cfg.depth_min {
        rng.gen_range(cfg.depth_min..cfg.depth_max)
    } else {
        cfg.depth_min
    };
    PlaneHypothesis {
        depth,
        normal: random_normal(rng, ray),
    }
}

const TAG_INIT: u64 = 0x1417;

/// Random plane per pixel, with costs evaluated against `srcs`.
pub fn random_init(
    reference: &CameraView,
    srcs: &[CameraView],
    cfg: &PatchMatchConfig,
) -> Result<HypothesisMap, PatchMatchError> {
    cfg.validate()?;
    if srcs.is_empty() {
        return Err(PatchMatchError::InsufficientViews);
    }
    let (w, h) = (reference.width(), reference.height());
    let hyps: Vec<PlaneHypothesis> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (x, y) = (i % w, i / w);
            let mut r = rng::stream(cfg.rng_seed, &[TAG_INIT, reference.id as u64, i as u64]);
            random_hypothesis(&mut r, &reference.ray(x, y), cfg)
        })
        .collect();
    let hyps = Grid::from_vec(w, h, hyps).expect("sized");
    let sources = SourceSet::new(reference, srcs, cfg);
    let kernel = SpatialKernel::new(cfg.patch_radius, cfg.bilateral_sigma_spatial);
    let cost: Vec<f64> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (x, y) = (i % w, i / w);
            let patch = RefPatch::new(&reference.image, x, y, &kernel, cfg.bilateral_sigma_color);
            sources.cost(&patch, &reference.ray(x, y), hyps.get(x, y))
        })
        .collect();
    Ok(HypothesisMap::new(
        hyps,
        Grid::from_vec(w, h, cost).expect("sized"),
    ))
}

/// Full PatchMatch run: random initialization plus `cfg.iterations`
/// checkerboard iterations.
pub fn run_patchmatch(
    reference: &CameraView,
    srcs: &[CameraView],
    cfg: &PatchMatchConfig,
) -> Result<HypothesisMap, PatchMatchError> {
    run_patchmatch_iters(reference, srcs, cfg, cfg.iterations)
}

/// As [`run_patchmatch`] with an explicit iteration count (0 returns the
/// random initialization).
pub fn run_patchmatch_iters(
    reference: &CameraView,
    srcs: &[CameraView],
    cfg: &PatchMatchConfig,
    iterations: usize,
) -> Result<HypothesisMap, PatchMatchError> {
    let mut map = random_init(reference, srcs, cfg)?;
    for it in 0..iterations {
        map = checkerboard_iterate(map, reference, srcs, cfg, it)?;
        log::debug!(
            "view {} iteration {} mean cost {:.4}",
            reference.id,
            it,
            map.mean_cost()
        );
    }
    Ok(map)
}
