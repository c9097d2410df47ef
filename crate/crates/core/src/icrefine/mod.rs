//! Iterative correlation refinement: superpixel RANSAC planarization and
//! weighted median filtering that spread reliable hypotheses into
//! discarded pixels.

mod ransac;
mod slic;
mod wmf;

pub use ransac::{ransac_plane, relative_residual, PlaneFit};
pub use slic::superpixels;
pub use wmf::{weighted_median, weighted_median_filter};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{CameraView, PlaneHypothesis, Vec3};
use crate::grid::Grid;
use crate::pmstereo::{HypothesisMap, PixelState};
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RefineError {
    #[error("invalid refinement configuration: {0}")]
    InvalidConfig(String),
    #[error("map is {got:?} but the view is {expected:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
}

/// Integer region label per pixel, labels compact in `0..num_regions`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionLabelMap {
    pub labels: Grid<u32>,
    pub num_regions: usize,
}

impl RegionLabelMap {
    /// Relabels arbitrary labels to `0..n` in order of first appearance.
    pub fn compact(labels: &Grid<u32>) -> Self {
        let mut remap = std::collections::HashMap::new();
        let out = labels.map(|&l| {
            let next = remap.len() as u32;
            *remap.entry(l).or_insert(next)
        });
        Self {
            labels: out,
            num_regions: remap.len(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.labels.dims()
    }

    /// Pixel indices of every region.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_regions];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l as usize].push(i);
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.num_regions];
        for &l in self.labels.iter() {
            out[l as usize] += 1;
        }
        out
    }
}

/// Camera-frame plane `normal · X = dist`, stored with `dist >= 0` (the
/// normal then points away from the camera).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneModel {
    pub normal: Vec3,
    pub dist: f64,
}

impl PlaneModel {
    /// Normalizes and orients so that `dist >= 0`. `None` for a zero normal.
    pub fn new(normal: Vec3, dist: f64) -> Option<Self> {
        let len = normal.norm();
        if !(len > 1e-300) || !dist.is_finite() {
            return None;
        }
        let (n, d) = (normal / len, dist / len);
        Some(if d < 0.0 {
            Self { normal: -n, dist: -d }
        } else {
            Self { normal: n, dist: d }
        })
    }

    /// Plane through three points; `None` when they are (near) collinear.
    pub fn through(a: &Vec3, b: &Vec3, c: &Vec3) -> Option<Self> {
        let n = (b - a).cross(&(c - a));
        if n.norm() < 1e-12 {
            return None;
        }
        let n = n.normalize();
        Self::new(n, n.dot(a))
    }

    /// Depth (camera `z`) where the plane meets a `z = 1` ray.
    pub fn depth_along(&self, ray: &Vec3) -> Option<f64> {
        let denom = self.normal.dot(ray);
        if denom.abs() < 1e-12 {
            return None;
        }
        let z = self.dist / denom;
        (z.is_finite() && z > 0.0).then_some(z)
    }

    /// Hypothesis on this plane at `ray`, normal facing the camera.
    pub fn hypothesis(&self, ray: &Vec3) -> Option<PlaneHypothesis> {
        self.depth_along(ray)
            .map(|z| PlaneHypothesis::oriented(z, self.normal, ray))
    }

    pub fn signed_distance(&self, point: &Vec3) -> f64 {
        self.normal.dot(point) - self.dist
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    /// Target pixels per superpixel.
    pub superpixel_size: usize,
    pub slic_compactness: f64,
    pub ransac_iters: usize,
    pub ransac_rel_inlier_tol: f64,
    pub ransac_min_inlier_frac: f64,
    pub wmf_radius: usize,
    pub wmf_sigma_color: f64,
    pub accept_rel_tol: f64,
    pub outer_iters: usize,
    /// Set from the run seed, not from configuration files.
    #[serde(skip)]
    pub rng_seed: u64,
    pub enable_planarization: bool,
    pub enable_wmf: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            superpixel_size: 400,
            slic_compactness: 10.0,
            ransac_iters: 256,
            ransac_rel_inlier_tol: 0.01,
            ransac_min_inlier_frac: 0.5,
            wmf_radius: 7,
            wmf_sigma_color: 0.1,
            accept_rel_tol: 0.02,
            outer_iters: 2,
            rng_seed: 0,
            enable_planarization: true,
            enable_wmf: true,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<(), RefineError> {
        let bad = |m: &str| Err(RefineError::InvalidConfig(m.to_string()));
        if self.superpixel_size == 0 {
            return bad("superpixel_size must be positive");
        }
        if !(self.slic_compactness > 0.0) {
            return bad("slic_compactness must be positive");
        }
        if self.ransac_iters == 0 {
            return bad("ransac_iters must be positive");
        }
        if !(self.ransac_rel_inlier_tol > 0.0) {
            return bad("ransac_rel_inlier_tol must be positive");
        }
        if !(self.ransac_min_inlier_frac > 0.0 && self.ransac_min_inlier_frac <= 1.0) {
            return bad("ransac_min_inlier_frac must be in (0, 1]");
        }
        if self.wmf_radius == 0 {
            return bad("wmf_radius must be positive");
        }
        if !(self.wmf_sigma_color > 0.0) {
            return bad("wmf_sigma_color must be positive");
        }
        if !(self.accept_rel_tol > 0.0) {
            return bad("accept_rel_tol must be positive");
        }
        if self.outer_iters == 0 {
            return bad("outer_iters must be positive");
        }
        Ok(())
    }
}

const TAG_REFINE: u64 = 0x1c4;

enum Update {
    Restore(usize),
    Fill(usize, PlaneHypothesis),
}

/// Planarizes one superpixel against its Confident pixels.
fn planarize_superpixel(
    map: &HypothesisMap,
    view: &CameraView,
    pixels: &[usize],
    weights: Option<&Grid<f64>>,
    cfg: &RefineConfig,
    tags: [u64; 3],
) -> Vec<Update> {
    let w = map.width();
    let discarded: Vec<usize> = pixels
        .iter()
        .copied()
        .filter(|&i| map.state[i] == PixelState::Discarded)
        .collect();
    if discarded.is_empty() {
        return Vec::new();
    }
    let confident: Vec<usize> = pixels
        .iter()
        .copied()
        .filter(|&i| map.state[i] == PixelState::Confident)
        .collect();
    let points: Vec<Vec3> = confident
        .iter()
        .map(|&i| view.ray(i % w, i / w) * map.hyps[i].depth)
        .collect();
    let wts: Vec<f64> = confident
        .iter()
        .map(|&i| weights.map_or(1.0, |g| g[i]))
        .collect();
    let mut r = rng::stream(cfg.rng_seed, &tags);
    let Some(fit) = ransac_plane(&points, &wts, cfg, &mut r) else {
        return Vec::new();
    };
    let may_fill = fit.inliers.len() as f64 / pixels.len() as f64 >= cfg.ransac_min_inlier_frac;
    let mut out = Vec::new();
    for i in discarded {
        let ray = view.ray(i % w, i / w);
        let Some(z) = fit.model.depth_along(&ray) else {
            continue;
        };
        if ((map.hyps[i].depth - z) / z).abs() <= cfg.accept_rel_tol {
            out.push(Update::Restore(i));
        } else if may_fill {
            out.push(Update::Fill(i, PlaneHypothesis::oriented(z, fit.model.normal, &ray)));
        }
    }
    out
}

/// Two-phase refinement of a joint-filtered map. `weights` (aggregate
/// filter scores) steer RANSAC sampling; `None` means uniform.
///
/// Confident pixels are never modified. Discarded pixels are restored when
/// their own hypothesis agrees with their superpixel's plane, filled from
/// the plane otherwise, and finally filled by weighted median filtering
/// from nearby reliable pixels.
pub fn refine(
    map: &HypothesisMap,
    view: &CameraView,
    weights: Option<&Grid<f64>>,
    cfg: &RefineConfig,
) -> Result<HypothesisMap, RefineError> {
    cfg.validate()?;
    let expected = (view.width(), view.height());
    if map.dims() != expected {
        return Err(RefineError::DimensionMismatch {
            expected,
            got: map.dims(),
        });
    }
    if let Some(g) = weights {
        if g.dims() != expected {
            return Err(RefineError::DimensionMismatch {
                expected,
                got: g.dims(),
            });
        }
    }
    let mut map = map.clone();
    if map.state_counts().discarded == 0 {
        return Ok(map);
    }
    let (w, h) = expected;

    if cfg.enable_planarization {
        let regions = superpixels(view, cfg);
        let members = regions.members();
        for outer in 0..cfg.outer_iters {
            let updates: Vec<Update> = members
                .par_iter()
                .enumerate()
                .flat_map_iter(|(label, pixels)| {
                    let tags = [TAG_REFINE, view.id as u64, (outer as u64) << 32 | label as u64];
                    planarize_superpixel(&map, view, pixels, weights, cfg, tags)
                })
                .collect();
            let mut filled = Grid::new(w, h, false);
            for u in updates {
                match u {
                    Update::Restore(i) => map.state[i] = PixelState::Confident,
                    Update::Fill(i, hyp) => {
                        map.hyps[i] = hyp;
                        map.state[i] = PixelState::Filled;
                        filled[i] = true;
                    }
                }
            }
            if cfg.enable_wmf {
                map = weighted_median_filter(&map, view, &filled, &[PixelState::Confident], cfg);
            }
        }
    }

    if cfg.enable_wmf {
        let targets = map.state.map(|&s| s == PixelState::Discarded);
        map = weighted_median_filter(
            &map,
            view,
            &targets,
            &[PixelState::Confident, PixelState::Filled],
            cfg,
        );
    }
    Ok(map)
}
