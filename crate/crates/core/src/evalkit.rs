//! Point-cloud accuracy/completeness and depth-error fractions.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::fusion::PointCloud;
use crate::geom::Vec3;
use crate::grid::Grid;
use crate::pmstereo::{HypothesisMap, PixelState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("evaluation mask selects no pixels")]
    EmptyMask,
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("grids are {a:?} and {b:?}")]
    DimensionMismatch { a: (usize, usize), b: (usize, usize) },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CloudMetrics {
    pub accuracy: f64,
    pub completeness: f64,
    pub f_score: f64,
    pub tolerance: f64,
}

/// Harmonic mean, 0 when both are 0.
pub fn f_score(accuracy: f64, completeness: f64) -> f64 {
    if accuracy + completeness > 0.0 {
        2.0 * accuracy * completeness / (accuracy + completeness)
    } else {
        0.0
    }
}

/// Uniform grid hash with cell size equal to the query radius, so the 27
/// cells around a query hold every point within that radius.
pub struct SpatialHash<'a> {
    points: &'a [Vec3],
    cell: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl<'a> SpatialHash<'a> {
    pub fn new(points: &'a [Vec3], cell: f64) -> Self {
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self { points, cell, cells }
    }

    fn key(p: &Vec3, cell: f64) -> [i64; 3] {
        [
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        ]
    }

    /// Distance to the nearest point if it is closer than the cell size.
    pub fn nearest_within(&self, q: &Vec3) -> Option<f64> {
        let [kx, ky, kz] = Self::key(q, self.cell);
        let mut best = f64::INFINITY;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(idx) = self.cells.get(&[kx + dx, ky + dy, kz + dz]) {
                        for &i in idx {
                            best = best.min((self.points[i] - q).norm());
                        }
                    }
                }
            }
        }
        (best < self.cell).then_some(best)
    }
}

/// Fraction of `from` points with a `to` point closer than `tol`.
fn fraction_near(from: &[Vec3], to: &[Vec3], tol: f64) -> f64 {
    let hash = SpatialHash::new(to, tol);
    let hits = from.par_iter().filter(|p| hash.nearest_within(p).is_some()).count();
    hits as f64 / from.len() as f64
}

/// Accuracy: share of predicted points within `tolerance` (strictly) of
/// the ground truth. Completeness: the same from the ground-truth side.
pub fn cloud_metrics(pred: &PointCloud, gt: &PointCloud, tolerance: f64) -> Result<CloudMetrics, EvalError> {
    if pred.is_empty() || gt.is_empty() {
        return Err(EvalError::EmptyCloud);
    }
    if !(tolerance > 0.0) || !tolerance.is_finite() {
        return Err(EvalError::BadTolerance(tolerance));
    }
    let (p, g) = (pred.positions(), gt.positions());
    let accuracy = fraction_near(&p, &g, tolerance);
    let completeness = fraction_near(&g, &p, tolerance);
    Ok(CloudMetrics {
        accuracy,
        completeness,
        f_score: f_score(accuracy, completeness),
        tolerance,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DepthErrorStats {
    pub thresholds: Vec<f64>,
    /// Aligned with `thresholds`.
    pub frac_below: Vec<f64>,
    /// Denominator: every mask pixel, Discarded ones included.
    pub evaluated: usize,
}

impl DepthErrorStats {
    pub fn at(&self, threshold: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|&t| t == threshold)
            .map(|i| self.frac_below[i])
    }
}

fn error_stats(
    pred: &HypothesisMap,
    gt_depth: &Grid<f64>,
    mask: &Grid<bool>,
    thresholds: &[f64],
    error: impl Fn(f64, f64) -> f64,
) -> Result<DepthErrorStats, EvalError> {
    for dims in [gt_depth.dims(), mask.dims()] {
        if dims != pred.dims() {
            return Err(EvalError::DimensionMismatch { a: pred.dims(), b: dims });
        }
    }
    let pixels: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if pixels.is_empty() {
        return Err(EvalError::EmptyMask);
    }
    let errors: Vec<f64> = pixels
        .iter()
        .map(|&i| match pred.state[i] {
            PixelState::Discarded => f64::INFINITY,
            _ => error(pred.hyps[i].depth, gt_depth[i]),
        })
        .collect();
    let frac_below = thresholds
        .iter()
        .map(|&t| errors.iter().filter(|&&e| e < t).count() as f64 / pixels.len() as f64)
        .collect();
    Ok(DepthErrorStats {
        thresholds: thresholds.to_vec(),
        frac_below,
        evaluated: pixels.len(),
    })
}

/// Fraction of mask pixels with `|pred − gt| < t` per threshold. Discarded
/// pixels never count as below but stay in the denominator.
pub fn depth_error_stats(
    pred: &HypothesisMap,
    gt_depth: &Grid<f64>,
    mask: &Grid<bool>,
    thresholds: &[f64],
) -> Result<DepthErrorStats, EvalError> {
    error_stats(pred, gt_depth, mask, thresholds, |p, g| (p - g).abs())
}

/// As [`depth_error_stats`] with the relative error `|pred − gt| / gt`.
pub fn relative_depth_error_stats(
    pred: &HypothesisMap,
    gt_depth: &Grid<f64>,
    mask: &Grid<bool>,
    thresholds: &[f64],
) -> Result<DepthErrorStats, EvalError> {
    error_stats(pred, gt_depth, mask, thresholds, |p, g| (p - g).abs() / g)
}

/// The absolute thresholds standing in for 2 cm and 10 cm on a unit-less
/// scene: 0.4% and 2% of its depth range.
pub fn scaled_thresholds(depth_min: f64, depth_max: f64) -> [f64; 2] {
    let range = depth_max - depth_min;
    [0.004 * range, 0.02 * range]
}
