//! Multi-view consistency fusion of per-view hypothesis maps into a point
//! cloud.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{angle_between, project, unproject, CameraView, Vec2, Vec3};
use crate::grid::Grid;
use crate::pmstereo::{HypothesisMap, PixelState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("invalid fusion parameters: {0}")]
    InvalidParams(String),
    #[error("{views} views but {maps} maps")]
    CountMismatch { views: usize, maps: usize },
    #[error("map {index} is {got:?} but its view is {expected:?}")]
    DimensionMismatch {
        index: usize,
        expected: (usize, usize),
        got: (usize, usize),
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionWarning {
    EmptyOutput,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionParams {
    /// Strict upper bound on `|d_src − d_proj| / d_proj`.
    pub max_rel_depth_diff: f64,
    /// Strict upper bound on the world-frame normal angle, degrees.
    pub max_normal_angle: f64,
    /// Inclusive bound on the reprojection error, pixels.
    pub max_reproj_error: f64,
    /// Consistent other views needed to emit a point.
    pub min_consistent_views: usize,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            max_rel_depth_diff: 0.01,
            max_normal_angle: 30.0,
            max_reproj_error: 2.0,
            min_consistent_views: 2,
        }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<(), FusionError> {
        let bad = |m: &str| Err(FusionError::InvalidParams(m.to_string()));
        if !(self.max_rel_depth_diff > 0.0) {
            return bad("max_rel_depth_diff must be positive");
        }
        if !(self.max_normal_angle > 0.0) {
            return bad("max_normal_angle must be positive");
        }
        if !(self.max_reproj_error > 0.0) {
            return bad("max_reproj_error must be positive");
        }
        if self.min_consistent_views == 0 {
            return bad("min_consistent_views must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CloudPoint {
    pub position: Vec3,
    pub normal: Vec3,
    pub color: [f64; 3],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<CloudPoint>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.points.iter().map(|p| p.position).collect()
    }
}

/// What the three checks measure for one (reference pixel, source view) pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub src_pixel: (usize, usize),
    pub src_depth: f64,
    /// `|d_src − d_proj| / d_proj`.
    pub rel_depth_diff: f64,
    /// Between world-frame normals, degrees.
    pub normal_angle: f64,
    pub reproj_error: f64,
    /// World point of the source pixel at its own depth.
    pub src_point: Vec3,
    pub src_normal: Vec3,
}

impl Correspondence {
    pub fn is_consistent(&self, params: &FusionParams) -> bool {
        self.rel_depth_diff < params.max_rel_depth_diff
            && self.normal_angle < params.max_normal_angle
            && self.reproj_error <= params.max_reproj_error
    }
}

/// Follows a reference pixel into `src`. `None` when the projection leaves
/// the image, lands behind the camera or on a Discarded source pixel.
pub fn correspondence(
    reference: &CameraView,
    ref_map: &HypothesisMap,
    src: &CameraView,
    src_map: &HypothesisMap,
    pixel: (usize, usize),
) -> Option<Correspondence> {
    let (x, y) = pixel;
    let hyp = ref_map.hyps.get(x, y);
    let world = unproject(reference, &Vec2::new(x as f64, y as f64), hyp.depth).ok()?;
    let (q, d_proj) = project(src, &world).ok()?;
    let (qx, qy) = (q.x.round(), q.y.round());
    if !src_map.state.contains(qx as i64, qy as i64) {
        return None;
    }
    let (qx, qy) = (qx as usize, qy as usize);
    if *src_map.state.get(qx, qy) == PixelState::Discarded {
        return None;
    }
    let src_hyp = src_map.hyps.get(qx, qy);
    let src_point = unproject(src, &Vec2::new(qx as f64, qy as f64), src_hyp.depth).ok()?;
    let (back, _) = project(reference, &src_point).ok()?;
    let ref_normal = reference.pose.dir_to_world(&hyp.normal);
    let src_normal = src.pose.dir_to_world(&src_hyp.normal);
    Some(Correspondence {
        src_pixel: (qx, qy),
        src_depth: src_hyp.depth,
        rel_depth_diff: (src_hyp.depth - d_proj).abs() / d_proj,
        normal_angle: angle_between(&ref_normal, &src_normal).to_degrees(),
        reproj_error: (back - Vec2::new(x as f64, y as f64)).norm(),
        src_point,
        src_normal,
    })
}

/// Source pixel and depth of a consistent match, or `None`.
pub fn check_consistency(
    reference: &CameraView,
    ref_map: &HypothesisMap,
    src: &CameraView,
    src_map: &HypothesisMap,
    pixel: (usize, usize),
    params: &FusionParams,
) -> Option<((usize, usize), f64)> {
    correspondence(reference, ref_map, src, src_map, pixel)
        .filter(|c| c.is_consistent(params))
        .map(|c| (c.src_pixel, c.src_depth))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionOutput {
    pub cloud: PointCloud,
    pub warning: Option<FusionWarning>,
}

/// Every view serves as reference in index order. A non-Discarded pixel
/// with at least `min_consistent_views` consistent, still unused matches in
/// other views yields one point: the mean of its own and its matches' world
/// points, with the renormalized mean world normal and the reference color.
/// The reference pixel and its matches are then used up.
pub fn fuse(
    views: &[CameraView],
    maps: &[HypothesisMap],
    params: &FusionParams,
) -> Result<FusionOutput, FusionError> {
    params.validate()?;
    if views.len() != maps.len() {
        return Err(FusionError::CountMismatch {
            views: views.len(),
            maps: maps.len(),
        });
    }
    for (index, (v, m)) in views.iter().zip(maps).enumerate() {
        let expected = (v.width(), v.height());
        if m.dims() != expected {
            return Err(FusionError::DimensionMismatch {
                index,
                expected,
                got: m.dims(),
            });
        }
    }
    let mut used: Vec<Grid<bool>> = maps.iter().map(|m| Grid::new(m.width(), m.height(), false)).collect();
    let mut points = Vec::new();
    for (r, (reference, ref_map)) in views.iter().zip(maps).enumerate() {
        let w = ref_map.width();
        let snapshot = &used;
        let candidates: Vec<(usize, Vec<(usize, Correspondence)>)> = (0..ref_map.hyps.len())
            .into_par_iter()
            .filter(|&i| ref_map.state[i] != PixelState::Discarded && !snapshot[r][i])
            .filter_map(|i| {
                let pixel = (i % w, i / w);
                let matches: Vec<(usize, Correspondence)> = views
                    .iter()
                    .zip(maps)
                    .enumerate()
                    .filter(|(s, _)| *s != r)
                    .filter_map(|(s, (src, src_map))| {
                        correspondence(reference, ref_map, src, src_map, pixel)
                            .filter(|c| c.is_consistent(params))
                            .filter(|c| !snapshot[s][c.src_pixel])
                            .map(|c| (s, c))
                    })
                    .collect();
                (matches.len() >= params.min_consistent_views).then_some((i, matches))
            })
            .collect();
        // Sequential pass: earlier pixels of this reference may have used
        // up a source pixel since the snapshot.
        for (i, matches) in candidates {
            let fresh: Vec<&(usize, Correspondence)> = matches
                .iter()
                .filter(|(s, c)| !used[*s][c.src_pixel])
                .collect();
            if fresh.len() < params.min_consistent_views {
                continue;
            }
            let (x, y) = (i % w, i / w);
            let hyp = ref_map.hyps[i];
            let Ok(own) = unproject(reference, &Vec2::new(x as f64, y as f64), hyp.depth) else {
                continue;
            };
            let mut position = own;
            let mut normal = reference.pose.dir_to_world(&hyp.normal);
            for (s, c) in &fresh {
                position += c.src_point;
                normal += c.src_normal;
                used[*s][c.src_pixel] = true;
            }
            used[r][i] = true;
            position /= (fresh.len() + 1) as f64;
            if !(normal.norm() > 1e-12) || !position.iter().all(|v| v.is_finite()) {
                continue;
            }
            points.push(CloudPoint {
                position,
                normal: normal.normalize(),
                color: reference.color_at(x, y),
            });
        }
    }
    let warning = points.is_empty().then_some(FusionWarning::EmptyOutput);
    if warning.is_some() {
        log::warn!("fusion produced an empty cloud");
    }
    Ok(FusionOutput {
        cloud: PointCloud { points },
        warning,
    })
}
