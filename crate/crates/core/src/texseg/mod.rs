//! Textureless-aware segmentation: Roberts edges closed by Hough line
//! segments, connected regions of the remainder, and RANSAC planarization
//! of the large ones.

pub mod hough;

pub use hough::{hough_lines, rasterize, LineSegment};

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{CameraView, Vec3};
use crate::grid::{Grid, Luma};
use crate::icrefine::{ransac_plane, RefineConfig, RegionLabelMap};
use crate::pmstereo::{HypothesisMap, PixelState};
use crate::rng;

/// Width of the ring of outside pixels that also supports a region's plane.
pub const COLLAR_RADIUS: usize = 5;

const TAG_TEXSEG: u64 = 0x7e5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegError {
    #[error("invalid segmentation configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegConfig {
    pub edge_threshold: f64,
    pub hough_rho_res: f64,
    pub hough_theta_res: f64,
    pub hough_votes_min: usize,
    pub hough_gap_max: usize,
    pub hough_len_min: usize,
    /// Fraction of the image area.
    pub textureless_min_area: f64,
    pub dilation_radius: usize,
}

impl Default for SegConfig {
    fn default() -> Self {
        Self {
            edge_threshold: 0.05,
            hough_rho_res: 1.0,
            hough_theta_res: std::f64::consts::PI / 180.0,
            hough_votes_min: 50,
            hough_gap_max: 5,
            hough_len_min: 30,
            textureless_min_area: 0.01,
            dilation_radius: 1,
        }
    }
}

impl SegConfig {
    pub fn validate(&self) -> Result<(), SegError> {
        let bad = |m: &str| Err(SegError::InvalidConfig(m.to_string()));
        if !(self.edge_threshold > 0.0) {
            return bad("edge_threshold must be positive");
        }
        if !(self.hough_rho_res > 0.0) || !(self.hough_theta_res > 0.0) {
            return bad("hough resolutions must be positive");
        }
        if self.hough_theta_res > std::f64::consts::PI {
            return bad("hough_theta_res must not exceed pi");
        }
        if self.hough_votes_min == 0 || self.hough_gap_max == 0 || self.hough_len_min == 0 {
            return bad("hough counts must be positive");
        }
        if !(self.textureless_min_area > 0.0 && self.textureless_min_area < 1.0) {
            return bad("textureless_min_area must be in (0, 1)");
        }
        if self.dilation_radius == 0 {
            return bad("dilation_radius must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeMap {
    pub magnitude: Grid<f64>,
    /// `magnitude > edge_threshold`.
    pub binary: Grid<bool>,
}

/// Roberts cross magnitude `√(gx² + gy²)` with `gx = I(x,y) − I(x+1,y+1)`
/// and `gy = I(x+1,y) − I(x,y+1)`. The last row and column are zero.
pub fn roberts_edges(image: &Luma, cfg: &SegConfig) -> EdgeMap {
    let (w, h) = image.dims();
    let mut magnitude = Grid::new(w, h, 0.0);
    if w >= 2 && h >= 2 {
        magnitude
            .as_mut_slice()
            .par_chunks_mut(w)
            .take(h - 1)
            .enumerate()
            .for_each(|(y, row)| {
                for (x, m) in row.iter_mut().take(w - 1).enumerate() {
                    let gx = image.get(x, y) - image.get(x + 1, y + 1);
                    let gy = image.get(x + 1, y) - image.get(x, y + 1);
                    *m = (gx * gx + gy * gy).sqrt();
                }
            });
    }
    let binary = magnitude.map(|&m| m > cfg.edge_threshold);
    EdgeMap { magnitude, binary }
}

/// Square (Chebyshev) dilation, done separably.
pub fn dilate(mask: &Grid<bool>, radius: usize) -> Grid<bool> {
    let (w, h) = mask.dims();
    let r = radius as i64;
    let mut rows = Grid::new(w, h, false);
    for y in 0..h {
        for x in 0..w {
            let lo = (x as i64 - r).max(0) as usize;
            let hi = (x as i64 + r).min(w as i64 - 1) as usize;
            *rows.get_mut(x, y) = (lo..=hi).any(|q| *mask.get(q, y));
        }
    }
    let mut out = Grid::new(w, h, false);
    for y in 0..h {
        let lo = (y as i64 - r).max(0) as usize;
        let hi = (y as i64 + r).min(h as i64 - 1) as usize;
        for x in 0..w {
            *out.get_mut(x, y) = (lo..=hi).any(|q| *rows.get(x, q));
        }
    }
    out
}

fn neighbors4(i: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (i % w, i / w);
    [
        (x > 0).then(|| i - 1),
        (x + 1 < w).then(|| i + 1),
        (y > 0).then(|| i - w),
        (y + 1 < h).then(|| i + w),
    ]
    .into_iter()
    .flatten()
}

/// Everything the segmentation computes, for inspection and dumps.
#[derive(Clone, Debug)]
pub struct Segmentation {
    pub edges: EdgeMap,
    pub lines: Vec<LineSegment>,
    /// Dilated union of edge pixels and rasterized segments.
    pub boundary: Grid<bool>,
    /// Regions after boundary pixels were folded in.
    pub regions: RegionLabelMap,
    pub textureless: Vec<bool>,
}

/// Full segmentation of one view.
///
/// Regions are the 4-connected components of the non-boundary pixels. A
/// region is textureless when that component covers at least
/// `textureless_min_area` of the image; boundary pixels are then handed to
/// the nearest region by multi-source breadth-first search, so the labels
/// partition the image.
pub fn segment(view: &CameraView, cfg: &SegConfig) -> Segmentation {
    let img = &view.image;
    let (w, h) = img.dims();
    let n = w * h;
    let edges = roberts_edges(img, cfg);
    let lines = hough_lines(&edges, cfg);
    let mut raw = edges.binary.clone();
    for seg in &lines {
        rasterize(seg, &mut raw);
    }
    let boundary = dilate(&raw, cfg.dilation_radius);

    const NONE: u32 = u32::MAX;
    let mut labels = vec![NONE; n];
    let mut sizes: Vec<usize> = Vec::new();
    let mut queue = VecDeque::new();
    for s in 0..n {
        if boundary[s] || labels[s] != NONE {
            continue;
        }
        let id = sizes.len() as u32;
        labels[s] = id;
        queue.push_back(s);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            for q in neighbors4(i, w, h) {
                if !boundary[q] && labels[q] == NONE {
                    labels[q] = id;
                    queue.push_back(q);
                }
            }
        }
        sizes.push(size);
    }
    let min_area = cfg.textureless_min_area * n as f64;
    let mut textureless: Vec<bool> = sizes.iter().map(|&s| s as f64 >= min_area).collect();

    if sizes.is_empty() {
        labels.fill(0);
        textureless.push(false);
    } else {
        // seeds in index order, so ties go to the earliest labelled pixel
        queue.extend((0..n).filter(|&i| labels[i] != NONE));
        while let Some(i) = queue.pop_front() {
            for q in neighbors4(i, w, h) {
                if labels[q] == NONE {
                    labels[q] = labels[i];
                    queue.push_back(q);
                }
            }
        }
    }
    let regions = RegionLabelMap {
        labels: Grid::from_vec(w, h, labels).expect("label grid matches the image"),
        num_regions: textureless.len(),
    };
    Segmentation {
        edges,
        lines,
        boundary,
        regions,
        textureless,
    }
}

/// Region labels and per-region textureless flags.
pub fn segment_textureless(view: &CameraView, cfg: &SegConfig) -> (RegionLabelMap, Vec<bool>) {
    let s = segment(view, cfg);
    (s.regions, s.textureless)
}

/// Pixels within `COLLAR_RADIUS` of the region but outside it.
fn collar(regions: &RegionLabelMap, pixels: &[usize], label: u32) -> Vec<usize> {
    let (w, h) = regions.dims();
    let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
    for &i in pixels {
        let (x, y) = (i % w, i / w);
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let r = COLLAR_RADIUS;
    let (bx0, by0) = (x0.saturating_sub(r), y0.saturating_sub(r));
    let (bx1, by1) = ((x1 + r).min(w - 1), (y1 + r).min(h - 1));
    let (bw, bh) = (bx1 - bx0 + 1, by1 - by0 + 1);
    let inside = Grid::from_fn(bw, bh, |x, y| *regions.labels.get(x + bx0, y + by0) == label);
    let grown = dilate(&inside, r);
    let mut out = Vec::new();
    for y in 0..bh {
        for x in 0..bw {
            if *grown.get(x, y) && !*inside.get(x, y) {
                out.push((y + by0) * w + x + bx0);
            }
        }
    }
    out
}

/// Fits a plane per flagged region to its Confident pixels plus the
/// Confident pixels of a `COLLAR_RADIUS` ring around it, and moves every
/// non-Confident pixel of the region onto that plane (state Filled).
/// Regions without a model and unflagged regions are left as they are.
pub fn planarize_textureless(
    map: &HypothesisMap,
    view: &CameraView,
    regions: &RegionLabelMap,
    flags: &[bool],
    refine_cfg: &RefineConfig,
) -> HypothesisMap {
    assert_eq!(map.dims(), regions.dims());
    assert_eq!(flags.len(), regions.num_regions);
    let w = map.width();
    let members = regions.members();
    let updates: Vec<(usize, crate::geom::PlaneHypothesis)> = members
        .par_iter()
        .enumerate()
        .filter(|(label, _)| flags[*label])
        .flat_map_iter(|(label, pixels)| {
            let support: Vec<usize> = pixels
                .iter()
                .copied()
                .chain(collar(regions, pixels, label as u32))
                .filter(|&i| map.state[i] == PixelState::Confident)
                .collect();
            let points: Vec<Vec3> = support
                .iter()
                .map(|&i| view.ray(i % w, i / w) * map.hyps[i].depth)
                .collect();
            let weights = vec![1.0; points.len()];
            let mut r = rng::stream(refine_cfg.rng_seed, &[TAG_TEXSEG, view.id as u64, label as u64]);
            let fit = ransac_plane(&points, &weights, refine_cfg, &mut r);
            pixels
                .iter()
                .copied()
                .filter(|&i| map.state[i] != PixelState::Confident)
                .filter_map(move |i| {
                    let model = fit.as_ref()?.model;
                    model.hypothesis(&view.ray(i % w, i / w)).map(|hyp| (i, hyp))
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let mut out = map.clone();
    for (i, hyp) in updates {
        out.hyps[i] = hyp;
        out.state[i] = PixelState::Filled;
    }
    out
}
