//! Color-weighted median filtering of depths with mean normals.

use rayon::prelude::*;

use super::RefineConfig;
use crate::geom::{CameraView, PlaneHypothesis, Vec3};
use crate::grid::Grid;
use crate::pmstereo::{HypothesisMap, PixelState};

/// Smallest value whose cumulative weight (ascending order) reaches half
/// the total weight. `None` for empty input or non-positive total weight.
///
/// Uses weighted quickselect, so the input order is scrambled.
pub fn weighted_median(items: &mut [(f64, f64)]) -> Option<f64> {
    let total: f64 = items.iter().map(|p| p.1).sum();
    if items.is_empty() || !(total > 0.0) {
        return None;
    }
    let half = total * 0.5;
    // Weight strictly below the current window.
    let mut below = 0.0;
    let mut lo = 0;
    let mut hi = items.len();
    loop {
        let slice = &mut items[lo..hi];
        let pivot = median_of_three(slice);
        // three-way partition: [< pivot | == pivot | > pivot]
        let (mut lt, mut i, mut gt) = (0, 0, slice.len());
        while i < gt {
            if slice[i].0 < pivot {
                slice.swap(lt, i);
                lt += 1;
                i += 1;
            } else if slice[i].0 > pivot {
                gt -= 1;
                slice.swap(i, gt);
            } else {
                i += 1;
            }
        }
        let w_lt: f64 = slice[..lt].iter().map(|p| p.1).sum();
        let w_eq: f64 = slice[lt..gt].iter().map(|p| p.1).sum();
        if lt > 0 && below + w_lt >= half {
            hi = lo + lt;
        } else if below + w_lt + w_eq >= half {
            return Some(pivot);
        } else {
            below += w_lt + w_eq;
            lo += gt;
            if lo >= hi {
                // rounding pushed the threshold past the last element
                return items.iter().map(|p| p.0).reduce(f64::max);
            }
        }
    }
}

fn median_of_three(s: &[(f64, f64)]) -> f64 {
    let a = s[0].0;
    let b = s[s.len() / 2].0;
    let c = s[s.len() - 1].0;
    if (a <= b) == (b <= c) {
        b
    } else if (b <= a) == (a <= c) {
        a
    } else {
        c
    }
}

/// Replaces the hypothesis of every `target` pixel by the color-weighted
/// median depth of non-target neighbors (within `wmf_radius`) whose state
/// is in `sources`. The normal is the weighted mean of the normals of
/// sources within `accept_rel_tol` of the median depth. Updated pixels
/// become Filled; pixels without sources are left untouched.
pub fn weighted_median_filter(
    map: &HypothesisMap,
    view: &CameraView,
    target: &Grid<bool>,
    sources: &[PixelState],
    cfg: &RefineConfig,
) -> HypothesisMap {
    let (w, h) = map.dims();
    assert!(target.dims() == (w, h) && view.image.dims() == (w, h));
    let r = cfg.wmf_radius as i64;
    let inv = 1.0 / (2.0 * cfg.wmf_sigma_color * cfg.wmf_sigma_color);
    let img = &view.image;
    let updates: Vec<(usize, PlaneHypothesis)> = (0..w * h)
        .into_par_iter()
        .filter(|&i| target[i])
        .filter_map(|i| {
            let (x, y) = (i % w, i / w);
            let center = img[i];
            let mut items = Vec::new();
            let mut normals = Vec::new();
            for qy in (y as i64 - r).max(0)..=(y as i64 + r).min(h as i64 - 1) {
                for qx in (x as i64 - r).max(0)..=(x as i64 + r).min(w as i64 - 1) {
                    let q = qy as usize * w + qx as usize;
                    if target[q] || !sources.contains(&map.state[q]) {
                        continue;
                    }
                    let d = img[q] - center;
                    let wt = (-d * d * inv).exp();
                    items.push((map.hyps[q].depth, wt));
                    normals.push((map.hyps[q].depth, wt, map.hyps[q].normal));
                }
            }
            let depth = weighted_median(&mut items)?;
            let mut n = Vec3::zeros();
            for (d, wt, nq) in &normals {
                if ((d - depth) / depth).abs() <= cfg.accept_rel_tol {
                    n += nq * *wt;
                }
            }
            if !(n.norm() > 1e-12) {
                n = normals
                    .iter()
                    .find(|(d, _, _)| *d == depth)
                    .map(|t| t.2)
                    .unwrap_or(map.hyps[i].normal);
            }
            Some((i, PlaneHypothesis::oriented(depth, n, &view.ray(x, y))))
        })
        .collect();
    let mut out = map.clone();
    for (i, hyp) in updates {
        out.hyps[i] = hyp;
        out.state[i] = PixelState::Filled;
    }
    out
}
