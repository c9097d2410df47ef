//! (ρ, θ) Hough voting, peak extraction and segment tracing.

use rayon::prelude::*;

use super::{EdgeMap, SegConfig};
use crate::geom::Vec2;
use crate::grid::Grid;

/// Detected line piece. `rho` and `theta` are the accumulator bin centers;
/// the endpoints are projected onto that line.
#[derive(Clone, Debug, PartialEq)]
pub struct LineSegment {
    pub rho: f64,
    pub theta: f64,
    pub endpoints: [Vec2; 2],
    pub votes: usize,
}

impl LineSegment {
    pub fn length(&self) -> f64 {
        (self.endpoints[1] - self.endpoints[0]).norm()
    }

    /// Perpendicular distance of `p` to the supporting line.
    pub fn distance_to(&self, p: &Vec2) -> f64 {
        (p.x * self.theta.cos() + p.y * self.theta.sin() - self.rho).abs()
    }
}

/// Bin layout of the accumulator. Rho bins are symmetric around zero so
/// that `(ρ, θ − π)` and `(−ρ, θ)` share a bin index.
#[derive(Clone, Debug)]
pub(crate) struct Accumulator {
    pub votes: Grid<u32>,
    pub thetas: Vec<f64>,
    pub rho_res: f64,
    pub rho_max: f64,
}

impl Accumulator {
    pub fn n_rho(&self) -> usize {
        self.votes.width()
    }

    pub fn rho_of(&self, bin: usize) -> f64 {
        bin as f64 * self.rho_res - self.rho_max
    }
}

pub(crate) fn edge_points(edges: &EdgeMap) -> Vec<(usize, usize)> {
    let (w, h) = edges.binary.dims();
    (0..w * h)
        .filter(|&i| edges.binary[i])
        .map(|i| (i % w, i / w))
        .collect()
}

/// One row of the accumulator per theta bin, one column per rho bin.
pub(crate) fn accumulate(points: &[(usize, usize)], dims: (usize, usize), cfg: &SegConfig) -> Accumulator {
    let (w, h) = dims;
    let n_theta = ((std::f64::consts::PI / cfg.hough_theta_res).round() as usize).max(1);
    let thetas: Vec<f64> = (0..n_theta).map(|k| k as f64 * cfg.hough_theta_res).collect();
    let diag = ((w * w + h * h) as f64).sqrt();
    let half = (diag / cfg.hough_rho_res).ceil() as usize;
    let rho_max = half as f64 * cfg.hough_rho_res;
    let n_rho = 2 * half + 1;
    let mut acc = Accumulator {
        votes: Grid::new(n_rho, n_theta, 0u32),
        thetas,
        rho_res: cfg.hough_rho_res,
        rho_max,
    };
    let rows: Vec<Vec<u32>> = acc
        .thetas
        .par_iter()
        .map(|&t| {
            let (c, s) = (t.cos(), t.sin());
            let mut row = vec![0u32; n_rho];
            for &(x, y) in points {
                let rho = x as f64 * c + y as f64 * s;
                let bin = ((rho + rho_max) / cfg.hough_rho_res).round() as usize;
                row[bin] += 1;
            }
            row
        })
        .collect();
    for (k, row) in rows.into_iter().enumerate() {
        for (b, v) in row.into_iter().enumerate() {
            *acc.votes.get_mut(b, k) = v;
        }
    }
    acc
}

/// Neighbors of accumulator cell (b, k) in its 3×3 neighborhood; theta
/// wraps around with rho mirrored.
fn cell_neighbors(acc: &Accumulator, b: usize, k: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
    let n_theta = acc.thetas.len() as i64;
    let n_rho = acc.n_rho() as i64;
    (-1i64..=1).flat_map(move |dk| {
        (-1i64..=1).filter_map(move |db| {
            if dk == 0 && db == 0 {
                return None;
            }
            let mut kk = k as i64 + dk;
            let mut bb = b as i64 + db;
            if kk < 0 || kk >= n_theta {
                kk = kk.rem_euclid(n_theta);
                bb = n_rho - 1 - bb;
            }
            (0..n_rho).contains(&bb).then_some((bb as usize, kk as usize))
        })
    })
}

/// Local maxima with at least `hough_votes_min` votes. Plateaus keep only
/// the cell with the smallest (theta, rho) index.
pub(crate) fn peaks(acc: &Accumulator, cfg: &SegConfig) -> Vec<(usize, usize)> {
    let (n_rho, n_theta) = acc.votes.dims();
    let min = cfg.hough_votes_min as u32;
    (0..n_theta)
        .into_par_iter()
        .flat_map_iter(|k| {
            (0..n_rho).filter_map(move |b| {
                let v = *acc.votes.get(b, k);
                if v < min {
                    return None;
                }
                let here = (k, b);
                let is_peak = cell_neighbors(acc, b, k).all(|(bb, kk)| {
                    let u = *acc.votes.get(bb, kk);
                    u < v || (u == v && here < (kk, bb))
                });
                is_peak.then_some((b, k))
            })
        })
        .collect()
}

/// Splits the unclaimed edge points near a line into maximal runs along it
/// and claims the points of every kept run.
fn trace(
    points: &[(usize, usize)],
    claimed: &mut [bool],
    rho: f64,
    theta: f64,
    votes: usize,
    cfg: &SegConfig,
) -> Vec<LineSegment> {
    let (c, s) = (theta.cos(), theta.sin());
    let mut near: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|(j, _)| !claimed[*j])
        .filter_map(|(j, &(x, y))| {
            let (x, y) = (x as f64, y as f64);
            ((x * c + y * s - rho).abs() <= cfg.hough_rho_res).then_some((-x * s + y * c, j))
        })
        .collect();
    near.sort_by(|a, b| a.0.total_cmp(&b.0));
    let foot = Vec2::new(rho * c, rho * s);
    let dir = Vec2::new(-s, c);
    let mut out = Vec::new();
    let mut start = 0;
    for end in 1..=near.len() {
        if end < near.len() && near[end].0 - near[end - 1].0 <= cfg.hough_gap_max as f64 {
            continue;
        }
        let run = &near[start..end];
        let (a, b) = (run[0].0, run[run.len() - 1].0);
        if b - a >= cfg.hough_len_min as f64 {
            for &(_, j) in run {
                claimed[j] = true;
            }
            out.push(LineSegment {
                rho,
                theta,
                endpoints: [foot + dir * a, foot + dir * b],
                votes,
            });
        }
        start = end;
    }
    out
}

/// Hough line detection over the binary edge pixels. Segments come in
/// descending vote order, then ascending (rho, theta), then along the line.
pub fn hough_lines(edges: &EdgeMap, cfg: &SegConfig) -> Vec<LineSegment> {
    let points = edge_points(edges);
    if points.is_empty() {
        return Vec::new();
    }
    let acc = accumulate(&points, edges.binary.dims(), cfg);
    let mut peaks: Vec<(usize, f64, f64)> = peaks(&acc, cfg)
        .into_iter()
        .map(|(b, k)| (*acc.votes.get(b, k) as usize, acc.rho_of(b), acc.thetas[k]))
        .collect();
    peaks.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.total_cmp(&b.1)).then(a.2.total_cmp(&b.2)));
    // Strong peaks claim their pixels first, so the weaker butterfly
    // peaks around a line find nothing left to trace.
    let mut claimed = vec![false; points.len()];
    peaks
        .into_iter()
        .flat_map(|(votes, rho, theta)| trace(&points, &mut claimed, rho, theta, votes, cfg))
        .collect()
}

/// Marks every pixel within half a pixel of the segment.
pub fn rasterize(seg: &LineSegment, mask: &mut Grid<bool>) {
    let [a, b] = seg.endpoints;
    let steps = ((b - a).norm() * 2.0).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let p = a + (b - a) * (i as f64 / steps as f64);
        let (x, y) = (p.x.round() as i64, p.y.round() as i64);
        if mask.contains(x, y) {
            *mask.get_mut(x as usize, y as usize) = true;
        }
    }
}
