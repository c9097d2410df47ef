//! Bilateral-weighted NCC photometric cost and multi-view aggregation.

use crate::geom::{CameraView, PairGeometry, PlaneHypothesis, Vec3};
use crate::grid::Luma;

use super::PatchMatchConfig;

const MIN_VARIANCE: f64 = 1e-12;

/// Spatial Gaussian over a square window, shared by every pixel.
#[derive(Clone, Debug)]
pub struct SpatialKernel {
    radius: i64,
    offsets: Vec<(i64, i64)>,
    weights: Vec<f64>,
}

impl SpatialKernel {
    pub fn new(radius: usize, sigma: f64) -> Self {
        let r = radius as i64;
        let mut offsets = Vec::new();
        let mut weights = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                offsets.push((dx, dy));
                weights.push((-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp());
            }
        }
        Self {
            radius: r,
            offsets,
            weights,
        }
    }

    pub fn radius(&self) -> usize {
        self.radius as usize
    }
}

/// Reference-side quantities of one patch: sample positions, bilateral
/// weights and the weighted-centered reference intensities.
#[derive(Clone, Debug)]
pub struct RefPatch {
    xs: Vec<f64>,
    ys: Vec<f64>,
    weights: Vec<f64>,
    centered: Vec<f64>,
    weight_sum: f64,
    variance: f64,
}

impl RefPatch {
    /// Patch around `(x, y)`, clipped to the image bounds.
    pub fn new(image: &Luma, x: usize, y: usize, kernel: &SpatialKernel, sigma_color: f64) -> Self {
        let n = kernel.offsets.len();
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n);
        let center = *image.get(x, y);
        let inv_two_sc2 = 1.0 / (2.0 * sigma_color * sigma_color);
        for (&(dx, dy), &ws) in kernel.offsets.iter().zip(&kernel.weights) {
            let qx = x as i64 + dx;
            let qy = y as i64 + dy;
            let Some(&v) = image.get_checked(qx, qy) else {
                continue;
            };
            let dc = v - center;
            xs.push(qx as f64);
            ys.push(qy as f64);
            weights.push(ws * (-dc * dc * inv_two_sc2).exp());
            values.push(v);
        }
        let weight_sum: f64 = weights.iter().sum();
        let mean = weights.iter().zip(&values).map(|(w, v)| w * v).sum::<f64>() / weight_sum;
        let centered: Vec<f64> = values.iter().map(|v| v - mean).collect();
        let variance = weights
            .iter()
            .zip(&centered)
            .map(|(w, c)| w * c * c)
            .sum::<f64>()
            / weight_sum;
        Self {
            xs,
            ys,
            weights,
            centered,
            weight_sum,
            variance,
        }
    }

    /// Weighted variance of the reference intensities.
    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.variance >= MIN_VARIANCE)
    }

    /// `1 − NCC_w` between this patch and `src` warped by the homography
    /// `h`, clamped to `[0, cost_max]`. Out-of-bounds samples and
    /// non-finite or degenerate warps cost `cost_max`.
    pub fn cost(&self, h: &crate::geom::Mat3, src: &Luma, cost_max: f64) -> f64 {
        if self.is_degenerate() {
            return cost_max;
        }
        let (h00, h01, h02) = (h[(0, 0)], h[(0, 1)], h[(0, 2)]);
        let (h10, h11, h12) = (h[(1, 0)], h[(1, 1)], h[(1, 2)]);
        let (h20, h21, h22) = (h[(2, 0)], h[(2, 1)], h[(2, 2)]);
        let mut s_sum = 0.0;
        let mut ss_sum = 0.0;
        let mut rs_sum = 0.0;
        for i in 0..self.xs.len() {
            let (x, y) = (self.xs[i], self.ys[i]);
            let w = h20 * x + h21 * y + h22;
            if !(w > 1e-15) {
                return cost_max;
            }
            let u = (h00 * x + h01 * y + h02) / w;
            let v = (h10 * x + h11 * y + h12) / w;
            let Some(s) = src.bilinear(u, v) else {
                return cost_max;
            };
            let wt = self.weights[i];
            s_sum += wt * s;
            ss_sum += wt * s * s;
            rs_sum += wt * self.centered[i] * s;
        }
        let inv_w = 1.0 / self.weight_sum;
        let mean_s = s_sum * inv_w;
        let var_s = ss_sum * inv_w - mean_s * mean_s;
        if !(var_s >= MIN_VARIANCE) {
            return cost_max;
        }
        let ncc = rs_sum * inv_w / (self.variance * var_s).sqrt();
        if !ncc.is_finite() {
            return cost_max;
        }
        (1.0 - ncc).clamp(0.0, cost_max)
    }
}

/// Source views prepared for repeated cost evaluation against one reference.
pub struct SourceSet<'a> {
    pairs: Vec<(PairGeometry, &'a Luma)>,
    cost_max: f64,
}

impl<'a> SourceSet<'a> {
    pub fn new(reference: &CameraView, srcs: &'a [CameraView], cfg: &PatchMatchConfig) -> Self {
        let take = cfg.num_src_views.unwrap_or(srcs.len()).min(srcs.len());
        let pairs = srcs[..take]
            .iter()
            .map(|s| (PairGeometry::new(reference, s), &s.image))
            .collect();
        Self {
            pairs,
            cost_max: cfg.cost_max,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Per-view costs of `hyp` at the patch's pixel.
    pub fn view_costs(&self, patch: &RefPatch, ray: &Vec3, hyp: &PlaneHypothesis, out: &mut Vec<f64>) {
        out.clear();
        for (pair, img) in &self.pairs {
            let c = match pair.homography(ray, hyp) {
                Ok(h) => patch.cost(&h, img, self.cost_max),
                Err(_) => self.cost_max,
            };
            out.push(c);
        }
    }

    /// Aggregated multi-view cost (mean of the best half of the views).
    pub fn cost(&self, patch: &RefPatch, ray: &Vec3, hyp: &PlaneHypothesis) -> f64 {
        if patch.is_degenerate() {
            return self.cost_max;
        }
        let mut costs = Vec::with_capacity(self.pairs.len());
        self.view_costs(patch, ray, hyp, &mut costs);
        best_half_mean(&mut costs).unwrap_or(self.cost_max)
    }
}

/// Mean of the smallest `⌈n/2⌉` values. Reorders `costs`.
pub fn best_half_mean(costs: &mut [f64]) -> Option<f64> {
    if costs.is_empty() {
        return None;
    }
    let k = costs.len().div_ceil(2);
    costs.sort_unstable_by(f64::total_cmp);
    Some(costs[..k].iter().sum::<f64>() / k as f64)
}

/// Bilateral-weighted NCC cost of `hyp` at pixel `(x, y)` between
/// `reference` and a single `src` view.
pub fn bilateral_ncc_cost(
    reference: &CameraView,
    src: &CameraView,
    x: usize,
    y: usize,
    hyp: &PlaneHypothesis,
    cfg: &PatchMatchConfig,
) -> f64 {
    let kernel = SpatialKernel::new(cfg.patch_radius, cfg.bilateral_sigma_spatial);
    let patch = RefPatch::new(&reference.image, x, y, &kernel, cfg.bilateral_sigma_color);
    let ray = reference.ray(x, y);
    match PairGeometry::new(reference, src).homography(&ray, hyp) {
        Ok(h) => patch.cost(&h, &src.image, cfg.cost_max),
        Err(_) => cfg.cost_max,
    }
}

/// Robust multi-view cost of `hyp` at `(x, y)` over `srcs`.
pub fn multiview_cost(
    reference: &CameraView,
    srcs: &[CameraView],
    x: usize,
    y: usize,
    hyp: &PlaneHypothesis,
    cfg: &PatchMatchConfig,
) -> f64 {
    let kernel = SpatialKernel::new(cfg.patch_radius, cfg.bilateral_sigma_spatial);
    let patch = RefPatch::new(&reference.image, x, y, &kernel, cfg.bilateral_sigma_color);
    SourceSet::new(reference, srcs, cfg).cost(&patch, &reference.ray(x, y), hyp)
}
