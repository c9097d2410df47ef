//! Weighted RANSAC plane fitting on camera-frame points.

use nalgebra::SymmetricEigen;
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use super::{PlaneModel, RefineConfig};
use crate::geom::{Mat3, Vec3};

#[derive(Clone, Debug, PartialEq)]
pub struct PlaneFit {
    /// Least-squares refit on the inliers of the best hypothesis.
    pub model: PlaneModel,
    /// Indices of the best hypothesis' inliers, ascending.
    pub inliers: Vec<usize>,
}

/// `|z_plane − z| / z` along the ray through `p`; infinite when the ray
/// misses the plane.
#[inline]
pub fn relative_residual(model: &PlaneModel, p: &Vec3) -> f64 {
    let ray = p / p.z;
    match model.depth_along(&ray) {
        Some(z) => ((z - p.z) / p.z).abs(),
        None => f64::INFINITY,
    }
}

/// Sampler for triples of distinct indices, weighted when at least three
/// points carry positive weight.
enum Sampler {
    Weighted(WeightedIndex<f64>),
    Uniform(usize),
}

impl Sampler {
    fn new(weights: &[f64]) -> Self {
        let positive = weights.iter().filter(|&&w| w > 0.0).count();
        if positive >= 3 {
            if let Ok(wi) = WeightedIndex::new(weights.iter().map(|&w| w.max(0.0))) {
                return Sampler::Weighted(wi);
            }
        }
        Sampler::Uniform(weights.len())
    }

    fn one(&self, rng: &mut impl Rng) -> usize {
        match self {
            Sampler::Weighted(wi) => wi.sample(rng),
            Sampler::Uniform(n) => rng.gen_range(0..*n),
        }
    }

    fn triple(&self, rng: &mut impl Rng) -> [usize; 3] {
        let a = self.one(rng);
        let mut b = self.one(rng);
        while b == a {
            b = self.one(rng);
        }
        let mut c = self.one(rng);
        while c == a || c == b {
            c = self.one(rng);
        }
        [a, b, c]
    }
}

/// Weighted least-squares plane: weighted centroid and the smallest
/// eigenvector of the weighted covariance.
fn refit(points: &[Vec3], weights: &[f64], idx: &[usize]) -> Option<PlaneModel> {
    let mut wsum: f64 = idx.iter().map(|&i| weights[i].max(0.0)).sum();
    let uniform = !(wsum > 0.0);
    if uniform {
        wsum = idx.len() as f64;
    }
    let wt = |i: usize| if uniform { 1.0 } else { weights[i].max(0.0) };
    let centroid = idx.iter().map(|&i| points[i] * wt(i)).sum::<Vec3>() / wsum;
    let mut cov = Mat3::zeros();
    for &i in idx {
        let d = points[i] - centroid;
        cov += d * d.transpose() * wt(i);
    }
    let eig = SymmetricEigen::new(cov);
    let k = eig.eigenvalues.imin();
    let n: Vec3 = eig.eigenvectors.column(k).into_owned();
    PlaneModel::new(n, n.dot(&centroid))
}

/// RANSAC over `ransac_iters` weighted triples. The best hypothesis has the
/// most inliers (ties: smaller mean inlier residual) and is refit by
/// weighted least squares. `None` for fewer than three points or when the
/// best inlier fraction is below `ransac_min_inlier_frac`.
pub fn ransac_plane(
    points: &[Vec3],
    weights: &[f64],
    cfg: &RefineConfig,
    rng: &mut impl Rng,
) -> Option<PlaneFit> {
    assert_eq!(points.len(), weights.len());
    let n = points.len();
    if n < 3 {
        return None;
    }
    let sampler = Sampler::new(weights);
    let tol = cfg.ransac_rel_inlier_tol;
    let mut best: Option<(usize, f64, PlaneModel)> = None;
    for _ in 0..cfg.ransac_iters {
        let [a, b, c] = sampler.triple(rng);
        let Some(model) = PlaneModel::through(&points[a], &points[b], &points[c]) else {
            continue;
        };
        let mut count = 0;
        let mut resid = 0.0;
        for p in points {
            let r = relative_residual(&model, p);
            if r <= tol {
                count += 1;
                resid += r;
            }
        }
        if count == 0 {
            continue;
        }
        let mean = resid / count as f64;
        let better = match &best {
            None => true,
            Some((bc, bm, _)) => count > *bc || (count == *bc && mean < *bm),
        };
        if better {
            best = Some((count, mean, model));
        }
    }
    let (count, _, model) = best?;
    if (count as f64) < cfg.ransac_min_inlier_frac * n as f64 {
        return None;
    }
    let inliers: Vec<usize> = (0..n)
        .filter(|&i| relative_residual(&model, &points[i]) <= tol)
        .collect();
    let model = refit(points, weights, &inliers).unwrap_or(model);
    Some(PlaneFit { model, inliers })
}
