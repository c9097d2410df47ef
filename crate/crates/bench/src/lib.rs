//! Inputs shared by the stage benchmarks.

use tsar_core::geom::{CameraView, PlaneHypothesis, Vec3};
use tsar_core::grid::Grid;
use tsar_core::pipeline::{truth_at_views, Dataset};
use tsar_core::pmstereo::HypothesisMap;
use tsar_core::rng::unit_hash;
use tsar_core::synthgen::ViewTruth;

/// A built-in scene at reduced resolution with its ground truth.
pub struct Scene {
    pub views: Vec<CameraView>,
    pub truths: Vec<ViewTruth>,
}

impl Scene {
    pub fn load(name: &str, factor: usize) -> Self {
        let data = Dataset::synthetic(name).expect("built-in scene");
        let views: Vec<CameraView> = data.views.iter().map(|v| v.downsampled(factor)).collect();
        let truths = truth_at_views(data.truth.as_ref().expect("synthetic truth"), &views);
        Self { views, truths }
    }

    /// Exact maps for every view.
    pub fn exact_maps(&self) -> Vec<HypothesisMap> {
        self.truths.iter().map(ViewTruth::hypothesis_map).collect()
    }

    /// Ground truth of view `i` with ±0.5% depth noise, a 10% share of
    /// gross outliers and costs spread over [0, 1.2).
    pub fn noisy_map(&self, i: usize, seed: u64) -> HypothesisMap {
        let (view, truth) = (&self.views[i], &self.truths[i]);
        let (w, h) = truth.depth.dims();
        let u = |k: u64, p: usize| unit_hash(seed, &[k, p as u64]);
        let hyps = Grid::from_fn(w, h, |x, y| {
            let p = y * w + x;
            let ray = view.ray(x, y);
            let d = *truth.depth.get(x, y);
            if d <= 0.0 {
                return PlaneHypothesis::oriented(10.0, Vec3::new(0.0, 0.0, -1.0), &ray);
            }
            let scale = if u(0, p) < 0.1 {
                0.6 + 0.8 * u(1, p)
            } else {
                1.0 + 0.01 * (u(1, p) - 0.5)
            };
            PlaneHypothesis::oriented(d * scale, *truth.normal.get(x, y), &ray)
        });
        let cost = Grid::from_fn(w, h, |x, y| 1.2 * u(2, y * w + x));
        HypothesisMap::new(hyps, cost)
    }
}
