//! Red/black checkerboard propagation and random refinement.

use rand::Rng;
use rayon::prelude::*;

use crate::geom::{CameraView, PlaneHypothesis, Vec3};
use crate::rng;

use super::cost::{RefPatch, SourceSet, SpatialKernel};
use super::{random_hypothesis, random_normal, HypothesisMap, PatchMatchConfig, PatchMatchError};

/// Checkerboard color of pixel `(x, y)`: red when `x + y` is even.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parity {
    Red,
    Black,
}

impl Parity {
    #[inline]
    fn matches(self, x: usize, y: usize) -> bool {
        ((x + y) % 2 == 0) == (self == Parity::Red)
    }

    fn tag(self) -> u64 {
        match self {
            Parity::Red => 0,
            Parity::Black => 1,
        }
    }
}

/// Order in which same-parity pixels are visited within a half-pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VisitOrder {
    RowMajor,
    Reverse,
}

/// Nearest opposite-parity neighbors: the 4-neighborhood plus a
/// rotationally symmetric quartet at distance √5.
const NEAR: [(i64, i64); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 2),
    (-2, 1),
    (-1, -2),
    (2, -1),
];
const FAR_DIRS: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
const FAR_STEPS: [i64; 2] = [8, 16];

const DEPTH_JITTER: f64 = 0.5;
const NORMAL_JITTER_DEG: f64 = 10.0;
const TAG_PROPAGATE: u64 = 0x7072;

fn perturb_normal(rng: &mut impl Rng, normal: &Vec3, max_angle: f64, ray: &Vec3) -> Vec3 {
    let perp = loop {
        let r = random_normal(rng, ray);
        let p = r - normal * r.dot(normal);
        if p.norm() > 1e-6 {
            break p.normalize();
        }
    };
    let a = rng.gen_range(0.0..=max_angle);
    let n = normal * a.cos() + perp * a.sin();
    if n.dot(ray) >= 0.0 {
        -n
    } else {
        n
    }
}

/// Depth scaled by `exp(u)`, `u ∈ [-0.5, 0.5]`, normal kept.
fn depth_jittered(
    rng: &mut impl Rng,
    hyp: &PlaneHypothesis,
    cfg: &PatchMatchConfig,
) -> PlaneHypothesis {
    let u: f64 = rng.gen_range(-DEPTH_JITTER..=DEPTH_JITTER);
    PlaneHypothesis {
        depth: (hyp.depth * u.exp()).clamp(cfg.depth_min, cfg.depth_max),
        normal: hyp.normal,
    }
}

/// Normal tilted by at most 10°, depth kept.
fn normal_jittered(rng: &mut impl Rng, hyp: &PlaneHypothesis, ray: &Vec3) -> PlaneHypothesis {
    PlaneHypothesis {
        depth: hyp.depth,
        normal: perturb_normal(rng, &hyp.normal, NORMAL_JITTER_DEG.to_radians(), ray),
    }
}

/// Hypothesis of neighbor `(qx, qy)` transferred onto the ray of `(x, y)`
/// by intersecting with the neighbor's plane.
#[inline]
fn transferred(
    map: &HypothesisMap,
    reference: &CameraView,
    q: (usize, usize),
    ray: &Vec3,
    cfg: &PatchMatchConfig,
) -> Option<PlaneHypothesis> {
    let hq = map.hyps.get(q.0, q.1);
    let depth = hq.depth_along(&reference.ray(q.0, q.1), ray)?;
    (depth >= cfg.depth_min && depth <= cfg.depth_max)
        .then(|| PlaneHypothesis::oriented(depth, hq.normal, ray))
}

/// Neighbor planes transferred onto `(x, y)` plus one fresh random
/// hypothesis.
fn propagation_candidates(
    map: &HypothesisMap,
    reference: &CameraView,
    x: usize,
    y: usize,
    ray: &Vec3,
    cfg: &PatchMatchConfig,
    rng: &mut impl Rng,
) -> Vec<PlaneHypothesis> {
    let mut out = Vec::with_capacity(NEAR.len() + FAR_DIRS.len() + 1);
    for (dx, dy) in NEAR {
        let (qx, qy) = (x as i64 + dx, y as i64 + dy);
        if map.hyps.contains(qx, qy) {
            if let Some(h) = transferred(map, reference, (qx as usize, qy as usize), ray, cfg) {
                out.push(h);
            }
        }
    }
    // In each direction take whichever long-range sample currently has the
    // lower cost.
    for (dx, dy) in FAR_DIRS {
        let best = FAR_STEPS
            .iter()
            .filter_map(|&s| {
                let (qx, qy) = (x as i64 + dx * s, y as i64 + dy * s);
                map.cost
                    .get_checked(qx, qy)
                    .map(|&c| (c, (qx as usize, qy as usize)))
            })
            .min_by(|a, b| a.0.total_cmp(&b.0));
        if let Some((_, q)) = best {
            if let Some(h) = transferred(map, reference, q, ray, cfg) {
                out.push(h);
            }
        }
    }
    out.push(random_hypothesis(rng, ray, cfg));
    out
}

/// One half-pass over the pixels of `parity`. Each pixel first tries its
/// neighbors' planes and a random hypothesis, then a depth-only and a
/// normal-only perturbation of the winner. Everything is read from the
/// pre-pass state, so the result does not depend on `order`.
#[allow(clippy::too_many_arguments)]
pub fn half_pass(
    map: HypothesisMap,
    reference: &CameraView,
    sources: &SourceSet<'_>,
    kernel: &SpatialKernel,
    cfg: &PatchMatchConfig,
    iteration: usize,
    parity: Parity,
    order: VisitOrder,
) -> HypothesisMap {
    let (w, h) = map.dims();
    let mut pixels: Vec<usize> = (0..w * h)
        .filter(|&i| parity.matches(i % w, i / w))
        .collect();
    if order == VisitOrder::Reverse {
        pixels.reverse();
    }
    let updates: Vec<(usize, PlaneHypothesis, f64)> = pixels
        .par_iter()
        .filter_map(|&i| {
            let (x, y) = (i % w, i / w);
            let patch = RefPatch::new(&reference.image, x, y, kernel, cfg.bilateral_sigma_color);
            if patch.is_degenerate() {
                return None;
            }
            let ray = reference.ray(x, y);
            let mut r = rng::stream(
                cfg.rng_seed,
                &[
                    TAG_PROPAGATE,
                    reference.id as u64,
                    iteration as u64,
                    parity.tag(),
                    i as u64,
                ],
            );
            let mut best_cost = *map.cost.get(x, y);
            let mut best = None;
            let mut consider = |cand: PlaneHypothesis, best: &mut Option<PlaneHypothesis>| {
                let c = sources.cost(&patch, &ray, &cand);
                if c < best_cost {
                    best_cost = c;
                    *best = Some(cand);
                }
            };
            for cand in propagation_candidates(&map, reference, x, y, &ray, cfg, &mut r) {
                consider(cand, &mut best);
            }
            // Refine whatever propagation settled on.
            let current = best.unwrap_or(*map.hyps.get(x, y));
            consider(depth_jittered(&mut r, &current, cfg), &mut best);
            consider(normal_jittered(&mut r, &current, &ray), &mut best);
            best.map(|hyp| (i, hyp, best_cost))
        })
        .collect();
    let mut map = map;
    for (i, hyp, c) in updates {
        map.hyps[i] = hyp;
        map.cost[i] = c;
    }
    map
}

/// One full iteration: red half-pass then black half-pass.
pub fn checkerboard_iterate(
    map: HypothesisMap,
    reference: &CameraView,
    srcs: &[CameraView],
    cfg: &PatchMatchConfig,
    iteration: usize,
) -> Result<HypothesisMap, PatchMatchError> {
    cfg.validate()?;
    if srcs.is_empty() {
        return Err(PatchMatchError::InsufficientViews);
    }
    let expected = (reference.width(), reference.height());
    if map.dims() != expected {
        return Err(PatchMatchError::DimensionMismatch {
            expected,
            got: map.dims(),
        });
    }
    let sources = SourceSet::new(reference, srcs, cfg);
    let kernel = SpatialKernel::new(cfg.patch_radius, cfg.bilateral_sigma_spatial);
    let map = half_pass(
        map,
        reference,
        &sources,
        &kernel,
        cfg,
        iteration,
        Parity::Red,
        VisitOrder::RowMajor,
    );
    Ok(half_pass(
        map,
        reference,
        &sources,
        &kernel,
        cfg,
        iteration,
        Parity::Black,
        VisitOrder::RowMajor,
    ))
}
