//! SLIC superpixels in (x, y, L) with connectivity enforcement.

use std::collections::VecDeque;

use super::{RefineConfig, RegionLabelMap};
use crate::geom::CameraView;
use crate::grid::{Grid, Luma};

const ROUNDS: usize = 10;
/// Luminance in [0, 1] is scaled to the usual L* range.
const L_SCALE: f64 = 100.0;

#[derive(Clone, Copy, Debug)]
struct Center {
    x: f64,
    y: f64,
    l: f64,
}

fn gradient(img: &Luma, x: usize, y: usize) -> f64 {
    let at = |dx: i64, dy: i64| {
        *img.get_checked(x as i64 + dx, y as i64 + dy)
            .unwrap_or(img.get(x, y))
    };
    let gx = at(1, 0) - at(-1, 0);
    let gy = at(0, 1) - at(0, -1);
    gx * gx + gy * gy
}

fn seeds(img: &Luma, size: usize) -> (Vec<Center>, f64) {
    let (w, h) = img.dims();
    let step = (size as f64).sqrt();
    let nx = ((w as f64 / step).round() as usize).max(1);
    let ny = ((h as f64 / step).round() as usize).max(1);
    let (sx, sy) = (w as f64 / nx as f64, h as f64 / ny as f64);
    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let cx = ((i as f64 + 0.5) * sx) as usize;
            let cy = ((j as f64 + 0.5) * sy) as usize;
            // move to the lowest gradient position in the 3×3 neighborhood
            let mut best = (gradient(img, cx, cy), cx, cy);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (qx, qy) = (cx as i64 + dx, cy as i64 + dy);
                    if img.contains(qx, qy) {
                        let g = gradient(img, qx as usize, qy as usize);
                        if g < best.0 {
                            best = (g, qx as usize, qy as usize);
                        }
                    }
                }
            }
            out.push(Center {
                x: best.1 as f64,
                y: best.2 as f64,
                l: *img.get(best.1, best.2) * L_SCALE,
            });
        }
    }
    (out, sx.max(sy))
}

/// Keeps the largest 4-connected piece of every label and merges each
/// remaining fragment into the largest adjacent component.
fn enforce_connectivity(labels: &Grid<u32>) -> Grid<u32> {
    let (w, h) = labels.dims();
    let n = w * h;
    let mut comp = vec![usize::MAX; n];
    let mut comp_label = Vec::new();
    let mut comp_size = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = comp_label.len();
        let l = labels[start];
        comp[start] = id;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            for q in neighbors4(i, w, h) {
                if comp[q] == usize::MAX && labels[q] == l {
                    comp[q] = id;
                    queue.push_back(q);
                }
            }
        }
        comp_label.push(l);
        comp_size.push(size);
    }
    let ncomp = comp_label.len();
    // the largest component of each label keeps it
    let mut keeper: std::collections::HashMap<u32, usize> = std::collections::HashMap::new();
    for c in 0..ncomp {
        let e = keeper.entry(comp_label[c]).or_insert(c);
        if comp_size[c] > comp_size[*e] {
            *e = c;
        }
    }
    let mut adjacency = vec![Vec::new(); ncomp];
    for i in 0..n {
        for q in neighbors4(i, w, h) {
            if comp[q] != comp[i] {
                adjacency[comp[i]].push(comp[q]);
            }
        }
    }
    // union-find, fragments processed smallest first
    let mut parent: Vec<usize> = (0..ncomp).collect();
    fn find(p: &mut [usize], mut c: usize) -> usize {
        while p[c] != c {
            p[c] = p[p[c]];
            c = p[c];
        }
        c
    }
    let mut size = comp_size.clone();
    let mut fragments: Vec<usize> = (0..ncomp).filter(|&c| keeper[&comp_label[c]] != c).collect();
    fragments.sort_by_key(|&c| (comp_size[c], c));
    for c in fragments {
        let root = find(&mut parent, c);
        let mut target: Option<usize> = None;
        for &a in &adjacency[c] {
            let ra = find(&mut parent, a);
            if ra == root {
                continue;
            }
            target = match target {
                Some(t) if (size[t], std::cmp::Reverse(t)) >= (size[ra], std::cmp::Reverse(ra)) => Some(t),
                _ => Some(ra),
            };
        }
        if let Some(t) = target {
            parent[root] = t;
            size[t] += size[root];
        }
    }
    let mut out = Grid::new(w, h, 0u32);
    for i in 0..n {
        let r = find(&mut parent, comp[i]);
        out[i] = r as u32;
    }
    out
}

#[inline]
pub(crate) fn neighbors4(i: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (i % w, i / w);
    let mut out = [usize::MAX; 4];
    if x > 0 {
        out[0] = i - 1;
    }
    if x + 1 < w {
        out[1] = i + 1;
    }
    if y > 0 {
        out[2] = i - w;
    }
    if y + 1 < h {
        out[3] = i + w;
    }
    out.into_iter().filter(|&q| q != usize::MAX)
}

/// SLIC k-means over (x, y, 100·L) seeded on a grid of spacing
/// `√superpixel_size`, followed by connectivity enforcement.
pub fn superpixels(view: &CameraView, cfg: &RefineConfig) -> RegionLabelMap {
    let img = &view.image;
    let (w, h) = img.dims();
    let (mut centers, step) = seeds(img, cfg.superpixel_size);
    let spatial = (cfg.slic_compactness / step).powi(2);
    let reach = step.ceil() as i64;
    let mut labels = Grid::new(w, h, 0u32);
    let mut dist = Grid::new(w, h, f64::INFINITY);
    for _ in 0..ROUNDS {
        dist.as_mut_slice().fill(f64::INFINITY);
        for (k, c) in centers.iter().enumerate() {
            let (cx, cy) = (c.x.round() as i64, c.y.round() as i64);
            for y in (cy - reach).max(0)..(cy + reach + 1).min(h as i64) {
                for x in (cx - reach).max(0)..(cx + reach + 1).min(w as i64) {
                    let (x, y) = (x as usize, y as usize);
                    let dl = img.get(x, y) * L_SCALE - c.l;
                    let dx = x as f64 - c.x;
                    let dy = y as f64 - c.y;
                    let d = dl * dl + (dx * dx + dy * dy) * spatial;
                    let cell = dist.get_mut(x, y);
                    if d < *cell {
                        *cell = d;
                        *labels.get_mut(x, y) = k as u32;
                    }
                }
            }
        }
        let mut acc = vec![(0.0, 0.0, 0.0, 0usize); centers.len()];
        for y in 0..h {
            for x in 0..w {
                if dist.get(x, y).is_finite() {
                    let a = &mut acc[*labels.get(x, y) as usize];
                    a.0 += x as f64;
                    a.1 += y as f64;
                    a.2 += img.get(x, y) * L_SCALE;
                    a.3 += 1;
                }
            }
        }
        for (c, a) in centers.iter_mut().zip(&acc) {
            if a.3 > 0 {
                let n = a.3 as f64;
                *c = Center {
                    x: a.0 / n,
                    y: a.1 / n,
                    l: a.2 / n,
                };
            }
        }
    }
    // pixels out of every center's reach join their nearest seed spatially
    for y in 0..h {
        for x in 0..w {
            if !dist.get(x, y).is_finite() {
                let k = centers
                    .iter()
                    .enumerate()
                    .min_by(|a, b| {
                        let da = (a.1.x - x as f64).powi(2) + (a.1.y - y as f64).powi(2);
                        let db = (b.1.x - x as f64).powi(2) + (b.1.y - y as f64).powi(2);
                        da.total_cmp(&db)
                    })
                    .map(|(k, _)| k)
                    .unwrap_or(0);
                *labels.get_mut(x, y) = k as u32;
            }
        }
    }
    RegionLabelMap::compact(&enforce_connectivity(&labels))
}
