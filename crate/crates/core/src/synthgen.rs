//! Procedural planar scenes with exact ground truth.
//!
//! World frame: `x` right, `y` down, `z` forward from the reference camera.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::geom::{CameraIntrinsics, CameraPose, CameraView, GeomError, PlaneHypothesis, Vec3};
use crate::grid::Grid;
use crate::icrefine::PlaneModel;
use crate::pmstereo::{HypothesisMap, PixelState};
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("camera {0} sees no surface")]
    NothingVisible(usize),
    #[error("degenerate surface {0}")]
    DegenerateSurface(usize),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("unknown scene `{0}`")]
    UnknownScene(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Texture {
    /// Squares of side `cell` (world units) alternating `low` / `high`.
    Checkerboard { cell: f64, low: f64, high: f64 },
    /// Two-octave value noise around 0.5 with lattice spacing `cell`.
    Noise { amplitude: f64, cell: f64, seed: u64 },
    Constant { level: f64 },
}

impl Texture {
    pub fn sample(&self, u: f64, v: f64) -> f64 {
        match *self {
            Texture::Checkerboard { cell, low, high } => {
                let k = (u / cell).floor() as i64 + (v / cell).floor() as i64;
                if k.rem_euclid(2) == 0 {
                    low
                } else {
                    high
                }
            }
            Texture::Noise {
                amplitude,
                cell,
                seed,
            } => {
                let a = lattice_noise(seed, u / cell, v / cell);
                let b = lattice_noise(seed ^ 0x9e37, u / (0.43 * cell), v / (0.43 * cell));
                0.5 + amplitude * (0.6 * (2.0 * a - 1.0) + 0.4 * (2.0 * b - 1.0))
            }
            Texture::Constant { level } => level,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Texture::Constant { .. })
    }
}

/// Bilinearly interpolated hash values on the integer lattice, in [0, 1).
pub fn lattice_noise(seed: u64, u: f64, v: f64) -> f64 {
    let (i, j) = (u.floor(), v.floor());
    let (fu, fv) = (u - i, v - j);
    let at = |a: f64, b: f64| rng::unit_hash(seed, &[a as i64 as u64, b as i64 as u64]);
    let top = at(i, j) * (1.0 - fu) + at(i + 1.0, j) * fu;
    let bot = at(i, j + 1.0) * (1.0 - fu) + at(i + 1.0, j + 1.0) * fu;
    top * (1.0 - fv) + bot * fv
}

/// Planar polygon: `origin + u·u_axis + v·v_axis` for `(u, v)` inside
/// `bounds`.
#[derive(Clone, Debug, PartialEq)]
pub struct Surface {
    /// World-frame plane.
    pub plane: PlaneModel,
    pub origin: Vec3,
    pub u_axis: Vec3,
    pub v_axis: Vec3,
    /// Polygon vertices in `(u, v)`.
    pub bounds: Vec<[f64; 2]>,
    pub texture: Texture,
}

impl Surface {
    /// Rectangle with corner `origin` and edge vectors `edge_u`, `edge_v`
    /// (assumed orthogonal).
    pub fn rect(origin: Vec3, edge_u: Vec3, edge_v: Vec3, texture: Texture) -> Self {
        let (lu, lv) = (edge_u.norm(), edge_v.norm());
        let n = edge_u.cross(&edge_v).normalize();
        let plane = PlaneModel::new(n, n.dot(&origin)).expect("rectangle edges must span a plane");
        Self {
            plane,
            origin,
            u_axis: edge_u / lu,
            v_axis: edge_v / lv,
            bounds: vec![[0.0, 0.0], [lu, 0.0], [lu, lv], [0.0, lv]],
            texture,
        }
    }

    /// Ray parameter and texture coordinates of the hit of `center + t·dir`.
    fn hit(&self, center: &Vec3, dir: &Vec3) -> Option<(f64, f64, f64)> {
        let denom = self.plane.normal.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = (self.plane.dist - self.plane.normal.dot(center)) / denom;
        if !(t > 1e-9) {
            return None;
        }
        let p = center + dir * t - self.origin;
        let (u, v) = (p.dot(&self.u_axis), p.dot(&self.v_axis));
        point_in_polygon(&self.bounds, u, v).then_some((t, u, v))
    }
}

fn point_in_polygon(poly: &[[f64; 2]], u: f64, v: f64) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > v) != (b[1] > v) && u < (b[0] - a[0]) * (v - a[1]) / (b[1] - a[1]) + a[0] {
            inside = !inside;
        }
        j = i;
    }
    inside
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPlacement {
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub name: String,
    pub surfaces: Vec<Surface>,
    pub cameras: Vec<CameraPlacement>,
    /// Standard deviation of additive luminance noise.
    pub noise_sigma: f64,
    pub rng_seed: u64,
}

impl SceneSpec {
    pub fn image_size(&self) -> (usize, usize) {
        self.cameras
            .first()
            .map_or((0, 0), |c| (c.intrinsics.width, c.intrinsics.height))
    }
}

/// Ground truth of one view. Background pixels have depth 0, no surface and
/// are excluded from the textureless mask.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewTruth {
    pub depth: Grid<f64>,
    /// Camera-frame normals facing the camera (zero on background).
    pub normal: Grid<Vec3>,
    pub textureless: Grid<bool>,
    pub surface: Grid<Option<usize>>,
}

impl ViewTruth {
    pub fn valid(&self) -> Grid<bool> {
        self.depth.map(|&d| d > 0.0)
    }

    pub fn textured(&self) -> Grid<bool> {
        Grid::from_fn(self.depth.width(), self.depth.height(), |x, y| {
            *self.depth.get(x, y) > 0.0 && !*self.textureless.get(x, y)
        })
    }

    /// Exact hypothesis map: Confident on surfaces, Discarded on background.
    pub fn hypothesis_map(&self) -> HypothesisMap {
        let (w, h) = self.depth.dims();
        let hyps = Grid::from_fn(w, h, |x, y| PlaneHypothesis {
            depth: *self.depth.get(x, y),
            normal: *self.normal.get(x, y),
        });
        let mut map = HypothesisMap::new(hyps, Grid::new(w, h, 0.0));
        map.state = self.depth.map(|&d| {
            if d > 0.0 {
                PixelState::Confident
            } else {
                PixelState::Discarded
            }
        });
        map
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub views: Vec<ViewTruth>,
    pub surfaces: Vec<Surface>,
}

/// Nearest surface hit along the pixel ray: `(surface, depth, luminance)`.
fn cast(surfaces: &[Surface], k: &CameraIntrinsics, pose: &CameraPose, x: f64, y: f64) -> Option<(usize, f64, f64)> {
    let center = pose.center();
    let dir = pose.dir_to_world(&k.ray(x, y));
    let mut best: Option<(usize, f64, f64)> = None;
    for (s, surf) in surfaces.iter().enumerate() {
        if let Some((t, u, v)) = surf.hit(&center, &dir) {
            if best.map_or(true, |b| t < b.1) {
                best = Some((s, t, surf.texture.sample(u, v)));
            }
        }
    }
    best
}

/// Ground truth at arbitrary intrinsics (e.g. a downsampled camera).
pub fn truth_at(surfaces: &[Surface], k: &CameraIntrinsics, pose: &CameraPose) -> ViewTruth {
    let (w, h) = (k.width, k.height);
    let hits: Vec<Option<(usize, f64, f64)>> = (0..w * h)
        .into_par_iter()
        .map(|i| cast(surfaces, k, pose, (i % w) as f64, (i / w) as f64))
        .collect();
    let depth = Grid::from_fn(w, h, |x, y| hits[y * w + x].map_or(0.0, |h| h.1));
    let surface = Grid::from_fn(w, h, |x, y| hits[y * w + x].map(|h| h.0));
    let textureless = Grid::from_fn(w, h, |x, y| {
        hits[y * w + x].is_some_and(|h| surfaces[h.0].texture.is_constant())
    });
    let normal = Grid::from_fn(w, h, |x, y| match hits[y * w + x] {
        Some((s, _, _)) => {
            let n = pose.dir_to_camera(&surfaces[s].plane.normal);
            let ray = k.ray(x as f64, y as f64);
            if n.dot(&ray) >= 0.0 {
                -n
            } else {
                n
            }
        }
        None => Vec3::zeros(),
    });
    ViewTruth {
        depth,
        normal,
        textureless,
        surface,
    }
}

const TAG_NOISE: u64 = 0x5e;

/// Renders every camera: noisy luminance images plus exact ground truth.
pub fn render(spec: &SceneSpec) -> Result<(Vec<CameraView>, GroundTruth), SynthError> {
    for (i, s) in spec.surfaces.iter().enumerate() {
        if s.bounds.len() < 3 || !(s.u_axis.cross(&s.v_axis).norm() > 1e-9) {
            return Err(SynthError::DegenerateSurface(i));
        }
    }
    let normal = Normal::new(0.0, spec.noise_sigma.max(0.0)).expect("finite sigma");
    let mut views = Vec::with_capacity(spec.cameras.len());
    let mut truths = Vec::with_capacity(spec.cameras.len());
    for (id, cam) in spec.cameras.iter().enumerate() {
        let k = cam.intrinsics;
        let (w, h) = (k.width, k.height);
        let lum: Vec<f64> = (0..w * h)
            .into_par_iter()
            .map(|i| {
                cast(&spec.surfaces, &k, &cam.pose, (i % w) as f64, (i / w) as f64)
                    .map_or(0.0, |hit| hit.2)
            })
            .collect();
        let truth = truth_at(&spec.surfaces, &k, &cam.pose);
        if truth.surface.iter().all(Option::is_none) {
            return Err(SynthError::NothingVisible(id));
        }
        let mut noise_rng = ChaCha8Rng::seed_from_u64(rng::mix(spec.rng_seed, &[TAG_NOISE, id as u64]));
        let image = Grid::from_vec(w, h, lum)
            .expect("sized to the camera")
            .map(|&l| {
                let n: f64 = if spec.noise_sigma > 0.0 {
                    normal.sample(&mut noise_rng)
                } else {
                    0.0
                };
                (l + n).clamp(0.0, 1.0)
            });
        views.push(CameraView::new(id, k, cam.pose, image, None)?);
        truths.push(truth);
    }
    Ok((
        views,
        GroundTruth {
            views: truths,
            surfaces: spec.surfaces.clone(),
        },
    ))
}

pub const SCENE_NAMES: [&str; 3] = ["box-textured", "box-blank-wall", "corridor-blank"];

const WIDTH: usize = 640;
const HEIGHT: usize = 480;
const FOCAL: f64 = 554.0;

/// Reference camera at the origin looking at `target`, four more displaced
/// by `baseline` left/right/up/down, all aimed at `target`.
fn rig(target: Vec3, baseline: f64) -> Vec<CameraPlacement> {
    let k = CameraIntrinsics::new(
        FOCAL,
        FOCAL,
        (WIDTH as f64 - 1.0) / 2.0,
        (HEIGHT as f64 - 1.0) / 2.0,
        WIDTH,
        HEIGHT,
    )
    .expect("valid intrinsics");
    let down = Vec3::new(0.0, 1.0, 0.0);
    [
        Vec3::zeros(),
        Vec3::new(-baseline, 0.0, 0.0),
        Vec3::new(baseline, 0.0, 0.0),
        Vec3::new(0.0, -0.75 * baseline, 0.0),
        Vec3::new(0.0, 0.75 * baseline, 0.0),
    ]
    .into_iter()
    .map(|c| CameraPlacement {
        intrinsics: k,
        pose: CameraPose::look_at(c, target, down).expect("non-degenerate rig"),
    })
    .collect()
}

fn checker(cell: f64, low: f64, high: f64) -> Texture {
    Texture::Checkerboard { cell, low, high }
}

fn noise(seed: u64, cell: f64) -> Texture {
    Texture::Noise {
        amplitude: 0.35,
        cell,
        seed,
    }
}

/// Axis-aligned wall rectangle given two corners on a constant-coordinate
/// plane; the rectangle spans the other two axes.
fn wall(a: Vec3, b: Vec3, texture: Texture) -> Surface {
    let d = b - a;
    let (eu, ev) = if d.x.abs() < 1e-12 {
        (Vec3::new(0.0, 0.0, d.z), Vec3::new(0.0, d.y, 0.0))
    } else if d.y.abs() < 1e-12 {
        (Vec3::new(d.x, 0.0, 0.0), Vec3::new(0.0, 0.0, d.z))
    } else {
        (Vec3::new(d.x, 0.0, 0.0), Vec3::new(0.0, d.y, 0.0))
    };
    Surface::rect(a, eu, ev, texture)
}

/// A blank panel inset by `band` inside the wall rectangle `a`–`b`,
/// surrounded by four coplanar textured bands.
fn framed_wall(a: Vec3, b: Vec3, band: f64, frame: Texture, panel: Texture) -> Vec<Surface> {
    let d = b - a;
    // the two in-plane axes
    let axes: Vec<usize> = (0..3).filter(|&k| d[k].abs() > 1e-12).collect();
    assert_eq!(axes.len(), 2, "framed walls are axis aligned");
    let (p, q) = (axes[0], axes[1]);
    let lerp = |sp: f64, sq: f64| {
        let mut v = a;
        v[p] = a[p] + sp;
        v[q] = a[q] + sq;
        v
    };
    let (lp, lq) = (d[p], d[q]);
    let bp = band * lp.signum();
    let bq = band * lq.signum();
    vec![
        wall(lerp(bp, bq), lerp(lp - bp, lq - bq), panel),
        wall(lerp(0.0, 0.0), lerp(lp, bq), frame),
        wall(lerp(0.0, lq - bq), lerp(lp, lq), frame),
        wall(lerp(0.0, bq), lerp(bp, lq - bq), frame),
        wall(lerp(lp - bp, bq), lerp(lp, lq - bq), frame),
    ]
}

fn box_room(blank_back: bool) -> Vec<Surface> {
    let (x0, x1, y0, y1, z1) = (-2.0, 2.0, -1.5, 1.5, 5.0);
    let mut s = Vec::new();
    if blank_back {
        s.extend(framed_wall(
            Vec3::new(x0, y0, z1),
            Vec3::new(x1, y1, z1),
            0.12,
            checker(0.1, 0.15, 0.75),
            Texture::Constant { level: 0.45 },
        ));
    } else {
        s.push(wall(Vec3::new(x0, y0, z1), Vec3::new(x1, y1, z1), noise(11, 0.035)));
    }
    s.push(wall(Vec3::new(x0, y0, 0.5), Vec3::new(x0, y1, z1), checker(0.15, 0.2, 0.8)));
    s.push(wall(Vec3::new(x1, y0, 0.5), Vec3::new(x1, y1, z1), noise(12, 0.03)));
    s.push(wall(Vec3::new(x0, y1, 0.5), Vec3::new(x1, y1, z1), checker(0.2, 0.25, 0.7)));
    s.push(wall(Vec3::new(x0, y0, 0.5), Vec3::new(x1, y0, z1), noise(13, 0.04)));
    // a cabinet standing on the floor: front face and right side
    s.push(wall(
        Vec3::new(-1.3, 0.3, 3.2),
        Vec3::new(-0.4, y1, 3.2),
        checker(0.07, 0.1, 0.6),
    ));
    s.push(wall(
        Vec3::new(-0.4, 0.3, 3.2),
        Vec3::new(-0.4, y1, 3.8),
        noise(14, 0.02),
    ));
    s
}

fn corridor() -> Vec<Surface> {
    let (x0, x1, y0, y1, z0, z1) = (-1.0, 1.0, -0.9, 0.9, 0.2, 4.5);
    let band = 0.16;
    let blank = |level: f64| Texture::Constant { level };
    let mut s = Vec::new();
    // back wall: blank panel in a textured frame
    s.extend(framed_wall(
        Vec3::new(x0, y0, z1),
        Vec3::new(x1, y1, z1),
        0.3,
        noise(20, 0.04),
        blank(0.5),
    ));
    // side walls, floor and ceiling: blank panels in textured frames,
    // split halfway along the corridor
    let zm = 0.5 * (z0 + z1);
    for (za, zb) in [(z0, zm), (zm, z1)] {
        s.extend(framed_wall(
            Vec3::new(x0, y0, za),
            Vec3::new(x0, y1, zb),
            band,
            noise(21, 0.03),
            blank(0.5),
        ));
        s.extend(framed_wall(
            Vec3::new(x1, y0, za),
            Vec3::new(x1, y1, zb),
            band,
            noise(22, 0.03),
            blank(0.55),
        ));
        s.extend(framed_wall(
            Vec3::new(x0, y1, za),
            Vec3::new(x1, y1, zb),
            band,
            noise(23, 0.03),
            blank(0.4),
        ));
        s.extend(framed_wall(
            Vec3::new(x0, y0, za),
            Vec3::new(x1, y0, zb),
            band,
            noise(24, 0.03),
            blank(0.6),
        ));
    }
    s
}

pub fn standard_scenes() -> Vec<SceneSpec> {
    let make = |name: &str, surfaces: Vec<Surface>, target: Vec3, baseline: f64| SceneSpec {
        name: name.to_string(),
        surfaces,
        cameras: rig(target, baseline),
        noise_sigma: 0.01,
        rng_seed: 0,
    };
    vec![
        make("box-textured", box_room(false), Vec3::new(0.0, 0.0, 4.0), 0.4),
        make("box-blank-wall", box_room(true), Vec3::new(0.0, 0.0, 4.0), 0.4),
        make("corridor-blank", corridor(), Vec3::new(0.0, 0.0, 3.0), 0.6),
    ]
}

pub fn scene_by_name(name: &str) -> Result<SceneSpec, SynthError> {
    standard_scenes()
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| SynthError::UnknownScene(name.to_string()))
}
