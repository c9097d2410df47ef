//! Small synthetic views for unit tests.

use nalgebra::Rotation3;

use crate::geom::{CameraIntrinsics, CameraPose, CameraView, Mat3, Vec3};
use crate::grid::Grid;
use crate::rng;

/// Smooth value-noise texture with lattice spacing `cell` (continuous
/// coordinates, two octaves).
pub fn value_noise(seed: u64, x: f64, y: f64, cell: f64) -> f64 {
    let octave = |s: u64, c: f64| {
        let (u, v) = (x / c, y / c);
        let (i, j) = (u.floor(), v.floor());
        let (fu, fv) = (u - i, v - j);
        let at = |a: f64, b: f64| rng::unit_hash(s, &[a as i64 as u64, b as i64 as u64]);
        let top = at(i, j) * (1.0 - fu) + at(i + 1.0, j) * fu;
        let bot = at(i, j + 1.0) * (1.0 - fu) + at(i + 1.0, j + 1.0) * fu;
        top * (1.0 - fv) + bot * fv
    };
    0.2 + 0.4 * octave(seed, cell) + 0.3 * octave(seed ^ 0xABCD, cell * 2.7)
}

fn view(id: usize, k: CameraIntrinsics, pose: CameraPose, image: Grid<f64>) -> CameraView {
    CameraView::new(id, k, pose, image, None).unwrap()
}

/// Fronto-parallel textured plane at `depth` seen by a reference camera and
/// a source camera displaced along `+x` so that the disparity is exactly 5
/// pixels. Returns `(reference, source, depth)`.
pub fn two_view_fronto(w: usize, h: usize, depth: f64, seed: u64) -> (CameraView, CameraView, f64) {
    let f = 100.0;
    let disparity = 5.0;
    let baseline = disparity * depth / f;
    let k = CameraIntrinsics::new(f, f, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap();
    let tex = |x: f64, y: f64| value_noise(seed, x, y, 3.0);
    let ref_img = Grid::from_fn(w, h, |x, y| tex(x as f64, y as f64));
    let src_img = Grid::from_fn(w, h, |x, y| tex(x as f64 + disparity, y as f64));
    let src_pose = CameraPose::new(Mat3::identity(), Vec3::new(-baseline, 0.0, 0.0)).unwrap();
    (
        view(0, k, CameraPose::identity(), ref_img),
        view(1, k, src_pose, src_img),
        depth,
    )
}

/// Any textured reference/source pair (fronto geometry, depth 2).
pub fn textured_pair(w: usize, h: usize, seed: u64) -> (CameraView, CameraView) {
    let (r, s, _) = two_view_fronto(w, h, 2.0, seed);
    (r, s)
}

/// Two cameras with a random relative pose and unrelated random textures.
pub fn random_camera_pair(w: usize, h: usize, seed: u64) -> (CameraView, CameraView) {
    use rand::Rng;
    let mut r = rng::stream(seed, &[0xCA]);
    let k = CameraIntrinsics::new(60.0, 60.0, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap();
    let axis = Vec3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0));
    let rot = *Rotation3::new(axis * 0.05).matrix();
    let t = Vec3::new(r.gen_range(-0.2..0.2), r.gen_range(-0.2..0.2), r.gen_range(-0.1..0.1));
    let a = seed.wrapping_mul(3);
    let b = seed.wrapping_mul(5) ^ 0x55;
    let img_a = Grid::from_fn(w, h, |x, y| value_noise(a, x as f64, y as f64, 2.5));
    let img_b = Grid::from_fn(w, h, |x, y| value_noise(b, x as f64, y as f64, 2.5));
    (
        view(0, k, CameraPose::identity(), img_a),
        view(1, k, CameraPose::new(rot, t).unwrap(), img_b),
    )
}
