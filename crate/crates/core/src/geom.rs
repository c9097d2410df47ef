//! Pinhole cameras, plane hypotheses and plane-induced homographies.
//!
//! Conventions: extrinsics map world to camera (`X_c = R X_w + t`), the
//! camera looks down `+z`, the pixel origin is the top-left corner and pixel
//! centers sit on integer coordinates. Depth always means camera-frame `z`.

use nalgebra::{Matrix3, Vector2, Vector3};
use thiserror::Error;

use crate::grid::{Luma, Rgb};

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

const ORTHO_TOL: f64 = 1e-9;
const BEHIND_EPS: f64 = 1e-12;
const DEGENERATE_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("rotation is not orthonormal with determinant 1")]
    InvalidRotation,
    #[error("image is {got:?} but intrinsics expect {expected:?}")]
    ImageSize {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("plane passes through a camera center")]
    DegeneratePlane,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeomError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(GeomError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={fx}, fy={fy})"
            )));
        }
        if !(cx >= 0.0 && cx < width as f64 && cy >= 0.0 && cy < height as f64) {
            return Err(GeomError::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {width}x{height}"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Mat3 {
        Mat3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Camera-frame ray through `pixel`, normalized to `z = 1`.
    #[inline]
    pub fn ray(&self, x: f64, y: f64) -> Vec3 {
        Vec3::new((x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0)
    }

    /// Intrinsics of the image obtained by `factor × factor` box
    /// downsampling, keeping pixel centers on integer coordinates.
    pub fn downsampled(&self, factor: usize) -> Self {
        let f = factor as f64;
        let shift = (f - 1.0) / 2.0;
        Self {
            fx: self.fx / f,
            fy: self.fy / f,
            cx: (self.cx - shift) / f,
            cy: (self.cy - shift) / f,
            width: self.width / factor,
            height: self.height / factor,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl CameraPose {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, GeomError> {
        let ortho = (rotation.transpose() * rotation - Mat3::identity()).abs().max();
        if !(ortho <= ORTHO_TOL) || (rotation.determinant() - 1.0).abs() > ORTHO_TOL {
            return Err(GeomError::InvalidRotation);
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Pose of a camera at `center` looking at `target`, with image `y`
    /// pointing along `down` as much as possible.
    pub fn look_at(center: Vec3, target: Vec3, down: Vec3) -> Result<Self, GeomError> {
        let z = (target - center).normalize();
        let x = down.cross(&z);
        if x.norm() < 1e-12 {
            return Err(GeomError::InvalidRotation);
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rotation = Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let translation = -(rotation * center);
        Self::new(rotation, translation)
    }

    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    #[inline]
    pub fn to_camera(&self, world: &Vec3) -> Vec3 {
        self.rotation * world + self.translation
    }

    #[inline]
    pub fn to_world(&self, cam: &Vec3) -> Vec3 {
        self.rotation.transpose() * (cam - self.translation)
    }

    /// Rotates a camera-frame direction into the world frame.
    #[inline]
    pub fn dir_to_world(&self, dir: &Vec3) -> Vec3 {
        self.rotation.transpose() * dir
    }

    #[inline]
    pub fn dir_to_camera(&self, dir: &Vec3) -> Vec3 {
        self.rotation * dir
    }
}

/// A calibrated view: camera plus luminance image (and optional color).
#[derive(Clone, Debug)]
pub struct CameraView {
    pub id: usize,
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
    pub image: Luma,
    pub color: Option<Rgb>,
}

impl CameraView {
    pub fn new(
        id: usize,
        intrinsics: CameraIntrinsics,
        pose: CameraPose,
        image: Luma,
        color: Option<Rgb>,
    ) -> Result<Self, GeomError> {
        let expected = (intrinsics.width, intrinsics.height);
        if image.dims() != expected {
            return Err(GeomError::ImageSize {
                expected,
                got: image.dims(),
            });
        }
        if let Some(c) = &color {
            if c.dims() != expected {
                return Err(GeomError::ImageSize {
                    expected,
                    got: c.dims(),
                });
            }
        }
        Ok(Self {
            id,
            intrinsics,
            pose,
            image,
            color,
        })
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    /// Camera-frame ray through an integer pixel, `z = 1`.
    #[inline]
    pub fn ray(&self, x: usize, y: usize) -> Vec3 {
        self.intrinsics.ray(x as f64, y as f64)
    }

    /// Downsampled copy of this view (image, color and intrinsics).
    pub fn downsampled(&self, factor: usize) -> Self {
        if factor == 1 {
            return self.clone();
        }
        Self {
            id: self.id,
            intrinsics: self.intrinsics.downsampled(factor),
            pose: self.pose,
            image: self.image.downsample(factor),
            color: self.color.as_ref().map(|c| c.downsample(factor)),
        }
    }

    pub fn color_at(&self, x: usize, y: usize) -> [f64; 3] {
        match &self.color {
            Some(c) => *c.get(x, y),
            None => {
                let l = *self.image.get(x, y);
                [l, l, l]
            }
        }
    }
}

/// Per-pixel local plane: depth along the pixel ray plus a camera-frame
/// unit normal facing the camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneHypothesis {
    pub depth: f64,
    pub normal: Vec3,
}

impl PlaneHypothesis {
    /// Builds a hypothesis, normalizing `normal` and flipping it so that it
    /// faces the camera along `ray` (`normal · ray < 0`).
    pub fn oriented(depth: f64, normal: Vec3, ray: &Vec3) -> Self {
        let mut n = normal.normalize();
        if n.dot(ray) >= 0.0 {
            n = -n;
        }
        Self { depth, normal: n }
    }

    /// Camera-frame 3D point of this hypothesis at `ray` (`z = 1` ray).
    #[inline]
    pub fn point(&self, ray: &Vec3) -> Vec3 {
        ray * self.depth
    }

    /// Depth where the plane of this hypothesis (anchored at `anchor_ray`)
    /// meets `ray`. `None` if the ray is parallel or the hit is behind.
    #[inline]
    pub fn depth_along(&self, anchor_ray: &Vec3, ray: &Vec3) -> Option<f64> {
        let denom = self.normal.dot(ray);
        if denom.abs() < 1e-12 {
            return None;
        }
        let d = self.normal.dot(&self.point(anchor_ray)) / denom;
        (d.is_finite() && d > 0.0).then_some(d)
    }
}

/// Projects a world point into `view`, returning pixel and camera depth.
pub fn project(view: &CameraView, point: &Vec3) -> Result<(Vec2, f64), GeomError> {
    project_with(&view.intrinsics, &view.pose, point)
}

#[inline]
pub fn project_with(
    k: &CameraIntrinsics,
    pose: &CameraPose,
    point: &Vec3,
) -> Result<(Vec2, f64), GeomError> {
    let c = pose.to_camera(point);
    if c.z <= BEHIND_EPS {
        return Err(GeomError::BehindCamera(c.z));
    }
    let px = Vec2::new(k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy);
    Ok((px, c.z))
}

/// Lifts `pixel` at camera depth `depth` into world coordinates.
pub fn unproject(view: &CameraView, pixel: &Vec2, depth: f64) -> Result<Vec3, GeomError> {
    unproject_with(&view.intrinsics, &view.pose, pixel, depth)
}

#[inline]
pub fn unproject_with(
    k: &CameraIntrinsics,
    pose: &CameraPose,
    pixel: &Vec2,
    depth: f64,
) -> Result<Vec3, GeomError> {
    if !(depth > 0.0) {
        return Err(GeomError::NonPositiveDepth(depth));
    }
    let cam = k.ray(pixel.x, pixel.y) * depth;
    Ok(pose.to_world(&cam))
}

/// Relative geometry of a (reference, source) camera pair, cached so that
/// per-hypothesis homographies cost a handful of multiplications.
#[derive(Clone, Debug)]
pub struct PairGeometry {
    ref_k_inv: Mat3,
    src_k: Mat3,
    rotation: Mat3,
    translation: Vec3,
    /// Source camera center expressed in the reference camera frame.
    src_center_in_ref: Vec3,
}

impl PairGeometry {
    pub fn new(reference: &CameraView, source: &CameraView) -> Self {
        let r_ref = reference.pose.rotation;
        let r_src = source.pose.rotation;
        let rotation = r_src * r_ref.transpose();
        let translation = source.pose.translation - rotation * reference.pose.translation;
        let src_center_in_ref = reference.pose.to_camera(&source.pose.center());
        Self {
            ref_k_inv: reference.intrinsics.inverse_matrix(),
            src_k: source.intrinsics.matrix(),
            rotation,
            translation,
            src_center_in_ref,
        }
    }

    /// Homography induced by the plane `normal · X = offset` (reference
    /// camera frame).
    #[inline]
    pub fn homography_for_plane(&self, normal: &Vec3, offset: f64) -> Result<Mat3, GeomError> {
        if offset.abs() <= DEGENERATE_EPS
            || (normal.dot(&self.src_center_in_ref) - offset).abs() <= DEGENERATE_EPS
        {
            return Err(GeomError::DegeneratePlane);
        }
        let m = self.rotation + self.translation * (normal.transpose() / offset);
        Ok(self.src_k * m * self.ref_k_inv)
    }

    #[inline]
    pub fn homography(&self, ray: &Vec3, hyp: &PlaneHypothesis) -> Result<Mat3, GeomError> {
        let offset = hyp.normal.dot(&hyp.point(ray));
        self.homography_for_plane(&hyp.normal, offset)
    }
}

/// Homography mapping reference pixels on the plane of `hyp` (anchored at
/// `pixel`) to their projections in `src`.
pub fn plane_homography(
    reference: &CameraView,
    src: &CameraView,
    pixel: &Vec2,
    hyp: &PlaneHypothesis,
) -> Result<Mat3, GeomError> {
    let ray = reference.intrinsics.ray(pixel.x, pixel.y);
    PairGeometry::new(reference, src).homography(&ray, hyp)
}

/// Applies a homography to a pixel. Returns `None` at infinity.
#[inline]
pub fn apply_homography(h: &Mat3, x: f64, y: f64) -> Option<(f64, f64)> {
    let w = h[(2, 0)] * x + h[(2, 1)] * y + h[(2, 2)];
    if w.abs() < 1e-15 {
        return None;
    }
    let inv = 1.0 / w;
    Some((
        (h[(0, 0)] * x + h[(0, 1)] * y + h[(0, 2)]) * inv,
        (h[(1, 0)] * x + h[(1, 1)] * y + h[(1, 2)]) * inv,
    ))
}

/// Angle between two directions in radians.
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    let c = a.dot(b) / (a.norm() * b.norm());
    c.clamp(-1.0, 1.0).acos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn view(k: CameraIntrinsics, pose: CameraPose) -> CameraView {
        CameraView::new(0, k, pose, Grid::new(k.width, k.height, 0.0), None).unwrap()
    }

    fn random_pose(rng: &mut impl Rng) -> CameraPose {
        let axis = Vec3::new(rng.gen(), rng.gen(), rng.gen()) - Vec3::repeat(0.5);
        let rot = Rotation3::new(axis * 0.6);
        let t = Vec3::new(rng.gen(), rng.gen(), rng.gen()) - Vec3::repeat(0.5);
        CameraPose::new(*rot.matrix(), t).unwrap()
    }

    #[test]
    fn canonical_projection() {
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 2, 2).unwrap();
        let v = view(k, CameraPose::identity());
        let (px, d) = project(&v, &Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(px, Vec2::zeros());
        assert_eq!(d, 1.0);
        let p = unproject(&v, &Vec2::zeros(), 2.0).unwrap();
        assert_eq!(p, Vec3::new(0.0, 0.0, 2.0));
    }

    #[test]
    fn projection_through_intrinsics() {
        let k = CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap();
        let v = view(k, CameraPose::identity());
        let (px, d) = project(&v, &Vec3::new(0.1, 0.0, 1.0)).unwrap();
        assert!((px - Vec2::new(60.0, 50.0)).norm() < 1e-12);
        assert_eq!(d, 1.0);
    }

    #[test]
    fn behind_camera_and_bad_depth_are_errors() {
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 2, 2).unwrap();
        let v = view(k, CameraPose::identity());
        assert!(matches!(
            project(&v, &Vec3::new(0.0, 0.0, -1.0)),
            Err(GeomError::BehindCamera(_))
        ));
        assert!(matches!(
            unproject(&v, &Vec2::zeros(), 0.0),
            Err(GeomError::NonPositiveDepth(_))
        ));
    }

    #[test]
    fn intrinsics_and_pose_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0, 2, 2).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 2.0, 0.0, 2, 2).is_err());
        let mut r = Mat3::identity();
        r[(0, 0)] = -1.0;
        assert_eq!(
            CameraPose::new(r, Vec3::zeros()),
            Err(GeomError::InvalidRotation)
        );
        r[(0, 0)] = 1.1;
        assert!(CameraPose::new(r, Vec3::zeros()).is_err());
    }

    #[test]
    fn principal_ray_lies_on_optical_axis() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = CameraIntrinsics::new(300.0, 310.0, 160.0, 120.0, 320, 240).unwrap();
        for _ in 0..20 {
            let pose = random_pose(&mut rng);
            let v = view(k, pose);
            let d = rng.gen_range(0.5..5.0);
            let p = unproject(&v, &Vec2::new(k.cx, k.cy), d).unwrap();
            let axis = pose.dir_to_world(&Vec3::z());
            assert!((p - (pose.center() + axis * d)).norm() < 1e-12);
        }
    }

    #[test]
    fn project_unproject_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = CameraIntrinsics::new(500.0, 480.0, 320.0, 240.0, 640, 480).unwrap();
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let v = view(k, random_pose(&mut rng));
            let px = Vec2::new(rng.gen_range(0.0..640.0), rng.gen_range(0.0..480.0));
            let d = rng.gen_range(0.1..20.0);
            let w = unproject(&v, &px, d).unwrap();
            let (back, depth) = project(&v, &w).unwrap();
            worst = worst.max((back - px).norm()).max((depth - d).abs());
        }
        assert!(worst < 1e-9, "worst round-trip error {worst}");
    }

    #[test]
    fn homography_of_identical_cameras_is_identity() {
        let k = CameraIntrinsics::new(200.0, 200.0, 64.0, 48.0, 128, 96).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = view(k, random_pose(&mut rng));
        let ray = k.ray(30.0, 20.0);
        let hyp = PlaneHypothesis::oriented(2.0, Vec3::new(0.2, -0.1, -1.0), &ray);
        let h = plane_homography(&v, &v, &Vec2::new(30.0, 20.0), &hyp).unwrap();
        let h = h / h[(2, 2)];
        assert!((h - Mat3::identity()).abs().max() < 1e-9);
    }

    #[test]
    fn fronto_parallel_rectified_shift() {
        let (f, b, d) = (250.0, 0.3, 2.5);
        let k = CameraIntrinsics::new(f, f, 60.0, 40.0, 120, 80).unwrap();
        let r = view(k, CameraPose::identity());
        let s = view(
            k,
            CameraPose::new(Mat3::identity(), Vec3::new(-b, 0.0, 0.0)).unwrap(),
        );
        let ray = k.ray(60.0, 40.0);
        let hyp = PlaneHypothesis::oriented(d, Vec3::new(0.0, 0.0, -1.0), &ray);
        let h = plane_homography(&r, &s, &Vec2::new(60.0, 40.0), &hyp).unwrap();
        let mut expected = Mat3::identity();
        expected[(0, 2)] = -f * b / d;
        assert!((h / h[(2, 2)] - expected).abs().max() < 1e-9);
    }

    #[test]
    fn homography_matches_explicit_ray_plane_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let k = CameraIntrinsics::new(400.0, 420.0, 160.0, 120.0, 320, 240).unwrap();
        for _ in 0..50 {
            let r = view(k, random_pose(&mut rng));
            let s = view(k, random_pose(&mut rng));
            let anchor = Vec2::new(rng.gen_range(0.0..320.0), rng.gen_range(0.0..240.0));
            let ray = k.ray(anchor.x, anchor.y);
            let normal = Vec3::new(rng.gen(), rng.gen(), rng.gen()) - Vec3::new(0.5, 0.5, 1.5);
            let hyp = PlaneHypothesis::oriented(rng.gen_range(1.0..4.0), normal, &ray);
            let Ok(h) = plane_homography(&r, &s, &anchor, &hyp) else {
                continue;
            };
            let x0 = hyp.point(&ray);
            for _ in 0..10 {
                let q = Vec2::new(rng.gen_range(0.0..320.0), rng.gen_range(0.0..240.0));
                let qray = k.ray(q.x, q.y);
                // explicit intersection of the pixel ray with the plane
                let t = hyp.normal.dot(&x0) / hyp.normal.dot(&qray);
                if !(t > 0.0) {
                    continue;
                }
                let world = r.pose.to_world(&(qray * t));
                let Ok((direct, _)) = project(&s, &world) else {
                    continue;
                };
                let (hx, hy) = apply_homography(&h, q.x, q.y).unwrap();
                let err = (Vec2::new(hx, hy) - direct).norm();
                assert!(err < 1e-6, "homography error {err}");
            }
        }
    }

    #[test]
    fn degenerate_plane_through_source_center() {
        let k = CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap();
        let r = view(k, CameraPose::identity());
        // source camera center at (0, 0, 2), plane z = 2
        let s = view(
            k,
            CameraPose::new(Mat3::identity(), Vec3::new(0.0, 0.0, -2.0)).unwrap(),
        );
        let ray = k.ray(50.0, 50.0);
        let hyp = PlaneHypothesis::oriented(2.0, Vec3::new(0.0, 0.0, -1.0), &ray);
        assert_eq!(
            plane_homography(&r, &s, &Vec2::new(50.0, 50.0), &hyp),
            Err(GeomError::DegeneratePlane)
        );
    }

    #[test]
    fn oriented_normals_face_the_camera() {
        let ray = Vec3::new(0.1, 0.2, 1.0);
        let h = PlaneHypothesis::oriented(1.0, Vec3::new(0.0, 0.0, 3.0), &ray);
        assert!(h.normal.dot(&ray) < 0.0);
        assert!((h.normal.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn downsampled_intrinsics_keep_pixel_centers() {
        let k = CameraIntrinsics::new(500.0, 500.0, 319.5, 239.5, 640, 480).unwrap();
        let h = k.downsampled(2);
        assert_eq!((h.width, h.height), (320, 240));
        assert!((h.cx - 159.5).abs() < 1e-12);
        // full-res pixels 0 and 1 average into half-res pixel 0 at x = 0.5
        let full = k.ray(0.5, 0.5);
        let half = h.ray(0.0, 0.0);
        assert!((full - half).norm() < 1e-12);
    }
}
