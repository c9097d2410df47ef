//! Textureless-aware multi-view stereo.
//!
//! The reconstruction pipeline runs per view:
//!
//! 1. [`pmstereo`]: PatchMatch with checkerboard propagation and a
//!    bilateral-weighted NCC cost produces an initial depth/normal map.
//! 2. [`jhfilter`]: a confidence estimator combined with a depth
//!    discontinuity detector provisionally discards unreliable pixels.
//! 3. [`icrefine`]: superpixel RANSAC planarization and weighted median
//!    filtering spread reliable depths to discarded pixels.
//! 4. [`texseg`]: Roberts edges and Hough lines delimit large textureless
//!    regions, which are planarized from their reliable surroundings.
//!
//! [`fusion`] merges the per-view maps into a point cloud with multi-view
//! consistency checks. [`synthgen`] renders ground-truth scenes and
//! [`evalkit`] scores reconstructions against them. [`pipeline`] binds the
//! stages together with configuration and on-disk artifacts.

pub mod evalkit;
pub mod fusion;
pub mod geom;
pub mod grid;
pub mod icrefine;
pub mod io;
pub mod jhfilter;
pub mod pipeline;
pub mod pmstereo;
pub mod rng;
pub mod synthgen;
pub mod texseg;

#[cfg(test)]
pub(crate) mod test_support;

pub use fusion::{FusionParams, PointCloud};
pub use geom::{CameraIntrinsics, CameraPose, CameraView, PlaneHypothesis};
pub use grid::Grid;
pub use icrefine::{PlaneModel, RefineConfig, RegionLabelMap};
pub use jhfilter::{FilterConfig, ScoreMap};
pub use pipeline::PipelineConfig;
pub use pmstereo::{HypothesisMap, PatchMatchConfig, PixelState};
pub use texseg::SegConfig;
