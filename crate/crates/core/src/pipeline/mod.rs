//! Configuration, per-view stage orchestration, fusion and on-disk
//! artifacts of a reconstruction run.

pub mod ablation;
mod config;
pub mod dumps;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::evalkit::EvalError;
use crate::fusion::{fuse, FusionError, FusionParams, FusionWarning, PointCloud};
use crate::geom::{CameraView, GeomError, PlaneHypothesis, Vec3};
use crate::grid::Grid;
use crate::icrefine::{refine, RefineError};
use crate::io::{self, CameraRecord, IoError};
use crate::jhfilter::{joint_filter, FilterError, ScoreMap};
use crate::pmstereo::{run_patchmatch, HypothesisMap, PatchMatchConfig, PatchMatchError, PixelState, StateCounts};
use crate::synthgen::{self, GroundTruth, SynthError, ViewTruth};
use crate::texseg::{planarize_textureless, segment, Segmentation};

pub use config::{parse_config, ConfigError, IoConfig, PipelineConfig, RunConfig, SEED_ENV};

pub const CAMERA_FILE: &str = "cameras.txt";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CLOUD_FILE: &str = "cloud.ply";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    PatchMatch(#[from] PatchMatchError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("{path}: image is {got:?} but the camera file says {expected:?}")]
    DimensionMismatch {
        path: PathBuf,
        expected: (usize, usize),
        got: (usize, usize),
    },
}

/// Calibrated views at full resolution, with ground truth for synthetic
/// scenes.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub views: Vec<CameraView>,
    pub truth: Option<GroundTruth>,
}

impl Dataset {
    pub fn synthetic(name: &str) -> Result<Self, PipelineError> {
        let spec = synthgen::scene_by_name(name)?;
        let (views, truth) = synthgen::render(&spec)?;
        Ok(Self {
            name: name.to_string(),
            views,
            truth: Some(truth),
        })
    }

    /// Reads `cameras.txt` and its images from `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self, PipelineError> {
        let cam_path = dir.join(CAMERA_FILE);
        if !cam_path.is_file() {
            return Err(PipelineError::MissingInput(format!(
                "{} not found",
                cam_path.display()
            )));
        }
        let records = io::read_cameras(&cam_path)?;
        let mut views = Vec::with_capacity(records.len());
        for (id, rec) in records.into_iter().enumerate() {
            let path = dir.join(&rec.image);
            if !path.is_file() {
                return Err(PipelineError::MissingInput(format!(
                    "image {} not found",
                    path.display()
                )));
            }
            let image = io::read_luma(&path)?;
            let expected = (rec.intrinsics.width, rec.intrinsics.height);
            if image.dims() != expected {
                return Err(PipelineError::DimensionMismatch {
                    path,
                    expected,
                    got: image.dims(),
                });
            }
            views.push(CameraView::new(id, rec.intrinsics, rec.pose, image, None)?);
        }
        if views.len() < 2 {
            return Err(PipelineError::MissingInput(
                "at least two cameras are needed".into(),
            ));
        }
        let name = dir
            .file_name()
            .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
        Ok(Self {
            name,
            views,
            truth: None,
        })
    }

    pub fn load(io: &IoConfig) -> Result<Self, PipelineError> {
        match (&io.scene, &io.input_dir) {
            (Some(scene), None) => Self::synthetic(scene),
            (None, Some(dir)) => Self::from_dir(dir),
            _ => Err(PipelineError::MissingInput(
                "set exactly one of io.scene and io.input_dir".into(),
            )),
        }
    }

    /// Writes images and the camera file so [`Dataset::from_dir`] can
    /// read them back.
    pub fn write(&self, dir: &Path) -> Result<(), PipelineError> {
        std::fs::create_dir_all(dir.join("images")).map_err(IoError::from)?;
        let mut records = Vec::with_capacity(self.views.len());
        for v in &self.views {
            let image = format!("images/view_{:03}.png", v.id);
            io::write_png_luma(&dir.join(&image), &v.image)?;
            records.push(CameraRecord {
                image,
                intrinsics: v.intrinsics,
                pose: v.pose,
            });
        }
        io::write_cameras(&dir.join(CAMERA_FILE), &records)?;
        Ok(())
    }
}

/// Ground truth of every view at the resolution of `views`.
pub fn truth_at_views(truth: &GroundTruth, views: &[CameraView]) -> Vec<ViewTruth> {
    views
        .iter()
        .map(|v| synthgen::truth_at(&truth.surfaces, &v.intrinsics, &v.pose))
        .collect()
}

/// Ground-truth depth range over `truths`, widened by 10% on each side.
pub fn truth_depth_range(truths: &[ViewTruth]) -> Option<(f64, f64)> {
    let (lo, hi) = truths
        .iter()
        .flat_map(|t| t.depth.iter().copied())
        .filter(|&d| d > 0.0)
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d), hi.max(d)));
    (hi > 0.0).then(|| (0.9 * lo, 1.1 * hi))
}

/// Point cloud fused from exact ground-truth maps.
pub fn truth_cloud(
    views: &[CameraView],
    truths: &[ViewTruth],
    params: &FusionParams,
) -> Result<PointCloud, FusionError> {
    let maps: Vec<HypothesisMap> = truths.iter().map(ViewTruth::hypothesis_map).collect();
    Ok(fuse(views, &maps, params)?.cloud)
}

/// The configuration actually applied to a dataset: the run seed copied
/// into each stage and, for synthetic scenes with `auto_depth_range`, the
/// ground-truth depth range.
pub fn effective_config(cfg: &PipelineConfig, truths: Option<&[ViewTruth]>) -> PipelineConfig {
    let mut c = cfg.clone();
    if let Some(t) = truths.filter(|_| cfg.run.auto_depth_range) {
        if let Some((lo, hi)) = truth_depth_range(t) {
            c.patchmatch.depth_min = lo;
            c.patchmatch.depth_max = hi;
        }
    }
    c
}

/// Timing and pixel-state counts after one stage.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageRecord {
    pub stage: String,
    pub seconds: f64,
    pub counts: StateCounts,
}

/// Intermediate products kept for dumps.
#[derive(Clone, Debug, Default)]
pub struct StageArtifacts {
    pub scores: Option<ScoreMap>,
    pub segmentation: Option<Segmentation>,
}

#[derive(Clone, Debug)]
pub struct ViewResult {
    pub map: HypothesisMap,
    pub stages: Vec<StageRecord>,
    pub artifacts: StageArtifacts,
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed().as_secs_f64())
}

fn record(stage: &str, seconds: f64, map: &HypothesisMap) -> StageRecord {
    StageRecord {
        stage: stage.to_string(),
        seconds,
        counts: map.state_counts(),
    }
}

/// Filtering, refinement and textureless planarization of a PatchMatch
/// map, each stage gated by its toggle.
pub fn post_process(
    initial: HypothesisMap,
    view: &CameraView,
    cfg: &PipelineConfig,
) -> Result<ViewResult, PipelineError> {
    let refine_cfg = cfg.refine_config();
    let mut map = initial;
    let mut stages = Vec::new();
    let mut artifacts = StageArtifacts::default();
    if cfg.run.enable_jhf {
        let (out, s) = timed(|| joint_filter(&map, &cfg.filter));
        let out = out?;
        if let Some(w) = out.warning {
            log::warn!("view {}: {w:?}", view.id);
        }
        map = out.map;
        stages.push(record("joint_filter", s, &map));
        artifacts.scores = Some(out.scores);
    }
    if cfg.run.enable_icr {
        let weights = artifacts.scores.as_ref().map(|s| &s.aggregate);
        let (out, s) = timed(|| refine(&map, view, weights, &refine_cfg));
        map = out?;
        stages.push(record("refine", s, &map));
    }
    if cfg.run.enable_ts {
        let (seg, s1) = timed(|| segment(view, &cfg.segmentation));
        let (out, s2) = timed(|| planarize_textureless(&map, view, &seg.regions, &seg.textureless, &refine_cfg));
        map = out;
        stages.push(record("textureless", s1 + s2, &map));
        artifacts.segmentation = Some(seg);
    }
    Ok(ViewResult {
        map,
        stages,
        artifacts,
    })
}

/// PatchMatch for view `index` against all other views.
pub fn patchmatch_view(
    views: &[CameraView],
    index: usize,
    pm: &PatchMatchConfig,
) -> Result<HypothesisMap, PatchMatchError> {
    let srcs: Vec<CameraView> = views
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != index)
        .map(|(_, v)| v.clone())
        .collect();
    run_patchmatch(&views[index], &srcs, pm)
}

/// Every stage for view `index`.
pub fn process_view(
    views: &[CameraView],
    index: usize,
    cfg: &PipelineConfig,
) -> Result<ViewResult, PipelineError> {
    let (map, s) = timed(|| patchmatch_view(views, index, &cfg.patchmatch_config()));
    let map = map?;
    let pm_record = record("patchmatch", s, &map);
    let mut out = post_process(map, &views[index], cfg)?;
    out.stages.insert(0, pm_record);
    Ok(out)
}

/// Which intermediate images to write under `dumps/`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DumpFlags {
    pub filter: bool,
    pub superpixels: bool,
    pub segmentation: bool,
}

/// Run options that do not change results.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunOptions {
    /// Views processed concurrently.
    pub jobs: usize,
    pub dumps: DumpFlags,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            jobs: 1,
            dumps: DumpFlags::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ViewManifest {
    pub id: usize,
    pub width: usize,
    pub height: usize,
    pub stages: Vec<StageRecord>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FusionManifest {
    pub points: usize,
    pub seconds: f64,
    pub warning: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub config_hash: String,
    pub dataset: String,
    pub rng_seed: u64,
    pub downsample: usize,
    pub depth_range: [f64; 2],
    pub views: Vec<ViewManifest>,
    pub fusion: FusionManifest,
    pub total_seconds: f64,
}

/// In-memory result of a run.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub config: PipelineConfig,
    /// Views at the processing resolution.
    pub views: Vec<CameraView>,
    pub maps: Vec<HypothesisMap>,
    /// Ground truth at the processing resolution, for synthetic scenes.
    pub truths: Option<Vec<ViewTruth>>,
    pub cloud: PointCloud,
    pub manifest: Manifest,
}

pub fn depth_path(dir: &Path, id: usize) -> PathBuf {
    dir.join("depth").join(format!("depth_{id:03}.pfm"))
}

pub fn normal_path(dir: &Path, id: usize) -> PathBuf {
    dir.join("depth").join(format!("normal_{id:03}.pfm"))
}

/// Depth map with zeros on Discarded pixels.
pub fn write_view_maps(dir: &Path, id: usize, map: &HypothesisMap) -> Result<(), IoError> {
    std::fs::create_dir_all(dir.join("depth"))?;
    io::write_pfm(&depth_path(dir, id), &map.masked_depth_grid())?;
    let normals = Grid::from_fn(map.width(), map.height(), |x, y| {
        if *map.state.get(x, y) == PixelState::Discarded {
            Vec3::zeros()
        } else {
            map.hyps.get(x, y).normal
        }
    });
    io::write_pfm_vec3(&normal_path(dir, id), &normals)
}

/// Inverse of [`write_view_maps`]: zero depth reads back as Discarded.
pub fn read_view_maps(dir: &Path, id: usize) -> Result<HypothesisMap, PipelineError> {
    let dp = depth_path(dir, id);
    let np = normal_path(dir, id);
    for p in [&dp, &np] {
        if !p.is_file() {
            return Err(PipelineError::MissingInput(format!("{} not found", p.display())));
        }
    }
    let depth = io::read_pfm(&dp)?;
    let normal = io::read_pfm_vec3(&np)?;
    if depth.dims() != normal.dims() {
        return Err(PipelineError::DimensionMismatch {
            path: np,
            expected: depth.dims(),
            got: normal.dims(),
        });
    }
    Ok(map_from_depth_normal(&depth, &normal))
}

pub fn map_from_depth_normal(depth: &Grid<f64>, normal: &Grid<Vec3>) -> HypothesisMap {
    let (w, h) = depth.dims();
    let hyps = Grid::from_fn(w, h, |x, y| PlaneHypothesis {
        depth: *depth.get(x, y),
        normal: *normal.get(x, y),
    });
    let mut map = HypothesisMap::new(hyps, Grid::new(w, h, 0.0));
    map.state = depth.map(|&d| {
        if d > 0.0 && d.is_finite() {
            PixelState::Confident
        } else {
            PixelState::Discarded
        }
    });
    map
}

/// Downsamples the dataset, processes every view and fuses the maps.
/// Nothing is written to disk.
pub fn reconstruct(
    cfg: &PipelineConfig,
    dataset: &Dataset,
    opts: &RunOptions,
    mut on_view: impl FnMut(&CameraView, &ViewResult) -> Result<(), PipelineError>,
) -> Result<Reconstruction, PipelineError> {
    cfg.validate()?;
    let start = Instant::now();
    let views: Vec<CameraView> = dataset
        .views
        .iter()
        .map(|v| v.downsampled(cfg.run.downsample))
        .collect();
    let truths = dataset.truth.as_ref().map(|t| truth_at_views(t, &views));
    let config = effective_config(cfg, truths.as_deref());
    log::info!(
        "{}: {} views at {}x{}, depth range [{:.3}, {:.3}]",
        dataset.name,
        views.len(),
        views[0].width(),
        views[0].height(),
        config.patchmatch.depth_min,
        config.patchmatch.depth_max
    );

    let results: Vec<ViewResult> = if opts.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .expect("thread pool");
        let computed: Vec<Result<ViewResult, PipelineError>> =
            pool.install(|| (0..views.len()).into_par_iter().map(|i| process_view(&views, i, &config)).collect());
        let mut out = Vec::with_capacity(computed.len());
        for (v, r) in views.iter().zip(computed) {
            let r = r?;
            on_view(v, &r)?;
            out.push(r);
        }
        out
    } else {
        let mut out = Vec::with_capacity(views.len());
        for i in 0..views.len() {
            let r = process_view(&views, i, &config)?;
            log::info!("view {i}: {:?}", r.map.state_counts());
            on_view(&views[i], &r)?;
            out.push(r);
        }
        out
    };

    let (maps, view_records): (Vec<HypothesisMap>, Vec<ViewManifest>) = results
        .into_iter()
        .zip(&views)
        .map(|(r, v)| {
            let m = ViewManifest {
                id: v.id,
                width: v.width(),
                height: v.height(),
                stages: r.stages,
            };
            (r.map, m)
        })
        .unzip();

    let (fused, fuse_s) = timed(|| fuse(&views, &maps, &config.fusion));
    let fused = fused?;
    if fused.warning == Some(FusionWarning::EmptyOutput) {
        log::warn!("fusion produced no points");
    }
    let manifest = Manifest {
        config_hash: config.hash(),
        dataset: dataset.name.clone(),
        rng_seed: config.run.rng_seed,
        downsample: config.run.downsample,
        depth_range: [config.patchmatch.depth_min, config.patchmatch.depth_max],
        views: view_records,
        fusion: FusionManifest {
            points: fused.cloud.len(),
            seconds: fuse_s,
            warning: fused.warning.map(|w| format!("{w:?}")),
        },
        total_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(Reconstruction {
        config,
        views,
        maps,
        truths,
        cloud: fused.cloud,
        manifest,
    })
}

/// Full run with artifacts under `io.output_dir`: per-view depth and
/// normal PFMs, the fused PLY, the effective configuration, a manifest,
/// and the processed views as images plus `cameras.txt`.
pub fn run_pipeline(cfg: &PipelineConfig, opts: &RunOptions) -> Result<Reconstruction, PipelineError> {
    cfg.validate()?;
    let out_dir = cfg
        .io
        .output_dir
        .clone()
        .ok_or_else(|| PipelineError::MissingInput("io.output_dir is not set".into()))?;
    let dataset = Dataset::load(&cfg.io)?;
    std::fs::create_dir_all(&out_dir).map_err(IoError::from)?;
    let refine_cfg = cfg.refine_config();
    let rec = reconstruct(cfg, &dataset, opts, |view, r| {
        write_view_maps(&out_dir, view.id, &r.map)?;
        dumps::write_view_dumps(&out_dir, view, r, &opts.dumps, &refine_cfg)?;
        Ok(())
    })?;
    Dataset {
        name: dataset.name.clone(),
        views: rec.views.clone(),
        truth: None,
    }
    .write(&out_dir)?;
    io::write_ply(&out_dir.join(CLOUD_FILE), &rec.cloud)?;
    std::fs::write(out_dir.join("config.toml"), rec.config.to_toml()).map_err(IoError::from)?;
    let json = serde_json::to_string_pretty(&rec.manifest).expect("manifest serializes");
    std::fs::write(out_dir.join(MANIFEST_FILE), json).map_err(IoError::from)?;
    Ok(rec)
}

/// Stage toggle combinations of the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Full,
    WithoutJhf,
    WithoutIcr,
    WithoutTs,
    WithoutConfidence,
    WithoutDiscontinuity,
    WithoutPlanarization,
    WithoutWmf,
    TogglesOff,
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::Full,
        Variant::WithoutJhf,
        Variant::WithoutIcr,
        Variant::WithoutTs,
        Variant::WithoutConfidence,
        Variant::WithoutDiscontinuity,
        Variant::WithoutPlanarization,
        Variant::WithoutWmf,
        Variant::TogglesOff,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::WithoutJhf => "w/o JHF",
            Variant::WithoutIcr => "w/o ICR",
            Variant::WithoutTs => "w/o TS",
            Variant::WithoutConfidence => "w/o CE",
            Variant::WithoutDiscontinuity => "w/o DD",
            Variant::WithoutPlanarization => "w/o SP",
            Variant::WithoutWmf => "w/o WMF",
            Variant::TogglesOff => "toggles off",
        }
    }

    /// `base` with this variant's component switched off. `Full` enables
    /// every stage and sub-component.
    pub fn apply(self, base: &PipelineConfig) -> PipelineConfig {
        let mut c = base.clone();
        c.run.enable_jhf = true;
        c.run.enable_icr = true;
        c.run.enable_ts = true;
        c.filter.enable_confidence = true;
        c.filter.enable_discontinuity = true;
        c.refine.enable_planarization = true;
        c.refine.enable_wmf = true;
        match self {
            Variant::Full => {}
            Variant::WithoutJhf => c.run.enable_jhf = false,
            Variant::WithoutIcr => c.run.enable_icr = false,
            Variant::WithoutTs => c.run.enable_ts = false,
            Variant::WithoutConfidence => c.filter.enable_confidence = false,
            Variant::WithoutDiscontinuity => c.filter.enable_discontinuity = false,
            Variant::WithoutPlanarization => c.refine.enable_planarization = false,
            Variant::WithoutWmf => c.refine.enable_wmf = false,
            Variant::TogglesOff => {
                c.run.enable_jhf = false;
                c.run.enable_icr = false;
                c.run.enable_ts = false;
            }
        }
        c
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.label() == s)
            .ok_or_else(|| format!("unknown variant {s:?}"))
    }
}
