mod report;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tsar_core::evalkit::{depth_error_stats, relative_depth_error_stats};
use tsar_core::fusion::fuse;
use tsar_core::geom::Vec3;
use tsar_core::grid::Grid;
use tsar_core::io;
use tsar_core::pipeline::ablation::ablate;
use tsar_core::pipeline::{
    self, parse_config, read_view_maps, run_pipeline, truth_at_views, truth_cloud, truth_depth_range, Dataset,
    DumpFlags, PipelineConfig, RunOptions, Variant,
};
use tsar_core::pmstereo::HypothesisMap;
use tsar_core::synthgen::SCENE_NAMES;

#[derive(Parser)]
#[command(name = "tsar", version, about = "Textureless-aware multi-view stereo")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene: images, cameras and ground truth.
    Synth {
        #[arg(long)]
        scene: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate and refine per-view depth maps, then fuse them.
    Reconstruct(RunArgs),
    /// Fuse the depth maps of a previous run.
    Fuse {
        /// Output directory of `reconstruct` or `run-all`.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Defaults to `<run>/cloud.ply`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy, completeness and f-score of a point cloud.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Distance tolerance; repeat for several.
        #[arg(long = "tolerance", required = true)]
        tolerances: Vec<f64>,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Depth error statistics of depth maps.
    EvalDepth(EvalDepthArgs),
    /// Synthesize (or load), reconstruct and evaluate in one go.
    RunAll(RunArgs),
    /// Run the stage toggle matrix on one view and compare.
    Ablate {
        #[arg(long)]
        scene: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0)]
        view: usize,
        /// Variant labels, e.g. "full" or "w/o ICR"; all by default.
        #[arg(long = "variant")]
        variants: Vec<Variant>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in synthetic scene (overrides the configuration).
    #[arg(long, conflicts_with = "input")]
    scene: Option<String>,
    /// Directory with cameras.txt and images (overrides the configuration).
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides both the configuration and TSAR_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Views processed concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    dump_filter: bool,
    #[arg(long)]
    dump_superpixels: bool,
    #[arg(long)]
    dump_segmentation: bool,
}

#[derive(Args)]
struct EvalDepthArgs {
    /// Run directory to score against a synthetic scene.
    #[arg(long, requires = "scene", conflicts_with_all = ["pred", "gt"])]
    run: Option<PathBuf>,
    #[arg(long)]
    scene: Option<String>,
    /// Single predicted depth PFM.
    #[arg(long, requires = "gt")]
    pred: Option<PathBuf>,
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Mask PNG for `--pred`; every pixel with positive truth otherwise.
    #[arg(long, requires = "pred")]
    mask: Option<PathBuf>,
    /// Threshold; repeat for several. Default 0.01 (relative).
    #[arg(long = "threshold")]
    thresholds: Vec<f64>,
    /// Absolute instead of relative errors.
    #[arg(long)]
    absolute: bool,
    #[arg(long)]
    json: Option<PathBuf>,
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<PipelineConfig> {
    let cfg = match path {
        Some(p) => parse_config(p).with_context(|| format!("reading {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    let mut cfg = cfg.with_env_overrides()?;
    if let Some(s) = seed {
        cfg.run.rng_seed = s;
    }
    Ok(cfg)
}

fn run_config(args: &RunArgs) -> Result<(PipelineConfig, RunOptions)> {
    let mut cfg = load_config(args.config.as_deref(), args.seed)?;
    if let Some(s) = &args.scene {
        cfg.io.scene = Some(s.clone());
        cfg.io.input_dir = None;
    }
    if let Some(d) = &args.input {
        cfg.io.input_dir = Some(d.clone());
        cfg.io.scene = None;
    }
    if let Some(o) = &args.out {
        cfg.io.output_dir = Some(o.clone());
    }
    if cfg.io.output_dir.is_none() {
        bail!("no output directory: pass --out or set io.output_dir");
    }
    if args.jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    let opts = RunOptions {
        jobs: args.jobs,
        dumps: DumpFlags {
            filter: args.dump_filter,
            superpixels: args.dump_superpixels,
            segmentation: args.dump_segmentation,
        },
    };
    Ok((cfg, opts))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn synth(scene: &str, out: &Path) -> Result<()> {
    let data = Dataset::synthetic(scene)?;
    data.write(out)?;
    let truth = data.truth.as_ref().expect("synthetic data has truth");
    let gt = out.join("gt");
    std::fs::create_dir_all(&gt)?;
    for (v, t) in data.views.iter().zip(&truth.views) {
        io::write_pfm(&gt.join(format!("depth_{:03}.pfm", v.id)), &t.depth)?;
        io::write_pfm_vec3(&gt.join(format!("normal_{:03}.pfm", v.id)), &t.normal)?;
        io::write_png_mask(&gt.join(format!("textureless_{:03}.png", v.id)), &t.textureless)?;
    }
    let cloud = truth_cloud(&data.views, &truth.views, &Default::default())?;
    io::write_ply(&gt.join("cloud.ply"), &cloud)?;

    let mut cfg = PipelineConfig::default();
    cfg.io.input_dir = Some(std::fs::canonicalize(out)?);
    if let Some((lo, hi)) = truth_depth_range(&truth.views) {
        cfg.patchmatch.depth_min = lo;
        cfg.patchmatch.depth_max = hi;
    }
    std::fs::write(out.join("scene.toml"), cfg.to_toml())?;
    println!(
        "{scene}: {} views, ground truth cloud of {} points in {}",
        data.views.len(),
        cloud.len(),
        out.display()
    );
    Ok(())
}

fn run_all(args: &RunArgs) -> Result<()> {
    let (cfg, opts) = run_config(args)?;
    let rec = run_pipeline(&cfg, &opts)?;
    let out = cfg.io.output_dir.as_deref().expect("checked by run_config");
    let text = report::write_run_report(out, &rec)?;
    print!("{text}");
    Ok(())
}

fn fuse_run(run: &Path, config: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(config, None)?;
    let data = Dataset::from_dir(run)?;
    let maps = (0..data.views.len())
        .map(|i| read_view_maps(run, i))
        .collect::<Result<Vec<_>, _>>()?;
    let fused = fuse(&data.views, &maps, &cfg.fusion)?;
    if let Some(w) = fused.warning {
        log::warn!("{w:?}");
    }
    let path = out.map_or_else(|| run.join(pipeline::CLOUD_FILE), Path::to_path_buf);
    io::write_ply(&path, &fused.cloud)?;
    println!("{} points -> {}", fused.cloud.len(), path.display());
    Ok(())
}

fn eval_depth(a: &EvalDepthArgs) -> Result<()> {
    let thresholds = if a.thresholds.is_empty() {
        vec![0.01]
    } else {
        a.thresholds.clone()
    };
    let stats = |map: &HypothesisMap, gt: &Grid<f64>, mask: &Grid<bool>| {
        if a.absolute {
            depth_error_stats(map, gt, mask, &thresholds)
        } else {
            relative_depth_error_stats(map, gt, mask, &thresholds)
        }
    };
    let mut rows = Vec::new();
    if let (Some(run), Some(scene)) = (&a.run, &a.scene) {
        let data = Dataset::from_dir(run)?;
        let scene = Dataset::synthetic(scene)?;
        let truths = truth_at_views(scene.truth.as_ref().expect("synthetic"), &data.views);
        for (i, t) in truths.iter().enumerate() {
            let map = read_view_maps(run, i)?;
            for (name, mask) in [("textureless", t.textureless.clone()), ("textured", t.textured()), ("all", t.valid())] {
                if mask.iter().any(|&m| m) {
                    rows.push((format!("view {i} {name}"), stats(&map, &t.depth, &mask)?));
                }
            }
        }
    } else if let (Some(pred), Some(gt)) = (&a.pred, &a.gt) {
        let depth = io::read_pfm(pred)?;
        let normal = Grid::new(depth.width(), depth.height(), Vec3::zeros());
        let map = pipeline::map_from_depth_normal(&depth, &normal);
        let gt_depth = io::read_pfm(gt)?;
        let mask = match &a.mask {
            Some(m) => io::read_mask(m)?,
            None => gt_depth.map(|&d| d > 0.0),
        };
        rows.push((pred.display().to_string(), stats(&map, &gt_depth, &mask)?));
    } else {
        bail!("pass either --run and --scene, or --pred and --gt");
    }
    let text = report::depth_table(&rows, a.absolute);
    print!("{text}");
    if let Some(j) = &a.json {
        let v: Vec<_> = rows.iter().map(|(n, s)| serde_json::json!({ "name": n, "stats": s })).collect();
        write_json(j, &v)?;
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Synth { scene, out } => {
            if !SCENE_NAMES.contains(&scene.as_str()) {
                bail!("unknown scene {scene:?}; choose one of {}", SCENE_NAMES.join(", "));
            }
            synth(&scene, &out)
        }
        Command::Reconstruct(args) => {
            let (cfg, opts) = run_config(&args)?;
            let rec = run_pipeline(&cfg, &opts)?;
            println!(
                "{} points, config {} -> {}",
                rec.cloud.len(),
                &rec.manifest.config_hash[..12],
                cfg.io.output_dir.as_deref().expect("checked").display()
            );
            Ok(())
        }
        Command::Fuse { run, config, out } => fuse_run(&run, config.as_deref(), out.as_deref()),
        Command::Eval {
            pred,
            gt,
            tolerances,
            json,
        } => {
            let p = io::read_ply(&pred)?;
            let g = io::read_ply(&gt)?;
            let metrics = tolerances
                .iter()
                .map(|&t| tsar_core::evalkit::cloud_metrics(&p, &g, t))
                .collect::<Result<Vec<_>, _>>()?;
            print!("{}", report::cloud_table(&metrics));
            if let Some(j) = json {
                write_json(&j, &metrics)?;
            }
            Ok(())
        }
        Command::EvalDepth(a) => eval_depth(&a),
        Command::RunAll(args) => run_all(&args),
        Command::Ablate {
            scene,
            config,
            seed,
            view,
            variants,
            json,
        } => {
            let mut cfg = load_config(config.as_deref(), seed)?;
            cfg.io.scene = Some(scene.clone());
            cfg.io.input_dir = None;
            let data = Dataset::synthetic(&scene)?;
            let variants = if variants.is_empty() {
                Variant::ALL.to_vec()
            } else {
                variants
            };
            let result = ablate(&cfg, &data, view, &variants)?;
            print!("{}", result.table());
            if let Some(j) = json {
                write_json(&j, &result)?;
            }
            Ok(())
        }
    }
}
