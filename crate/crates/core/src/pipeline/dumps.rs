//! Diagnostic images of intermediate stages.

use std::path::Path;

use crate::geom::CameraView;
use crate::grid::{Grid, Rgb};
use crate::icrefine::{superpixels, RefineConfig, RegionLabelMap};
use crate::io::{self, IoError};
use crate::pmstereo::{HypothesisMap, PixelState};
use crate::rng;
use crate::texseg::{hough::rasterize, Segmentation};

use super::{DumpFlags, ViewResult};

/// Deterministic pastel color per label.
fn label_color(label: u32) -> [f64; 3] {
    [0, 1, 2].map(|c| 0.25 + 0.75 * rng::unit_hash(label as u64, &[c]))
}

/// Region colors with label boundaries darkened.
pub fn label_image(regions: &RegionLabelMap) -> Rgb {
    let l = &regions.labels;
    let (w, h) = l.dims();
    Grid::from_fn(w, h, |x, y| {
        let me = *l.get(x, y);
        let edge = (x + 1 < w && *l.get(x + 1, y) != me) || (y + 1 < h && *l.get(x, y + 1) != me);
        if edge {
            [0.0; 3]
        } else {
            label_color(me)
        }
    })
}

/// Confident green, Filled blue, Discarded black.
pub fn state_image(map: &HypothesisMap) -> Rgb {
    map.state.map(|s| match s {
        PixelState::Confident => [0.1, 0.8, 0.2],
        PixelState::Filled => [0.2, 0.4, 0.95],
        PixelState::Discarded => [0.0, 0.0, 0.0],
    })
}

/// Textureless regions in their label colors with diagonal hatching,
/// other regions gray.
pub fn segmentation_image(seg: &Segmentation) -> Rgb {
    let l = &seg.regions.labels;
    Grid::from_fn(l.width(), l.height(), |x, y| {
        let label = *l.get(x, y);
        if seg.textureless[label as usize] {
            let c = label_color(label);
            if (x + y) % 8 < 2 {
                c.map(|v| v * 0.4)
            } else {
                c
            }
        } else {
            [0.5; 3]
        }
    })
}

/// The image in gray with detected segments in red.
pub fn lines_image(view: &CameraView, seg: &Segmentation) -> Rgb {
    let (w, h) = view.image.dims();
    let mut mask = Grid::new(w, h, false);
    for s in &seg.lines {
        rasterize(s, &mut mask);
    }
    Grid::from_fn(w, h, |x, y| {
        if *mask.get(x, y) {
            [1.0, 0.0, 0.0]
        } else {
            [*view.image.get(x, y); 3]
        }
    })
}

pub fn write_view_dumps(
    out_dir: &Path,
    view: &CameraView,
    result: &ViewResult,
    flags: &DumpFlags,
    refine_cfg: &RefineConfig,
) -> Result<(), IoError> {
    if !(flags.filter || flags.superpixels || flags.segmentation) {
        return Ok(());
    }
    let dir = out_dir.join("dumps");
    std::fs::create_dir_all(&dir)?;
    let id = view.id;
    let name = |stem: &str| dir.join(format!("{stem}_{id:03}.png"));
    if flags.filter {
        if let Some(s) = &result.artifacts.scores {
            io::write_png_luma(&name("confidence"), &s.confidence)?;
            io::write_png_mask(&name("discontinuity"), &s.discontinuity)?;
            io::write_png_luma(&name("aggregate"), &s.aggregate)?;
        }
        io::write_png_rgb(&name("states"), &state_image(&result.map))?;
    }
    if flags.superpixels {
        io::write_png_rgb(&name("superpixels"), &label_image(&superpixels(view, refine_cfg)))?;
    }
    if flags.segmentation {
        if let Some(seg) = &result.artifacts.segmentation {
            let peak = seg.edges.magnitude.iter().copied().fold(0.0, f64::max).max(1e-12);
            io::write_png_luma(&name("edges"), &seg.edges.magnitude.map(|m| m / peak))?;
            io::write_png_rgb(&name("lines"), &lines_image(view, seg))?;
            io::write_png_rgb(&name("regions"), &segmentation_image(seg))?;
        }
    }
    Ok(())
}
