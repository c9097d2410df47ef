//! File formats: PFM depth maps, PNG images and masks, camera text files
//! and binary PLY point clouds.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::fusion::{CloudPoint, PointCloud};
use crate::geom::{CameraIntrinsics, CameraPose, GeomError, Mat3, Vec3};
use crate::grid::{Grid, Luma};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error("{path}:{line}: {msg}")]
    Malformed { path: PathBuf, line: usize, msg: String },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error(transparent)]
    Geom(#[from] GeomError),
}

fn format_err(path: &Path, msg: impl Into<String>) -> IoError {
    IoError::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn write_pfm_raw(
    path: &Path,
    magic: &str,
    (w, h): (usize, usize),
    channels: usize,
    value: impl Fn(usize, usize, usize) -> f64,
) -> Result<(), IoError> {
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "{magic}\n{w} {h}\n-1.0\n")?;
    for y in (0..h).rev() {
        for x in 0..w {
            for c in 0..channels {
                out.write_all(&(value(x, y, c) as f32).to_le_bytes())?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Single-channel little-endian PFM (scale −1), rows stored bottom-up.
pub fn write_pfm(path: &Path, grid: &Grid<f64>) -> Result<(), IoError> {
    write_pfm_raw(path, "Pf", grid.dims(), 1, |x, y, _| *grid.get(x, y))
}

/// Three-channel PFM, used for normal maps.
pub fn write_pfm_vec3(path: &Path, grid: &Grid<Vec3>) -> Result<(), IoError> {
    write_pfm_raw(path, "PF", grid.dims(), 3, |x, y, c| grid.get(x, y)[c])
}

fn header_token(reader: &mut impl BufRead, path: &Path) -> Result<String, IoError> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        if reader.read(&mut byte)? == 0 {
            return Err(format_err(path, "truncated header"));
        }
        let c = byte[0] as char;
        if c.is_ascii_whitespace() {
            if !tok.is_empty() {
                return Ok(tok);
            }
        } else {
            tok.push(c);
        }
    }
}

/// Values in top-down row order, channels interleaved.
fn read_pfm_raw(path: &Path, magic: &str, channels: usize) -> Result<(usize, usize, Vec<f64>), IoError> {
    let mut reader = BufReader::new(File::open(path)?);
    let found = header_token(&mut reader, path)?;
    if found != magic {
        return Err(format_err(path, format!("expected PFM magic {magic:?}, got {found:?}")));
    }
    let parse = |t: String| t.parse::<usize>().map_err(|_| format_err(path, format!("bad size {t:?}")));
    let w = parse(header_token(&mut reader, path)?)?;
    let h = parse(header_token(&mut reader, path)?)?;
    let scale: f64 = header_token(&mut reader, path)?
        .parse()
        .map_err(|_| format_err(path, "bad scale"))?;
    let little = scale < 0.0;
    let mut data = vec![0u8; w * h * channels * 4];
    reader.read_exact(&mut data)?;
    let mut values = vec![0.0; w * h * channels];
    let row_len = w * channels;
    for (k, chunk) in data.chunks_exact(4).enumerate() {
        let b: [u8; 4] = chunk.try_into().expect("chunks of four");
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (col, row) = (k % row_len, k / row_len);
        values[(h - 1 - row) * row_len + col] = v as f64;
    }
    Ok((w, h, values))
}

pub fn read_pfm(path: &Path) -> Result<Grid<f64>, IoError> {
    let (w, h, values) = read_pfm_raw(path, "Pf", 1)?;
    Ok(Grid::from_vec(w, h, values).expect("sized from the header"))
}

pub fn read_pfm_vec3(path: &Path) -> Result<Grid<Vec3>, IoError> {
    let (w, h, v) = read_pfm_raw(path, "PF", 3)?;
    Ok(Grid::from_fn(w, h, |x, y| {
        let i = 3 * (y * w + x);
        Vec3::new(v[i], v[i + 1], v[i + 2])
    }))
}

/// 8-bit grayscale PNG of values in [0, 1] (clamped).
pub fn write_png_luma(path: &Path, grid: &Luma) -> Result<(), IoError> {
    let (w, h) = grid.dims();
    let img = image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([(grid.get(x as usize, y as usize).clamp(0.0, 1.0) * 255.0).round() as u8])
    });
    img.save(path)?;
    Ok(())
}

pub fn write_png_rgb(path: &Path, grid: &Grid<[f64; 3]>) -> Result<(), IoError> {
    let (w, h) = grid.dims();
    let img = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let c = grid.get(x as usize, y as usize);
        image::Rgb(c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
    });
    img.save(path)?;
    Ok(())
}

pub fn write_png_mask(path: &Path, mask: &Grid<bool>) -> Result<(), IoError> {
    write_png_luma(path, &mask.map(|&b| if b { 1.0 } else { 0.0 }))
}

/// Luminance in [0, 1] of any image file `image` can decode.
pub fn read_luma(path: &Path) -> Result<Luma, IoError> {
    let img = image::open(path)?.to_luma32f();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Grid::from_fn(w, h, |x, y| img.get_pixel(x as u32, y as u32).0[0] as f64))
}

pub fn read_mask(path: &Path) -> Result<Grid<bool>, IoError> {
    Ok(read_luma(path)?.map(|&v| v > 0.5))
}

/// One camera of a camera file.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraRecord {
    /// Relative to the camera file.
    pub image: String,
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
}

pub const CAMERA_FILE_HEADER: &str =
    "# image fx fy cx cy width height r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz";

/// Whitespace-separated lines of 19 fields (see [`CAMERA_FILE_HEADER`]);
/// the pose maps world to camera. `#` starts a comment.
pub fn write_cameras(path: &Path, cams: &[CameraRecord]) -> Result<(), IoError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{CAMERA_FILE_HEADER}")?;
    for c in cams {
        let k = &c.intrinsics;
        write!(out, "{} {:?} {:?} {:?} {:?} {} {}", c.image, k.fx, k.fy, k.cx, k.cy, k.width, k.height)?;
        let r = &c.pose.rotation;
        for i in 0..3 {
            for j in 0..3 {
                write!(out, " {:?}", r[(i, j)])?;
            }
        }
        let t = &c.pose.translation;
        writeln!(out, " {:?} {:?} {:?}", t.x, t.y, t.z)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_cameras(path: &Path) -> Result<Vec<CameraRecord>, IoError> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| IoError::Malformed {
            path: path.to_path_buf(),
            line: n + 1,
            msg,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 19 {
            return Err(bad(format!("expected 19 fields, found {}", fields.len())));
        }
        let num = |i: usize| {
            fields[i]
                .parse::<f64>()
                .map_err(|_| bad(format!("field {} is not a number: {:?}", i + 1, fields[i])))
        };
        let size = |i: usize| {
            fields[i]
                .parse::<usize>()
                .map_err(|_| bad(format!("field {} is not a size: {:?}", i + 1, fields[i])))
        };
        let intrinsics = CameraIntrinsics::new(num(1)?, num(2)?, num(3)?, num(4)?, size(5)?, size(6)?)
            .map_err(|e| bad(e.to_string()))?;
        let mut r = Mat3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                r[(i, j)] = num(7 + 3 * i + j)?;
            }
        }
        let t = Vec3::new(num(16)?, num(17)?, num(18)?);
        let pose = CameraPose::new(r, t).map_err(|e| bad(e.to_string()))?;
        out.push(CameraRecord {
            image: fields[0].to_string(),
            intrinsics,
            pose,
        });
    }
    if out.is_empty() {
        return Err(format_err(path, "no cameras"));
    }
    Ok(out)
}

const PLY_PROPERTIES: [&str; 9] = [
    "property float x",
    "property float y",
    "property float z",
    "property float nx",
    "property float ny",
    "property float nz",
    "property uchar red",
    "property uchar green",
    "property uchar blue",
];

/// Binary little-endian PLY: float32 position and normal, uchar color.
pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<(), IoError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "ply\nformat binary_little_endian 1.0")?;
    writeln!(out, "element vertex {}", cloud.len())?;
    for p in PLY_PROPERTIES {
        writeln!(out, "{p}")?;
    }
    writeln!(out, "end_header")?;
    for p in &cloud.points {
        for v in p.position.iter().chain(p.normal.iter()) {
            out.write_all(&(*v as f32).to_le_bytes())?;
        }
        let rgb = p.color.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8);
        out.write_all(&rgb)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads clouds in the layout [`write_ply`] produces.
pub fn read_ply(path: &Path) -> Result<PointCloud, IoError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut header = Vec::new();
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Err(format_err(path, "missing end_header"));
        }
        let line = line.trim().to_string();
        if line == "end_header" {
            break;
        }
        if !line.starts_with("comment") {
            header.push(line);
        }
    }
    if header.len() != 3 + PLY_PROPERTIES.len()
        || header[0] != "ply"
        || header[1] != "format binary_little_endian 1.0"
        || header[3..] != PLY_PROPERTIES
    {
        return Err(format_err(path, "unsupported PLY layout"));
    }
    let count: usize = header[2]
        .strip_prefix("element vertex ")
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| format_err(path, "bad vertex count"))?;
    let mut buf = [0u8; 27];
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        reader.read_exact(&mut buf)?;
        let f = |k: usize| f32::from_le_bytes(buf[4 * k..4 * k + 4].try_into().expect("four bytes")) as f64;
        points.push(CloudPoint {
            position: Vec3::new(f(0), f(1), f(2)),
            normal: Vec3::new(f(3), f(4), f(5)),
            color: [buf[24], buf[25], buf[26]].map(|c| c as f64 / 255.0),
        });
    }
    Ok(PointCloud { points })
}
