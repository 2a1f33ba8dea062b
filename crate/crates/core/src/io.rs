//! Reading and writing images, depth maps, intrinsics, TUM trajectories and
//! alignment reports.
//!
//! Every loader returns a structured [`Error`] naming the offending path on
//! malformed input; none of them panic.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, ImageReader, Luma};
use nalgebra::{Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::imaging::{InverseDepthImage, ScalarImage};
use crate::solver::{AlignmentResult, Estimate, Family, Frame, LevelTrace, SolverConfig, StopReason};
use crate::warp::CameraIntrinsics;

/// Raw depth units per meter in TUM depth PNGs.
pub const DEFAULT_DEPTH_SCALE: f64 = 5000.0;
/// Depths outside `[MIN_DEPTH_M, MAX_DEPTH_M]` are treated as missing.
pub const MIN_DEPTH_M: f64 = 0.5;
pub const MAX_DEPTH_M: f64 = 5.0;
/// Allowed deviation of a TUM quaternion from unit norm.
pub const QUATERNION_NORM_TOLERANCE: f64 = 1e-6;
pub const REPORT_SCHEMA_VERSION: u32 = 1;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn decode(path: &Path) -> Result<DynamicImage> {
    ImageReader::open(path)
        .map_err(io_err(path))?
        .with_guessed_format()
        .map_err(io_err(path))?
        .decode()
        .map_err(image_err(path))
}

fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Loads an 8- or 16-bit grayscale or RGB(A) PNG or PNM as intensities in
/// `[0, 1]`. Color is reduced to luma; alpha is ignored.
pub fn load_intensity(path: impl AsRef<Path>) -> Result<ScalarImage> {
    let path = path.as_ref();
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match &img {
        DynamicImage::ImageLuma8(b) => b.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        DynamicImage::ImageLumaA8(b) => b.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(b) => b.pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
        DynamicImage::ImageLumaA16(b) => b.pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
        DynamicImage::ImageRgb8(b) => b
            .pixels()
            .map(|p| luma(p.0[0] as f64, p.0[1] as f64, p.0[2] as f64) / 255.0)
            .collect(),
        DynamicImage::ImageRgba8(b) => b
            .pixels()
            .map(|p| luma(p.0[0] as f64, p.0[1] as f64, p.0[2] as f64) / 255.0)
            .collect(),
        DynamicImage::ImageRgb16(b) => b
            .pixels()
            .map(|p| luma(p.0[0] as f64, p.0[1] as f64, p.0[2] as f64) / 65535.0)
            .collect(),
        DynamicImage::ImageRgba16(b) => b
            .pixels()
            .map(|p| luma(p.0[0] as f64, p.0[1] as f64, p.0[2] as f64) / 65535.0)
            .collect(),
        other => {
            return Err(parse_err(path, 0, format!("unsupported pixel format {:?}", other.color())));
        }
    };
    ScalarImage::new(w, h, data).map_err(|e| parse_err(path, 0, e.to_string()))
}

/// Sample depth of saved intensity images.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

/// Saves intensities clamped to `[0, 1]` as grayscale. The format follows
/// the extension (`.png`, `.pgm`).
pub fn save_intensity(img: &ScalarImage, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let q = |v: f64, max: f64| (v.clamp(0.0, 1.0) * max).round();
    match depth {
        BitDepth::Eight => {
            let data = img.data().iter().map(|&v| q(v, 255.0) as u8).collect();
            ImageBuffer::<Luma<u8>, Vec<u8>>::from_raw(w, h, data)
                .expect("buffer matches dimensions")
                .save(path)
        }
        BitDepth::Sixteen => {
            let data = img.data().iter().map(|&v| q(v, 65535.0) as u16).collect();
            ImageBuffer::<Luma<u16>, Vec<u16>>::from_raw(w, h, data)
                .expect("buffer matches dimensions")
                .save(path)
        }
    }
    .map_err(image_err(path))
}

/// Loads a 16-bit depth PNG where `raw / scale` is meters. Zero and depths
/// outside `[0.5, 5]` m become invalid.
pub fn load_depth(path: impl AsRef<Path>, scale: f64) -> Result<InverseDepthImage> {
    let path = path.as_ref();
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidConfig(format!("depth scale {scale} must be positive")));
    }
    let img = match decode(path)? {
        DynamicImage::ImageLuma16(b) => b,
        other => {
            return Err(parse_err(
                path,
                0,
                format!("depth maps must be 16-bit grayscale, found {:?}", other.color()),
            ))
        }
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(InverseDepthImage::from_depth(w, h, |x, y| {
        let raw = img.get_pixel(x as u32, y as u32).0[0];
        let z = raw as f64 / scale;
        if raw != 0 && (MIN_DEPTH_M..=MAX_DEPTH_M).contains(&z) {
            z
        } else {
            0.0
        }
    }))
}

/// Saves depth as a 16-bit PNG with `raw = round(z·scale)`. Invalid pixels
/// and depths beyond the 16-bit range are written as 0.
pub fn save_depth(depth: &InverseDepthImage, path: impl AsRef<Path>, scale: f64) -> Result<()> {
    let path = path.as_ref();
    let data = depth
        .image()
        .data()
        .iter()
        .map(|&d| {
            if d <= 0.0 {
                return 0;
            }
            let raw = (scale / d).round();
            if raw >= 1.0 && raw <= u16::MAX as f64 {
                raw as u16
            } else {
                0
            }
        })
        .collect();
    ImageBuffer::<Luma<u16>, Vec<u16>>::from_raw(depth.width() as u32, depth.height() as u32, data)
        .expect("buffer matches dimensions")
        .save(path)
        .map_err(image_err(path))
}

fn parse_reals(path: &Path, line_no: usize, line: &str, expected: usize) -> Result<Vec<f64>> {
    let values = line
        .split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(path, line_no, format!("`{tok}` is not a finite number")))
        })
        .collect::<Result<Vec<f64>>>()?;
    if values.len() != expected {
        return Err(parse_err(
            path,
            line_no,
            format!("expected {expected} values, found {}", values.len()),
        ));
    }
    Ok(values)
}

fn content_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let trimmed = line.trim();
        if !trimmed.is_empty() && !trimmed.starts_with('#') {
            out.push((i + 1, trimmed.to_string()));
        }
    }
    Ok(out)
}

/// Reads `fx fy cx cy` from a text file.
pub fn load_intrinsics(path: impl AsRef<Path>) -> Result<CameraIntrinsics> {
    let path = path.as_ref();
    let lines = content_lines(path)?;
    let (line_no, line) = match lines.as_slice() {
        [one] => one,
        [] => return Err(parse_err(path, 1, "no intrinsics found")),
        [_, (n, _), ..] => return Err(parse_err(path, *n, "expected a single line `fx fy cx cy`")),
    };
    let v = parse_reals(path, *line_no, line, 4)?;
    CameraIntrinsics::new(v[0], v[1], v[2], v[3]).map_err(|e| parse_err(path, *line_no, e.to_string()))
}

pub fn save_intrinsics(k: &CameraIntrinsics, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format!("{} {} {} {}\n", k.fx, k.fy, k.cx, k.cy)).map_err(io_err(path))
}

/// One line of a TUM trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub timestamp: f64,
    pub pose: RigidTransform,
}

/// Rotation of a unit quaternion given as `(qx, qy, qz, qw)`.
pub fn quaternion_to_rotation(q: [f64; 4]) -> nalgebra::Matrix3<f64> {
    let [x, y, z, w] = q;
    *UnitQuaternion::new_normalize(Quaternion::new(w, x, y, z))
        .to_rotation_matrix()
        .matrix()
}

/// `(qx, qy, qz, qw)` with `qw ≥ 0`.
pub fn rotation_to_quaternion(r: &nalgebra::Matrix3<f64>) -> [f64; 4] {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r));
    let s = if q.w < 0.0 { -1.0 } else { 1.0 };
    [s * q.i, s * q.j, s * q.k, s * q.w]
}

/// Parses `timestamp tx ty tz qx qy qz qw` lines; `#` comments and blank
/// lines are skipped.
pub fn load_poses_tum(path: impl AsRef<Path>) -> Result<Vec<PoseRecord>> {
    let path = path.as_ref();
    content_lines(path)?
        .into_iter()
        .map(|(n, line)| {
            let v = parse_reals(path, n, &line, 8)?;
            let q = [v[4], v[5], v[6], v[7]];
            let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > QUATERNION_NORM_TOLERANCE {
                return Err(parse_err(path, n, format!("quaternion norm {norm} is not 1")));
            }
            Ok(PoseRecord {
                timestamp: v[0],
                pose: RigidTransform::new(quaternion_to_rotation(q), Vector3::new(v[1], v[2], v[3])),
            })
        })
        .collect()
}

pub fn save_poses_tum(records: &[PoseRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for r in records {
        let t = r.pose.translation;
        let [qx, qy, qz, qw] = rotation_to_quaternion(&r.pose.rotation);
        out.push_str(&format!("{} {} {} {} {qx} {qy} {qz} {qw}\n", r.timestamp, t.x, t.y, t.z));
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Paths of one input frame.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FramePaths {
    pub intensity: PathBuf,
    pub depth: Option<PathBuf>,
    pub intrinsics: Option<PathBuf>,
}

impl FramePaths {
    pub fn load(&self, depth_scale: f64) -> Result<Frame> {
        let intensity = load_intensity(&self.intensity)?;
        let depth = self.depth.as_ref().map(|p| load_depth(p, depth_scale)).transpose()?;
        if let Some(d) = &depth {
            if d.dims() != intensity.dims() {
                return Err(Error::InvalidImage(format!(
                    "{}: depth is {:?} but intensity is {:?}",
                    self.depth.as_ref().unwrap().display(),
                    d.dims(),
                    intensity.dims()
                )));
            }
        }
        let intrinsics = self.intrinsics.as_ref().map(load_intrinsics).transpose()?;
        Ok(Frame {
            intensity,
            depth,
            intrinsics,
        })
    }
}

/// JSON report of one alignment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub family: Family,
    pub config: SolverConfig,
    pub estimate: Estimate,
    pub converged: bool,
    pub reason: StopReason,
    pub final_objective: f64,
    /// Per-level traces, coarsest first.
    pub trace: Vec<LevelTrace>,
}

impl Report {
    pub fn new(result: &AlignmentResult, config: &SolverConfig) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            family: result.estimate.family(),
            config: *config,
            estimate: result.estimate,
            converged: result.converged,
            reason: result.reason,
            final_objective: result.final_objective,
            trace: result.levels.clone(),
        }
    }
}

pub fn write_report_json(report: &Report, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(report).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    write_text(path, &(json + "\n"))
}

pub fn read_report_json(path: impl AsRef<Path>) -> Result<Report> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let report: Report = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    if report.schema_version != REPORT_SCHEMA_VERSION {
        return Err(parse_err(
            path,
            0,
            format!("unsupported schema_version {}", report.schema_version),
        ));
    }
    Ok(report)
}

/// One CSV row of a batch evaluation. Metric columns that do not apply to
/// the pair's family are left empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchRow {
    pub schema_version: u32,
    pub pair: String,
    pub family: Family,
    pub method: String,
    pub converged: bool,
    pub reason: String,
    pub iterations: usize,
    pub final_objective: f64,
    pub affine_l1: Option<f64>,
    pub rotation_deg: Option<f64>,
    pub translation_cm: Option<f64>,
    pub epe3d_cm: Option<f64>,
    /// Warp parameters: ξ₁..ξ₆ for affine, the twist (ω, v) for rigid.
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub p4: f64,
    pub p5: f64,
    pub p6: f64,
}

pub const BATCH_COLUMNS: [&str; 18] = [
    "schema_version",
    "pair",
    "family",
    "method",
    "converged",
    "reason",
    "iterations",
    "final_objective",
    "affine_l1",
    "rotation_deg",
    "translation_cm",
    "epe3d_cm",
    "p1",
    "p2",
    "p3",
    "p4",
    "p5",
    "p6",
];

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        kind => parse_err(path, line, format!("{kind:?}")),
    }
}

/// Writes rows in the given order. An empty batch still gets a header.
pub fn write_batch_csv(rows: &[BatchRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(BATCH_COLUMNS).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_batch_csv(path: impl AsRef<Path>) -> Result<Vec<BatchRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}
