//! Pose samples and the three ways to produce them: the synthetic kinematic
//! generator, the FPHA skeleton-file loader, and test-time 2D noise
//! injection. Also owns the geometry shared by all of them: pinhole
//! projection with normalization and wrist-relative conversion.

pub mod dataset;
pub mod fpha;
pub mod synthetic;

use crate::skeleton::JOINT_COUNT;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("joint {joint} has non-positive depth {z} and cannot be projected")]
    BehindCamera { joint: usize, z: f64 },
    #[error("invalid sample: {0}")]
    BadSample(String),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("{file}:{line}: {message}")]
    Malformed {
        file: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("{0}: not a dataset file (bad magic)")]
    BadMagic(PathBuf),
    #[error("{0}: unsupported dataset version {1}")]
    BadVersion(PathBuf, u32),
    #[error("synthetic generation failed after {0} retries (hand behind camera)")]
    RetriesExhausted(usize),
}

/// Pinhole camera with principal point and image size in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: f64, height: f64) -> Result<Self, DataError> {
        if fx <= 0.0 || fy <= 0.0 || width <= 0.0 || height <= 0.0 {
            return Err(DataError::BadConfig(format!(
                "intrinsics must be positive: fx={fx} fy={fy} width={width} height={height}"
            )));
        }
        Ok(CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Default synthetic camera: an egocentric-style depth sensor, 640x480
    /// at 475 px focal length, principal point at the image center.
    pub fn default_synthetic() -> Self {
        CameraIntrinsics {
            fx: 475.0,
            fy: 475.0,
            cx: 320.0,
            cy: 240.0,
            width: 640.0,
            height: 480.0,
        }
    }
}

/// Per-sequence provenance for loaded samples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub subject: String,
    pub sequence: String,
    pub frame: u64,
}

/// One training or evaluation example: normalized 2D keypoints paired with
/// the wrist-relative 3D target in millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSample {
    /// `J x 2`, normalized to roughly `[-1, 1]`.
    pub x2d: Vec<f64>,
    /// `J x 3`, wrist-relative mm; row 0 is exactly zero.
    pub y3d: Vec<f64>,
    pub meta: Option<SampleMeta>,
}

impl PoseSample {
    pub fn new(x2d: Vec<f64>, y3d: Vec<f64>, meta: Option<SampleMeta>) -> Result<Self, DataError> {
        if x2d.len() != JOINT_COUNT * 2 || y3d.len() != JOINT_COUNT * 3 {
            return Err(DataError::BadSample(format!(
                "expected {}x2 and {}x3 values, got {} and {}",
                JOINT_COUNT,
                JOINT_COUNT,
                x2d.len(),
                y3d.len()
            )));
        }
        if y3d[0] != 0.0 || y3d[1] != 0.0 || y3d[2] != 0.0 {
            return Err(DataError::BadSample(
                "wrist row of the 3D target must be exactly zero".into(),
            ));
        }
        if x2d.iter().any(|v| !v.is_finite()) {
            return Err(DataError::BadSample("non-finite 2D coordinate".into()));
        }
        Ok(PoseSample { x2d, y3d, meta })
    }
}

/// Projects camera-frame points (mm) to normalized image coordinates:
/// pinhole `u = fx X/Z + cx`, then `u' = 2u/width - 1` (same for v).
/// Every point must be strictly in front of the camera.
pub fn project_and_normalize(world: &[f64], cam: &CameraIntrinsics) -> Result<Vec<f64>, DataError> {
    let joints = world.len() / 3;
    let mut out = Vec::with_capacity(joints * 2);
    for j in 0..joints {
        let (x, y, z) = (world[j * 3], world[j * 3 + 1], world[j * 3 + 2]);
        if z <= 0.0 {
            return Err(DataError::BehindCamera { joint: j, z });
        }
        let u = cam.fx * x / z + cam.cx;
        let v = cam.fy * y / z + cam.cy;
        out.push(2.0 * u / cam.width - 1.0);
        out.push(2.0 * v / cam.height - 1.0);
    }
    Ok(out)
}

/// Subtracts the wrist (row 0); inter-joint difference vectors are
/// untouched and the wrist row becomes exactly zero.
pub fn to_wrist_relative(world: &[f64]) -> Vec<f64> {
    if world.is_empty() {
        return Vec::new();
    }
    let (wx, wy, wz) = (world[0], world[1], world[2]);
    world
        .chunks(3)
        .flat_map(|p| [p[0] - wx, p[1] - wy, p[2] - wz])
        .collect()
}

/// Adds zero-mean Gaussian pixel noise to the 2D inputs only, in pixel
/// units rescaled into the normalized frame (`2 sigma / width` on x,
/// `2 sigma / height` on y). Targets are untouched; `sigma_px = 0` is the
/// identity and consumes no randomness.
pub fn add_2d_noise(
    samples: &[PoseSample],
    sigma_px: f64,
    cam: &CameraIntrinsics,
    rng: &mut ChaCha8Rng,
) -> Vec<PoseSample> {
    if sigma_px == 0.0 {
        return samples.to_vec();
    }
    let (sx, sy) = (2.0 * sigma_px / cam.width, 2.0 * sigma_px / cam.height);
    samples
        .iter()
        .map(|s| {
            let mut x2d = s.x2d.clone();
            for p in x2d.chunks_mut(2) {
                p[0] += crate::rng::normal(rng, sx);
                p[1] += crate::rng::normal(rng, sy);
            }
            PoseSample {
                x2d,
                y3d: s.y3d.clone(),
                meta: s.meta.clone(),
            }
        })
        .collect()
}
