//! Head-pose attention sensing.
//!
//! Facial landmarks from an external detector are turned into a head pose with a
//! perspective-n-point solve, judged against a per-user calibrated angular range and
//! debounced into attentive/distracted state changes.
//!
//! Frames: the camera frame has x right, y down, z forward. The head model frame has its
//! origin at the nose tip, x toward image-right in a frontal view, y up and z out of the
//! face toward the camera.

mod calibration;
mod debounce;
mod io;
mod pipeline;
mod pose;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use calibration::{calibrate, judge, CalibrationProfile};
pub use debounce::{debounce, AttentionState, Debouncer, StateChange};
pub use io::{read_detections, read_landmarks, write_detections, write_landmarks};
pub use pipeline::{poses_of, FrameVerdict, SensorPipeline};
pub use pose::{project, solve_head_pose, HeadPose};

/// Landmark order shared by frames and the 3D model. "left"/"right" are image sides in a
/// frontal view.
pub const LANDMARK_NAMES: [&str; 6] = [
    "nose_tip",
    "chin",
    "left_eye_outer",
    "right_eye_outer",
    "left_mouth_corner",
    "right_mouth_corner",
];

pub const DEFAULT_FPS: f64 = 15.0;
pub const DEFAULT_DEBOUNCE_FRAMES: usize = 3;

#[derive(Debug, Error)]
pub enum SensorError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no pose solution: {0}")]
    NoSolution(String),
    #[error("point {index} is behind the camera (z = {z})")]
    BehindCamera { index: usize, z: f64 },
    #[error("empty calibration sequence")]
    EmptyCalibration,
    #[error("degenerate calibration: {0}")]
    DegenerateCalibration(String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SensorError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionLabel {
    Attentive,
    Distracted,
}

impl AttentionLabel {
    pub fn flipped(self) -> Self {
        match self {
            AttentionLabel::Attentive => AttentionLabel::Distracted,
            AttentionLabel::Distracted => AttentionLabel::Attentive,
        }
    }
}

impl fmt::Display for AttentionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionLabel::Attentive => "attentive",
            AttentionLabel::Distracted => "distracted",
        })
    }
}

/// One detector output: pixel landmarks in [`LANDMARK_NAMES`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkFrame {
    #[serde(rename = "t")]
    pub timestamp: f64,
    #[serde(rename = "w")]
    pub width: u32,
    #[serde(rename = "h")]
    pub height: u32,
    /// Empty when the detector found no face.
    pub points: Vec<[f64; 2]>,
}

impl LandmarkFrame {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(SensorError::InvalidInput(format!(
                "image size {}x{} is empty",
                self.width, self.height
            )));
        }
        if !self.points.is_empty() && self.points.len() != LANDMARK_NAMES.len() {
            return Err(SensorError::InvalidInput(format!(
                "frame has {} landmarks, expected {}",
                self.points.len(),
                LANDMARK_NAMES.len()
            )));
        }
        let (w, h) = (self.width as f64, self.height as f64);
        for (i, [x, y]) in self.points.iter().enumerate() {
            if !(0.0..=w).contains(x) || !(0.0..=h).contains(y) {
                return Err(SensorError::InvalidInput(format!(
                    "landmark {} ({x}, {y}) outside the {}x{} image",
                    LANDMARK_NAMES[i], self.width, self.height
                )));
            }
        }
        Ok(())
    }
}

/// Pinhole intrinsics without distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub focal_length: f64,
    pub principal_point: [f64; 2],
}

impl CameraModel {
    pub fn new(focal_length: f64, principal_point: [f64; 2]) -> Result<Self> {
        if !(focal_length.is_finite() && focal_length > 0.0) {
            return Err(SensorError::InvalidInput(format!(
                "focal length must be positive, got {focal_length}"
            )));
        }
        Ok(Self {
            focal_length,
            principal_point,
        })
    }

    /// Focal length equal to the image width, principal point at the image centre.
    pub fn for_image(width: u32, height: u32) -> Self {
        Self {
            focal_length: width as f64,
            principal_point: [width as f64 / 2.0, height as f64 / 2.0],
        }
    }
}

/// Rigid 3D landmark positions in millimetres, in [`LANDMARK_NAMES`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceModel3D {
    points: Vec<[f64; 3]>,
}

impl FaceModel3D {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.len() < 4 {
            return Err(SensorError::InvalidInput(format!(
                "face model needs at least 4 points, got {}",
                points.len()
            )));
        }
        if !spans_3d(&points) {
            return Err(SensorError::InvalidInput(
                "face model points are coplanar".into(),
            ));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

impl Default for FaceModel3D {
    /// Generic six-point face.
    fn default() -> Self {
        Self {
            points: vec![
                [0.0, 0.0, 0.0],
                [0.0, -63.0, -12.0],
                [-43.0, 32.0, -26.0],
                [43.0, 32.0, -26.0],
                [-28.0, -29.0, -24.0],
                [28.0, -29.0, -24.0],
            ],
        }
    }
}

fn spans_3d(points: &[[f64; 3]]) -> bool {
    let n = points.len() as f64;
    let mut c = [0.0; 3];
    for p in points {
        for k in 0..3 {
            c[k] += p[k] / n;
        }
    }
    let mut cov = nalgebra::Matrix3::<f64>::zeros();
    for p in points {
        let d = nalgebra::Vector3::new(p[0] - c[0], p[1] - c[1], p[2] - c[2]);
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen().eigenvalues;
    let max = eig.max();
    max > 0.0 && eig.min() > 1e-9 * max
}
