use super::{
    judge, solve_head_pose, AttentionLabel, CalibrationProfile, CameraModel, Debouncer,
    FaceModel3D, HeadPose, LandmarkFrame, Result, StateChange,
};

/// Per-frame output of [`SensorPipeline`].
#[derive(Debug, Clone, PartialEq)]
pub struct FrameVerdict {
    pub t: f64,
    /// `None` when no face was found or the solve failed.
    pub pose: Option<HeadPose>,
    pub raw: AttentionLabel,
    pub change: Option<StateChange>,
}

/// Landmarks → pose → judgment → debounced state changes.
///
/// Frames without a usable face count as distracted.
#[derive(Debug, Clone)]
pub struct SensorPipeline {
    camera: Option<CameraModel>,
    model: FaceModel3D,
    profile: CalibrationProfile,
    debouncer: Debouncer,
}

impl SensorPipeline {
    pub fn new(profile: CalibrationProfile, debounce_frames: usize) -> Result<Self> {
        profile.validate()?;
        Ok(Self {
            camera: None,
            model: FaceModel3D::default(),
            profile,
            debouncer: Debouncer::new(debounce_frames, AttentionLabel::Attentive),
        })
    }

    /// Fixed intrinsics instead of the per-frame image-size default.
    pub fn with_camera(mut self, camera: CameraModel) -> Self {
        self.camera = Some(camera);
        self
    }

    pub fn with_model(mut self, model: FaceModel3D) -> Self {
        self.model = model;
        self
    }

    pub fn profile(&self) -> &CalibrationProfile {
        &self.profile
    }

    pub fn process(&mut self, frame: &LandmarkFrame) -> FrameVerdict {
        let camera = self
            .camera
            .unwrap_or_else(|| CameraModel::for_image(frame.width, frame.height));
        let pose = if frame.points.is_empty() {
            None
        } else {
            solve_head_pose(frame, &camera, &self.model).ok()
        };
        let raw = pose
            .as_ref()
            .map(|p| judge(p, &self.profile))
            .unwrap_or(AttentionLabel::Distracted);
        let change = self.debouncer.push(frame.timestamp, raw);
        FrameVerdict {
            t: frame.timestamp,
            pose,
            raw,
            change,
        }
    }
}

/// Solves every frame with a face, for calibration sweeps.
pub fn poses_of(frames: &[LandmarkFrame], camera: Option<CameraModel>, model: &FaceModel3D) -> Vec<HeadPose> {
    frames
        .iter()
        .filter(|f| !f.points.is_empty())
        .filter_map(|f| {
            let cam = camera.unwrap_or_else(|| CameraModel::for_image(f.width, f.height));
            solve_head_pose(f, &cam, model).ok()
        })
        .collect()
}
