//! Deterministic synthetic sessions for desk-scale end-to-end runs.
//!
//! A behavioural renewal process (exponential attentive and distracted spells) drives a
//! head-pose trajectory, which is projected to noisy landmarks, run through the sensor
//! pipeline and replayed into an in-process control session. Optional short glances away
//! while annotated attentive inject false-positive detections at a chosen rate.

mod live;

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{Body, ControlError, ControlSession, Message, Role, SessionConfig, SessionDescriptor};
use crate::scheduler::{AnnotationMark, Condition, InterventionMode, SessionLog, TriggerMode};
use crate::sensor::{
    calibrate, poses_of, project, write_detections, write_landmarks, CalibrationProfile,
    CameraModel, FaceModel3D, HeadPose, LandmarkFrame, SensorError, SensorPipeline, StateChange,
};

pub use live::{run_peers, LiveScript, PeerTranscripts};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid behaviour profile: {0}")]
    InvalidProfile(String),
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Scheduler(#[from] crate::scheduler::SchedulerError),
    #[error("parse error in {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;

/// Participant and rig parameters. Angles in degrees, times in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BehaviorProfile {
    pub mean_attentive: f64,
    pub mean_distracted: f64,
    /// Multiplier on distraction length while an intervention is acting.
    pub treatment_factor: f64,
    /// Shortest attentive or distracted spell.
    pub min_spell: f64,
    /// Target detection precision, reached by adding glances; `None` adds none.
    pub precision_target: Option<f64>,
    pub glance_duration: f64,
    pub attentive_yaw: f64,
    pub attentive_pitch: f64,
    pub distracted_yaw: f64,
    pub calibration_yaw: f64,
    pub calibration_pitch: f64,
    pub calibration_duration: f64,
    pub landmark_noise_px: f64,
    pub fps: f64,
    pub debounce_frames: usize,
    pub width: u32,
    pub height: u32,
    pub distance_mm: f64,
}

impl Default for BehaviorProfile {
    fn default() -> Self {
        Self {
            mean_attentive: 40.0,
            mean_distracted: 20.0,
            treatment_factor: 0.55,
            min_spell: 2.0,
            precision_target: None,
            glance_duration: 2.0,
            attentive_yaw: 12.0,
            attentive_pitch: 8.0,
            distracted_yaw: 50.0,
            calibration_yaw: 25.0,
            calibration_pitch: 15.0,
            calibration_duration: 10.0,
            landmark_noise_px: 0.5,
            fps: crate::sensor::DEFAULT_FPS,
            debounce_frames: crate::sensor::DEFAULT_DEBOUNCE_FRAMES,
            width: 1280,
            height: 720,
            distance_mm: 600.0,
        }
    }
}

impl BehaviorProfile {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mean_attentive", self.mean_attentive),
            ("mean_distracted", self.mean_distracted),
            ("treatment_factor", self.treatment_factor),
            ("min_spell", self.min_spell),
            ("glance_duration", self.glance_duration),
            ("calibration_duration", self.calibration_duration),
            ("fps", self.fps),
            ("distance_mm", self.distance_mm),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::InvalidProfile(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(p) = self.precision_target {
            if !(p > 0.0 && p <= 1.0) {
                return Err(SimError::InvalidProfile(format!("precision target {p} not in (0, 1]")));
            }
        }
        if !(self.attentive_yaw < self.calibration_yaw && self.calibration_yaw < self.distracted_yaw)
            || self.attentive_pitch >= self.calibration_pitch
        {
            return Err(SimError::InvalidProfile(
                "need attentive < calibration < distracted angles".into(),
            ));
        }
        if self.landmark_noise_px < 0.0 || self.width == 0 || self.height == 0 || self.debounce_frames == 0 {
            return Err(SimError::InvalidProfile("noise, image size or debounce out of range".into()));
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| SimError::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub descriptor: SessionDescriptor,
    pub trigger: TriggerMode,
    pub profile: BehaviorProfile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScriptedAnnotation {
    pub t: f64,
    pub mark: AnnotationMark,
}

/// Spell of looking away; `side` is the sign of the yaw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spell {
    pub start: f64,
    pub end: f64,
    pub side: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub config: SimConfig,
    /// Time the session starts, after the calibration sweep.
    pub session_start: f64,
    pub calibration: Vec<LandmarkFrame>,
    pub calibration_profile: CalibrationProfile,
    pub landmarks: Vec<LandmarkFrame>,
    /// Annotated distractions.
    pub distractions: Vec<Spell>,
    /// Unannotated glances away.
    pub glances: Vec<Spell>,
    pub annotations: Vec<ScriptedAnnotation>,
    pub detections: Vec<StateChange>,
    /// Log of the session replayed in-process.
    pub events: SessionLog,
}

/// Metadata written next to the generated streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimManifest {
    pub config: SimConfig,
    pub session_start: f64,
    pub calibration_profile: CalibrationProfile,
    pub distractions: Vec<Spell>,
    pub glances: Vec<Spell>,
}

impl Simulation {
    pub fn session_id(&self) -> &str {
        &self.config.descriptor.session_id
    }

    pub fn manifest(&self) -> SimManifest {
        SimManifest {
            config: self.config.clone(),
            session_start: self.session_start,
            calibration_profile: self.calibration_profile,
            distractions: self.distractions.clone(),
            glances: self.glances.clone(),
        }
    }

    /// Writes every stream into `dir`; returns the written paths.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let id = self.session_id();
        let path = |name: String| dir.join(name);
        let manifest = path(format!("{id}.sim.json"));
        let calibration = path(format!("{id}.calibration.landmarks.jsonl"));
        let landmarks = path(format!("{id}.landmarks.jsonl"));
        let annotations = path(format!("{id}.annotations.jsonl"));
        let detections = path(format!("{id}.detections.jsonl"));
        let profile = path(format!("{id}.profile.json"));
        let events = path(format!("session-{id}.events.jsonl"));

        let mut text = serde_json::to_string_pretty(&self.manifest()).map_err(std::io::Error::from)?;
        text.push('\n');
        fs::write(&manifest, text)?;
        write_landmarks(&calibration, &self.calibration)?;
        write_landmarks(&landmarks, &self.landmarks)?;
        let mut ann = String::new();
        for a in &self.annotations {
            ann.push_str(&serde_json::to_string(a).map_err(std::io::Error::from)?);
            ann.push('\n');
        }
        fs::write(&annotations, ann)?;
        write_detections(&detections, &self.detections)?;
        self.calibration_profile.write(&profile)?;
        self.events.write(&events)?;
        Ok(vec![manifest, calibration, landmarks, annotations, detections, profile, events])
    }
}

fn draw_spell(rng: &mut ChaCha8Rng, mean: f64, min: f64) -> f64 {
    let e: f64 = Exp1.sample(rng);
    min + e * (mean - min).max(0.0)
}

fn calibration_angles(p: &BehaviorProfile, t: f64) -> (f64, f64) {
    let tau = std::f64::consts::TAU;
    (
        p.calibration_yaw * (tau * t / 4.0).sin(),
        p.calibration_pitch * (tau * t / 2.5).sin(),
    )
}

struct Rig {
    camera: CameraModel,
    model: FaceModel3D,
    noise: Normal<f64>,
    rng: ChaCha8Rng,
    width: u32,
    height: u32,
}

impl Rig {
    fn frame(&mut self, t: f64, pose: &HeadPose) -> Result<LandmarkFrame> {
        let mut points = project(&self.model, pose, &self.camera)?;
        let (w, h) = (self.width as f64, self.height as f64);
        for p in &mut points {
            p[0] = (p[0] + self.noise.sample(&mut self.rng)).clamp(0.0, w);
            p[1] = (p[1] + self.noise.sample(&mut self.rng)).clamp(0.0, h);
        }
        Ok(LandmarkFrame {
            timestamp: t,
            width: self.width,
            height: self.height,
            points,
        })
    }
}

// Feeds messages to the in-process session as the peers would.
struct Driver {
    session: ControlSession,
    seq: [u64; 3],
}

const CLIENT: u64 = 1;
const SENSOR: u64 = 2;
const CONSOLE: u64 = 3;

impl Driver {
    fn send(&mut self, t: f64, conn: u64, body: Body) {
        let slot = &mut self.seq[(conn - 1) as usize];
        *slot += 1;
        let bytes = Message::new(t, *slot, body).encode();
        self.session.handle(t, conn, &bytes);
    }
}

pub fn simulate(config: &SimConfig) -> Result<Simulation> {
    let p = &config.profile;
    p.validate()?;
    config.descriptor.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed);
    noise_rng.set_stream(1);
    let noise = Normal::new(0.0, p.landmark_noise_px.max(1e-12))
        .map_err(|e| SimError::InvalidProfile(e.to_string()))?;
    let mut rig = Rig {
        camera: CameraModel::for_image(p.width, p.height),
        model: FaceModel3D::default(),
        noise,
        rng: noise_rng,
        width: p.width,
        height: p.height,
    };
    let dt = 1.0 / p.fps;
    let start = p.calibration_duration;

    let mut calibration = Vec::new();
    let mut i = 0;
    while (i as f64) * dt < p.calibration_duration {
        let t = i as f64 * dt;
        let (yaw, pitch) = calibration_angles(p, t);
        let pose = HeadPose::new(yaw, pitch, 0.0, [0.0, 0.0, p.distance_mm]);
        calibration.push(rig.frame(t, &pose)?);
        i += 1;
    }
    let cal_poses = poses_of(&calibration, Some(rig.camera), &rig.model);
    let calibration_profile = calibrate(&cal_poses, start)?;

    let session_config = SessionConfig::new(config.descriptor.clone(), config.trigger, config.seed);
    let mut driver = Driver {
        session: ControlSession::new(session_config)?,
        seq: [0; 3],
    };
    let auto = config.trigger == TriggerMode::Auto;
    driver.send(0.0, CLIENT, Body::Hello { role: Role::Client, calibrated: false });
    if auto {
        driver.send(0.0, CONSOLE, Body::Hello { role: Role::Console, calibrated: false });
        driver.send(0.0, SENSOR, Body::Hello { role: Role::Sensor, calibrated: false });
        driver.send(0.0, CONSOLE, Body::CalibrationStart {});
        for (frame, pose) in calibration.iter().zip(&cal_poses) {
            driver.send(frame.timestamp, SENSOR, Body::CalibrationPoint { yaw: pose.yaw, pitch: pose.pitch });
        }
        driver.send(start, SENSOR, Body::CalibrationDone { profile: None });
    } else {
        driver.send(start, CONSOLE, Body::Hello { role: Role::Console, calibrated: false });
    }
    debug_assert!(driver.session.is_started());

    // Distraction spells per part. In manual sessions each annotation goes to the session
    // first so the spell length can depend on the concealed condition.
    let margin = 1.0;
    let mut distractions = Vec::new();
    let mut annotations = Vec::new();
    let mut part_start = start;
    for part in &config.descriptor.parts {
        let part_end = part_start + part.duration;
        let mut t = part_start;
        loop {
            let begin = t + draw_spell(&mut rng, p.mean_attentive, p.min_spell);
            let base = draw_spell(&mut rng, p.mean_distracted, p.min_spell);
            let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
            if begin + base > part_end - margin {
                break;
            }
            let treated = if auto {
                part.mode != InterventionMode::Control
            } else {
                driver.send(begin, CONSOLE, Body::Annotation { mark: AnnotationMark::DistractionStart, episode: None });
                part.mode != InterventionMode::Control
                    && driver
                        .session
                        .scheduler()
                        .active_episode()
                        .is_some_and(|e| e.condition == Condition::Treatment)
            };
            let len = if treated {
                (base * p.treatment_factor).max(p.min_spell)
            } else {
                base
            };
            let end = begin + len;
            if !auto {
                driver.send(end, CONSOLE, Body::Annotation { mark: AnnotationMark::Refocus, episode: None });
            }
            distractions.push(Spell { start: begin, end, side });
            annotations.push(ScriptedAnnotation { t: begin, mark: AnnotationMark::DistractionStart });
            annotations.push(ScriptedAnnotation { t: end, mark: AnnotationMark::Refocus });
            t = end;
        }
        part_start = part_end;
    }
    let session_end = part_start;

    let glances = match (auto, p.precision_target) {
        (true, Some(target)) => place_glances(&mut rng, p, target, &distractions, &config.descriptor, start),
        _ => Vec::new(),
    };

    let mut landmarks = Vec::new();
    let mut spells: Vec<Spell> = distractions.iter().chain(&glances).copied().collect();
    spells.sort_by(|a, b| a.start.total_cmp(&b.start));
    let mut cursor = 0;
    let tau = std::f64::consts::TAU;
    let mut k = 0u64;
    loop {
        let t = start + k as f64 * dt;
        if t >= session_end {
            break;
        }
        while cursor < spells.len() && spells[cursor].end <= t {
            cursor += 1;
        }
        let away = spells.get(cursor).filter(|s| s.start <= t);
        let (yaw, pitch) = match away {
            Some(s) => (
                s.side * (p.distracted_yaw + 4.0 * (tau * t / 3.0).sin()),
                -6.0 + 3.0 * (tau * t / 5.0).sin(),
            ),
            None => (
                0.9 * p.attentive_yaw * (tau * t / 23.0).sin(),
                0.9 * p.attentive_pitch * (tau * t / 31.0 + 1.0).sin(),
            ),
        };
        let pose = HeadPose::new(
            yaw,
            pitch,
            3.0 * (t / 7.0).sin(),
            [10.0 * (t / 13.0).sin(), -5.0, p.distance_mm + 20.0 * (t / 11.0).sin()],
        );
        landmarks.push(rig.frame(t, &pose)?);
        k += 1;
    }

    let mut pipeline = SensorPipeline::new(calibration_profile, p.debounce_frames)?.with_camera(rig.camera);
    let detections: Vec<StateChange> = landmarks.iter().filter_map(|f| pipeline.process(f).change).collect();

    if auto {
        let mut inbound: Vec<(f64, u64, Body)> = detections
            .iter()
            .map(|c| (c.t, SENSOR, Body::AttentionState { state: c.state }))
            .chain(
                annotations
                    .iter()
                    .map(|a| (a.t, CONSOLE, Body::Annotation { mark: a.mark, episode: None })),
            )
            .collect();
        inbound.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (t, conn, body) in inbound {
            driver.send(t, conn, body);
        }
    }
    driver.session.tick(session_end + 1.0);

    Ok(Simulation {
        config: config.clone(),
        session_start: start,
        calibration,
        calibration_profile,
        landmarks,
        distractions,
        glances,
        annotations,
        detections,
        events: driver.session.log().clone(),
    })
}

// Glances total (1 - target) / target of the distracted time, kept clear of distractions
// and part boundaries.
fn place_glances(
    rng: &mut ChaCha8Rng,
    p: &BehaviorProfile,
    target: f64,
    distractions: &[Spell],
    descriptor: &SessionDescriptor,
    start: f64,
) -> Vec<Spell> {
    let distracted: f64 = distractions.iter().map(|s| s.end - s.start).sum();
    let n = (distracted * (1.0 - target) / target / p.glance_duration).round() as usize;
    let mut bounds = vec![start];
    for part in &descriptor.parts {
        bounds.push(bounds[bounds.len() - 1] + part.duration);
    }
    let end = bounds[bounds.len() - 1];
    let clear = 1.5;
    let mut glances: Vec<Spell> = Vec::with_capacity(n);
    let mut tries = 0;
    while glances.len() < n && tries < 1000 * (n + 1) {
        tries += 1;
        let s = rng.random_range(start + clear..end - clear - p.glance_duration);
        let e = s + p.glance_duration;
        let hits = |a: f64, b: f64| s < b + clear && a < e + clear;
        if distractions.iter().any(|d| hits(d.start, d.end))
            || glances.iter().any(|g| hits(g.start, g.end))
            || bounds.iter().any(|&b| hits(b, b))
        {
            continue;
        }
        let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
        glances.push(Spell { start: s, end: e, side });
    }
    glances.sort_by(|a, b| a.start.total_cmp(&b.start));
    glances
}
