use std::fs;
use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;

use super::{Result, ScriptedAnnotation, SimError, SimManifest, Simulation};
use crate::control::{Body, ControlClient, Role};
use crate::scheduler::TriggerMode;
use crate::sensor::{poses_of, read_detections, read_landmarks, CameraModel, FaceModel3D, StateChange};

/// What the scripted sensor and console send, in simulation time.
#[derive(Debug, Clone, PartialEq)]
pub struct LiveScript {
    pub trigger: TriggerMode,
    pub session_start: f64,
    /// Solved calibration poses as (yaw, pitch).
    pub calibration: Vec<(f64, f64)>,
    pub detections: Vec<StateChange>,
    pub annotations: Vec<ScriptedAnnotation>,
}

impl LiveScript {
    pub fn from_simulation(sim: &Simulation) -> Self {
        let p = &sim.config.profile;
        let camera = CameraModel::for_image(p.width, p.height);
        Self {
            trigger: sim.config.trigger,
            session_start: sim.session_start,
            calibration: poses_of(&sim.calibration, Some(camera), &FaceModel3D::default())
                .iter()
                .map(|p| (p.yaw, p.pitch))
                .collect(),
            detections: sim.detections.clone(),
            annotations: sim.annotations.clone(),
        }
    }

    /// Loads the streams [`Simulation::write`] produced for `session_id`.
    pub fn load(dir: impl AsRef<Path>, session_id: &str) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: SimManifest = read_json(&dir.join(format!("{session_id}.sim.json")))?;
        let p = &manifest.config.profile;
        let frames = read_landmarks(dir.join(format!("{session_id}.calibration.landmarks.jsonl")))?;
        let camera = CameraModel::for_image(p.width, p.height);
        let calibration = poses_of(&frames, Some(camera), &FaceModel3D::default())
            .iter()
            .map(|p| (p.yaw, p.pitch))
            .collect();
        let detections = read_detections(dir.join(format!("{session_id}.detections.jsonl")))?;
        let path = dir.join(format!("{session_id}.annotations.jsonl"));
        let text = fs::read_to_string(&path)?;
        let annotations = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                serde_json::from_str(l).map_err(|e| SimError::Parse {
                    path: path.clone(),
                    reason: e.to_string(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            trigger: manifest.config.trigger,
            session_start: manifest.session_start,
            calibration,
            detections,
            annotations,
        })
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| SimError::Parse {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Raw text frames each scripted peer received.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PeerTranscripts {
    pub client: Vec<String>,
    pub sensor: Vec<String>,
    pub console: Vec<String>,
}

const SLICE: Duration = Duration::from_millis(20);

// Reads until the local clock reaches `target` session seconds.
fn wait_until(c: &mut ControlClient, target: f64, rate: f64) -> Result<()> {
    loop {
        let left = target - c.now();
        if left <= 0.0 || c.is_closed() {
            return Ok(());
        }
        c.recv(Duration::from_secs_f64(left / rate).min(SLICE))?;
    }
}

fn wait_for(c: &mut ControlClient, type_name: &str, deadline: Instant) -> Result<f64> {
    while Instant::now() < deadline && !c.is_closed() {
        if let Some(m) = c.recv(SLICE)? {
            if m.body.type_name() == type_name {
                return Ok(c.now());
            }
        }
    }
    Err(SimError::Control(crate::control::ControlError::Protocol(format!(
        "no `{type_name}` before the deadline"
    ))))
}

fn read_to_close(mut c: ControlClient, deadline: Instant) -> Result<Vec<String>> {
    while !c.is_closed() && Instant::now() < deadline {
        c.recv(SLICE)?;
    }
    let transcript = c.transcript().to_vec();
    c.close()?;
    Ok(transcript)
}

/// Connects a scripted client, console and (in auto sessions) sensor to the server at
/// `addr` and replays `script` until the server closes the session.
///
/// Peers time their messages from the session start they observe, at `clock_rate`
/// session seconds per wall second.
pub fn run_peers(addr: &str, script: &LiveScript, clock_rate: f64, timeout: Duration) -> Result<PeerTranscripts> {
    let deadline = Instant::now() + timeout;
    let auto = script.trigger == TriggerMode::Auto;
    let client = ControlClient::connect(addr, Role::Client, false, clock_rate)?;
    let console = ControlClient::connect(addr, Role::Console, false, clock_rate)?;
    let sensor = if auto {
        Some(ControlClient::connect(addr, Role::Sensor, false, clock_rate)?)
    } else {
        None
    };

    let client_thread = thread::spawn(move || read_to_close(client, deadline));

    let cal_script = script.clone();
    let sensor_thread = sensor.map(|mut s| {
        thread::spawn(move || -> Result<Vec<String>> {
            for &(yaw, pitch) in &cal_script.calibration {
                s.send(Body::CalibrationPoint { yaw, pitch })?;
            }
            s.send(Body::CalibrationDone { profile: None })?;
            let origin = wait_for(&mut s, "calibration_done", deadline)?;
            for c in &cal_script.detections {
                let target = origin + (c.t - cal_script.session_start);
                wait_until(&mut s, target, clock_rate)?;
                if s.is_closed() {
                    break;
                }
                s.send(Body::AttentionState { state: c.state })?;
            }
            read_to_close(s, deadline)
        })
    });

    let console_script = script.clone();
    let console_thread = thread::spawn(move || -> Result<Vec<String>> {
        let mut c = console;
        let origin = if auto {
            wait_for(&mut c, "calibration_done", deadline)?
        } else {
            c.now()
        };
        for a in &console_script.annotations {
            let target = origin + (a.t - console_script.session_start);
            wait_until(&mut c, target, clock_rate)?;
            if c.is_closed() {
                break;
            }
            c.send(Body::Annotation { mark: a.mark, episode: None })?;
        }
        read_to_close(c, deadline)
    });

    let join = |h: thread::JoinHandle<Result<Vec<String>>>| {
        h.join().unwrap_or_else(|_| {
            Err(SimError::Control(crate::control::ControlError::Protocol(
                "peer thread panicked".into(),
            )))
        })
    };
    let console = join(console_thread)?;
    let sensor = match sensor_thread {
        Some(h) => join(h)?,
        None => Vec::new(),
    };
    let client = join(client_thread)?;
    Ok(PeerTranscripts {
        client,
        sensor,
        console,
    })
}
