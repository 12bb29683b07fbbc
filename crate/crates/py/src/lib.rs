//! Python bindings: audio engine, scheduler, sensor, control session, statistics,
//! report generation and the session simulator.

use attractor_core::analytics::{self, ConfusionMatrix, SessionInput};
use attractor_core::audio::{self, AudioChunk, Effect, PerturbationPattern};
use attractor_core::control::{self, SessionConfig, SessionDescriptor};
use attractor_core::scheduler::{self, InterventionMode, SchedulerConfig, SessionLog, TriggerMode};
use attractor_core::sensor::{
    self, CalibrationProfile, CameraModel, FaceModel3D, HeadPose, LandmarkFrame,
};
use attractor_core::sim::{self, BehaviorProfile, SimConfig};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_effect(name: &str) -> PyResult<Effect> {
    match name {
        "none" => Ok(Effect::None),
        "alert" => Ok(Effect::Alert),
        other => other.parse().map(Effect::Mindless).map_err(value_err),
    }
}

fn effect_name(effect: Effect) -> &'static str {
    match effect {
        Effect::None => "none",
        Effect::Alert => "alert",
        Effect::Mindless(p) => p.name(),
    }
}

fn parse_mode(name: &str) -> PyResult<InterventionMode> {
    name.parse().map_err(value_err)
}

fn parse_trigger(name: &str) -> PyResult<TriggerMode> {
    match name {
        "auto" => Ok(TriggerMode::Auto),
        "manual" => Ok(TriggerMode::Manual),
        other => Err(PyValueError::new_err(format!("unknown trigger mode `{other}`"))),
    }
}

/// Streaming perturbation engine. Input is cut into fixed chunks; a short tail is
/// processed as a zero-padded partial chunk.
#[pyclass(unsendable)]
struct AudioEngine {
    inner: audio::AudioEngine,
    rate: u32,
    next_index: u64,
}

#[pymethods]
impl AudioEngine {
    #[new]
    #[pyo3(signature = (sample_rate = 16000))]
    fn new(sample_rate: u32) -> PyResult<Self> {
        Ok(Self {
            inner: audio::AudioEngine::new(sample_rate).map_err(value_err)?,
            rate: sample_rate,
            next_index: 0,
        })
    }

    #[getter]
    fn chunk_len(&self) -> usize {
        audio::chunk_len(self.rate)
    }

    /// Processes `samples` chunk by chunk with one effect: "none", "alert" or a pattern
    /// name such as "volume-halve" or "pitch-up".
    #[pyo3(signature = (samples, effect = "none"))]
    fn process(&mut self, samples: Vec<f32>, effect: &str) -> PyResult<Vec<f32>> {
        let effect = parse_effect(effect)?;
        let n = self.chunk_len();
        let mut out = Vec::with_capacity(samples.len());
        for piece in samples.chunks(n) {
            let chunk = if piece.len() == n {
                AudioChunk::new(piece.to_vec(), self.rate, self.next_index)
            } else {
                AudioChunk::partial(piece, self.rate, self.next_index)
            }
            .map_err(value_err)?;
            let processed = self.inner.process_chunk(&chunk, effect).map_err(value_err)?;
            out.extend_from_slice(&processed.samples()[..piece.len()]);
            self.next_index += n as u64;
        }
        Ok(out)
    }

    fn reset(&mut self) {
        self.inner.reset();
        self.next_index = 0;
    }
}

/// Effect at `now` for an episode activated at `activated_at`.
#[pyfunction]
#[pyo3(signature = (activated_at, now, pattern, period = 3.0))]
fn cycle_effect(activated_at: f64, now: f64, pattern: &str, period: f64) -> PyResult<&'static str> {
    let pattern: PerturbationPattern = pattern.parse().map_err(value_err)?;
    Ok(effect_name(scheduler::cycle_effect(
        activated_at,
        now,
        period,
        Effect::Mindless(pattern),
    )))
}

#[pyclass(unsendable)]
struct Scheduler {
    inner: scheduler::Scheduler,
}

#[pymethods]
impl Scheduler {
    #[new]
    #[pyo3(signature = (
        mode = "mindless",
        seed = 0,
        toggle_period = 3.0,
        treatment_probability = 0.5,
        randomize_condition = true,
        pattern_per_cycle = false
    ))]
    fn new(
        mode: &str,
        seed: u64,
        toggle_period: f64,
        treatment_probability: f64,
        randomize_condition: bool,
        pattern_per_cycle: bool,
    ) -> PyResult<Self> {
        let config = SchedulerConfig {
            toggle_period,
            treatment_probability,
            mode: parse_mode(mode)?,
            rng_seed: seed,
            randomize_condition,
            pattern_per_cycle,
        };
        Ok(Self {
            inner: scheduler::Scheduler::new(config).map_err(value_err)?,
        })
    }

    #[getter]
    fn mode(&self) -> &'static str {
        self.inner.mode().name()
    }

    fn set_mode(&mut self, mode: &str) -> PyResult<()> {
        self.inner.set_mode(parse_mode(mode)?).map_err(value_err)
    }

    #[getter]
    fn is_active(&self) -> bool {
        self.inner.is_active()
    }

    fn activate<'py>(&mut self, py: Python<'py>, now: f64) -> PyResult<Bound<'py, PyAny>> {
        let episode = self.inner.activate(now).map_err(value_err)?;
        to_py(py, &episode)
    }

    fn deactivate<'py>(&mut self, py: Python<'py>, now: f64) -> PyResult<Bound<'py, PyAny>> {
        let episode = self.inner.deactivate(now).map_err(value_err)?;
        to_py(py, &episode)
    }

    fn tick(&mut self, now: f64) {
        self.inner.tick(now);
    }

    fn current_effect(&self, now: f64) -> &'static str {
        effect_name(self.inner.current_effect(now))
    }

    fn episodes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.episodes())
    }

    /// Log records produced since the last call.
    fn drain_events<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.drain_events())
    }
}

fn frame(t: f64, points: Vec<(f64, f64)>, width: u32, height: u32) -> LandmarkFrame {
    LandmarkFrame {
        timestamp: t,
        width,
        height,
        points: points.into_iter().map(|(x, y)| [x, y]).collect(),
    }
}

/// Pixel landmarks of the default face model at a pose (degrees, millimetres).
#[pyfunction]
#[pyo3(signature = (yaw, pitch, roll = 0.0, translation = (0.0, 0.0, 600.0), width = 1280, height = 720))]
fn project(
    yaw: f64,
    pitch: f64,
    roll: f64,
    translation: (f64, f64, f64),
    width: u32,
    height: u32,
) -> PyResult<Vec<(f64, f64)>> {
    let pose = HeadPose::new(yaw, pitch, roll, [translation.0, translation.1, translation.2]);
    let points = sensor::project(&FaceModel3D::default(), &pose, &CameraModel::for_image(width, height))
        .map_err(value_err)?;
    Ok(points.into_iter().map(|[x, y]| (x, y)).collect())
}

#[pyfunction]
#[pyo3(signature = (points, width = 1280, height = 720))]
fn solve_head_pose<'py>(
    py: Python<'py>,
    points: Vec<(f64, f64)>,
    width: u32,
    height: u32,
) -> PyResult<Bound<'py, PyAny>> {
    let f = frame(0.0, points, width, height);
    let pose = sensor::solve_head_pose(&f, &CameraModel::for_image(width, height), &FaceModel3D::default())
        .map_err(value_err)?;
    to_py(py, &pose)
}

fn profile_from(py_profile: &Bound<'_, PyAny>) -> PyResult<CalibrationProfile> {
    let text: String = py_profile
        .py()
        .import("json")?
        .call_method1("dumps", (py_profile,))?
        .extract()?;
    let profile: CalibrationProfile = serde_json::from_str(&text).map_err(value_err)?;
    profile.validate().map_err(value_err)?;
    Ok(profile)
}

/// Calibration profile from (yaw, pitch) samples in degrees.
#[pyfunction]
#[pyo3(signature = (poses, captured_at = 0.0))]
fn calibrate<'py>(py: Python<'py>, poses: Vec<(f64, f64)>, captured_at: f64) -> PyResult<Bound<'py, PyAny>> {
    let poses: Vec<_> = poses
        .into_iter()
        .map(|(yaw, pitch)| HeadPose::new(yaw, pitch, 0.0, [0.0, 0.0, 600.0]))
        .collect();
    to_py(py, &sensor::calibrate(&poses, captured_at).map_err(value_err)?)
}

#[pyfunction]
fn judge(yaw: f64, pitch: f64, profile: &Bound<'_, PyAny>) -> PyResult<String> {
    let pose = HeadPose::new(yaw, pitch, 0.0, [0.0, 0.0, 600.0]);
    Ok(sensor::judge(&pose, &profile_from(profile)?).to_string())
}

#[pyclass(unsendable)]
struct SensorPipeline {
    inner: sensor::SensorPipeline,
}

#[pymethods]
impl SensorPipeline {
    #[new]
    #[pyo3(signature = (profile, debounce = 3))]
    fn new(profile: &Bound<'_, PyAny>, debounce: usize) -> PyResult<Self> {
        Ok(Self {
            inner: sensor::SensorPipeline::new(profile_from(profile)?, debounce).map_err(value_err)?,
        })
    }

    /// Returns the raw label and, when the debounced state flips, the change record.
    #[pyo3(signature = (t, points, width = 1280, height = 720))]
    fn process<'py>(
        &mut self,
        py: Python<'py>,
        t: f64,
        points: Vec<(f64, f64)>,
        width: u32,
        height: u32,
    ) -> PyResult<(String, Bound<'py, PyAny>)> {
        let v = self.inner.process(&frame(t, points, width, height));
        Ok((v.raw.to_string(), to_py(py, &v.change)?))
    }
}

/// Pure control-plane session driven with explicit timestamps.
#[pyclass(unsendable)]
struct ControlSession {
    inner: control::ControlSession,
}

fn deliveries<'py>(py: Python<'py>, ds: Vec<control::Delivery>) -> PyResult<Bound<'py, PyAny>> {
    #[derive(Serialize)]
    struct Out {
        conn: u64,
        to: Option<control::Role>,
        message: control::Message,
    }
    let out: Vec<_> = ds
        .into_iter()
        .map(|d| Out {
            conn: d.conn,
            to: d.to,
            message: d.message,
        })
        .collect();
    to_py(py, &out)
}

#[pymethods]
impl ControlSession {
    /// With `parts` omitted the order is drawn from `seed`.
    #[new]
    #[pyo3(signature = (session_id, parts = None, part_duration = 600.0, trigger = "auto", seed = 0, blinded = false))]
    fn new(
        session_id: String,
        parts: Option<Vec<String>>,
        part_duration: f64,
        trigger: &str,
        seed: u64,
        blinded: bool,
    ) -> PyResult<Self> {
        let descriptor = match parts {
            Some(p) => {
                let modes = p.iter().map(|m| parse_mode(m)).collect::<PyResult<Vec<_>>>()?;
                SessionDescriptor::with_modes(session_id, &modes, part_duration, blinded)
            }
            None => SessionDescriptor::random_order(session_id, seed, part_duration, blinded),
        }
        .map_err(value_err)?;
        let config = SessionConfig::new(descriptor, parse_trigger(trigger)?, seed);
        Ok(Self {
            inner: control::ControlSession::new(config).map_err(value_err)?,
        })
    }

    #[getter]
    fn parts(&self) -> Vec<&'static str> {
        self.inner.descriptor().parts.iter().map(|p| p.mode.name()).collect()
    }

    #[getter]
    fn is_started(&self) -> bool {
        self.inner.is_started()
    }

    #[getter]
    fn is_finished(&self) -> bool {
        self.inner.is_finished()
    }

    fn connect(&mut self, conn: u64) {
        self.inner.connect(conn);
    }

    fn disconnect<'py>(&mut self, py: Python<'py>, now: f64, conn: u64) -> PyResult<Bound<'py, PyAny>> {
        deliveries(py, self.inner.disconnect(now, conn))
    }

    /// Feeds one wire frame from `conn`; returns the resulting deliveries.
    fn handle<'py>(&mut self, py: Python<'py>, now: f64, conn: u64, text: &str) -> PyResult<Bound<'py, PyAny>> {
        deliveries(py, self.inner.handle(now, conn, text.as_bytes()))
    }

    fn tick<'py>(&mut self, py: Python<'py>, now: f64) -> PyResult<Bound<'py, PyAny>> {
        deliveries(py, self.inner.tick(now))
    }

    fn log_jsonl(&self) -> String {
        self.inner.log().to_jsonl()
    }
}

#[pyfunction]
fn unpaired_t_test<'py>(py: Python<'py>, a: Vec<f64>, b: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &analytics::unpaired_t_test(&a, &b).map_err(value_err)?)
}

#[pyfunction]
fn paired_t_test<'py>(py: Python<'py>, a: Vec<f64>, b: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &analytics::paired_t_test(&a, &b).map_err(value_err)?)
}

#[pyfunction]
fn chi_square_test<'py>(py: Python<'py>, table: Vec<Vec<f64>>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &analytics::chi_square_test(&table).map_err(value_err)?)
}

#[pyfunction]
fn one_way_anova<'py>(py: Python<'py>, groups: Vec<Vec<f64>>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &analytics::one_way_anova(&groups).map_err(value_err)?)
}

/// Accuracy and precision of an annotation/detection confusion matrix given in
/// minutes, annotation label first.
#[pyfunction]
fn confusion<'py>(
    py: Python<'py>,
    attentive_attentive: f64,
    attentive_distracted: f64,
    distracted_attentive: f64,
    distracted_distracted: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let m = ConfusionMatrix::from_minutes(
        attentive_attentive,
        attentive_distracted,
        distracted_attentive,
        distracted_distracted,
    );
    to_py(
        py,
        &serde_json::json!({
            "matrix": m,
            "accuracy": m.accuracy(),
            "precision": m.precision(),
            "recall": m.recall(),
        }),
    )
}

/// Full report over session logs; `detections[i]` pairs with `events[i]`.
#[pyfunction]
#[pyo3(signature = (events, detections = None))]
fn analyze<'py>(py: Python<'py>, events: Vec<String>, detections: Option<Vec<String>>) -> PyResult<Bound<'py, PyAny>> {
    let detections = detections.unwrap_or_default();
    let mut inputs = Vec::with_capacity(events.len());
    for (i, path) in events.iter().enumerate() {
        let log = SessionLog::read(path).map_err(value_err)?;
        let det = match detections.get(i) {
            Some(d) => Some(sensor::read_detections(d).map_err(value_err)?),
            None => None,
        };
        inputs.push(SessionInput { log, detections: det });
    }
    to_py(py, &analytics::report(&inputs).map_err(value_err)?)
}

#[pyfunction]
fn read_log<'py>(py: Python<'py>, path: &str) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &SessionLog::read(path).map_err(value_err)?.events())
}

/// Deterministic synthetic session. Writes its files to `out_dir` when given and
/// returns the manifest.
#[pyfunction]
#[pyo3(signature = (seed, duration = 1800.0, trigger = "auto", parts = None, blinded = false, precision = None, session_id = None, out_dir = None))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    seed: u64,
    duration: f64,
    trigger: &str,
    parts: Option<Vec<String>>,
    blinded: bool,
    precision: Option<f64>,
    session_id: Option<String>,
    out_dir: Option<String>,
) -> PyResult<Bound<'py, PyAny>> {
    let id = session_id.unwrap_or_else(|| format!("sim-{seed}"));
    let descriptor = match parts {
        Some(p) => {
            let modes = p.iter().map(|m| parse_mode(m)).collect::<PyResult<Vec<_>>>()?;
            let n = modes.len().max(1) as f64;
            SessionDescriptor::with_modes(id, &modes, duration / n, blinded)
        }
        None => SessionDescriptor::random_order(id, seed, duration / 3.0, blinded),
    }
    .map_err(value_err)?;
    let config = SimConfig {
        seed,
        descriptor,
        trigger: parse_trigger(trigger)?,
        profile: BehaviorProfile {
            precision_target: precision,
            ..BehaviorProfile::default()
        },
    };
    let s = sim::simulate(&config).map_err(value_err)?;
    if let Some(dir) = out_dir {
        s.write(dir).map_err(value_err)?;
    }
    to_py(py, &s.manifest())
}

#[pymodule]
fn attractor(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<AudioEngine>()?;
    m.add_class::<Scheduler>()?;
    m.add_class::<SensorPipeline>()?;
    m.add_class::<ControlSession>()?;
    m.add_function(wrap_pyfunction!(cycle_effect, m)?)?;
    m.add_function(wrap_pyfunction!(project, m)?)?;
    m.add_function(wrap_pyfunction!(solve_head_pose, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(judge, m)?)?;
    m.add_function(wrap_pyfunction!(unpaired_t_test, m)?)?;
    m.add_function(wrap_pyfunction!(paired_t_test, m)?)?;
    m.add_function(wrap_pyfunction!(chi_square_test, m)?)?;
    m.add_function(wrap_pyfunction!(one_way_anova, m)?)?;
    m.add_function(wrap_pyfunction!(confusion, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(read_log, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
