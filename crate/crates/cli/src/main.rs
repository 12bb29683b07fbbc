//! `attractor`: one binary for offline perturbation, the control server, sensor replay,
//! calibration, analysis and synthetic sessions.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use attractor_core::analytics::{self, render_svg, render_text, SessionInput};
use attractor_core::audio::{read_pcm, write_pcm, AudioEngine, Effect, PerturbationPattern};
use attractor_core::control::{self, ServerOptions, SessionConfig, SessionDescriptor};
use attractor_core::scheduler::{cycle_effect, InterventionMode, SessionLog, TriggerMode};
use attractor_core::sensor::{
    calibrate, poses_of, read_detections, read_landmarks, write_detections, CalibrationProfile,
    FaceModel3D, SensorPipeline,
};
use attractor_core::sim::{self, BehaviorProfile, LiveScript, SimConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "attractor", version, about = "Attention-intervention toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Apply a cycling perturbation to a 16 kHz mono WAV file.
    Perturb(PerturbArgs),
    /// Run the control server for one session.
    Serve(ServeArgs),
    /// Replay a landmark stream through the attention sensor.
    Sense(SenseArgs),
    /// Compute a calibration profile from a landmark sweep.
    Calibrate(CalibrateArgs),
    /// Analyse session logs into a report.
    Analyze(AnalyzeArgs),
    /// Generate a synthetic session.
    Simulate(SimulateArgs),
    /// Connect scripted peers from a simulated session to a running server.
    Live(LiveArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Trigger {
    Auto,
    Manual,
}

impl From<Trigger> for TriggerMode {
    fn from(t: Trigger) -> Self {
        match t {
            Trigger::Auto => TriggerMode::Auto,
            Trigger::Manual => TriggerMode::Manual,
        }
    }
}

#[derive(Debug, Args)]
struct PerturbArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
    /// volume-halve, volume-double, pitch-down or pitch-up.
    #[arg(long, value_parser = parse_pattern)]
    pattern: PerturbationPattern,
    /// Seconds per on/off phase.
    #[arg(long, default_value_t = 3.0)]
    toggle: f64,
    /// Active windows in seconds, e.g. "0-6,20-32.5".
    #[arg(long)]
    active: Option<String>,
}

#[derive(Debug, Args)]
struct SessionArgs {
    #[arg(long, value_enum, default_value = "auto")]
    mode: Trigger,
    /// Part order; random among the six orders when omitted.
    #[arg(long, value_delimiter = ',', value_parser = parse_mode)]
    parts: Option<Vec<InterventionMode>>,
    #[arg(long, default_value_t = 600.0)]
    part_duration: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    blinded: bool,
    #[arg(long)]
    session_id: Option<String>,
}

impl SessionArgs {
    fn descriptor(&self) -> Result<SessionDescriptor, CliError> {
        let id = self
            .session_id
            .clone()
            .unwrap_or_else(|| format!("s{}", self.seed));
        let d = match &self.parts {
            Some(modes) => SessionDescriptor::with_modes(id, modes, self.part_duration, self.blinded),
            None => SessionDescriptor::random_order(id, self.seed, self.part_duration, self.blinded),
        };
        d.map_err(usage)
    }
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8765)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[command(flatten)]
    session: SessionArgs,
    /// Session seconds per wall-clock second.
    #[arg(long, default_value_t = 1.0)]
    clock_rate: f64,
    #[arg(long, default_value_t = 3.0)]
    toggle_period: f64,
    #[arg(long, default_value_t = 0.5)]
    treatment_probability: f64,
    /// Draw a fresh pattern for every "on" phase.
    #[arg(long)]
    pattern_per_cycle: bool,
    /// Defaults to $ATTRACTOR_LOG_DIR, then the working directory.
    #[arg(long)]
    log_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SenseArgs {
    #[arg(long)]
    landmarks: PathBuf,
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Processing rate; faster frames are skipped.
    #[arg(long, default_value_t = 15.0)]
    fps: f64,
    #[arg(long, default_value_t = attractor_core::sensor::DEFAULT_DEBOUNCE_FRAMES)]
    debounce: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[arg(long)]
    landmarks: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Session logs; repeat for several sessions.
    #[arg(long, required = true)]
    events: Vec<PathBuf>,
    /// Detection tracks, matched to --events in order.
    #[arg(long)]
    detections: Vec<PathBuf>,
    #[arg(long)]
    report: PathBuf,
    /// Plain-text rendering.
    #[arg(long)]
    text: Option<PathBuf>,
    /// SVG bar chart of distracted time per mode.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    seed: u64,
    /// Total session seconds, split evenly across parts.
    #[arg(long, default_value_t = 1800.0)]
    duration: f64,
    /// Behaviour parameters (JSON); defaults when omitted.
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    mode: Trigger,
    #[arg(long, value_delimiter = ',', value_parser = parse_mode)]
    parts: Option<Vec<InterventionMode>>,
    #[arg(long)]
    blinded: bool,
    #[arg(long)]
    session_id: Option<String>,
    /// Overrides the profile's target detection precision.
    #[arg(long)]
    precision: Option<f64>,
}

#[derive(Debug, Args)]
struct LiveArgs {
    #[arg(long)]
    addr: String,
    /// Directory written by `simulate`.
    #[arg(long)]
    sim_dir: PathBuf,
    #[arg(long)]
    session_id: String,
    #[arg(long, default_value_t = 1.0)]
    clock_rate: f64,
    /// Wall-clock seconds before giving up.
    #[arg(long, default_value_t = 3600.0)]
    timeout: f64,
    /// Write each peer's received frames as `<role>.frames.jsonl` here.
    #[arg(long)]
    transcripts: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
}

fn usage(e: impl Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn data(e: impl Display) -> CliError {
    CliError::Data(e.to_string())
}

fn parse_pattern(s: &str) -> Result<PerturbationPattern, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_mode(s: &str) -> Result<InterventionMode, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{} does not exist", path.display())))
    }
}

fn require_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => {
            Err(usage(format!("directory {} does not exist", p.display())))
        }
        _ => Ok(()),
    }
}

/// Parses "a-b,c-d" into sorted, non-overlapping windows.
fn parse_windows(spec: &str) -> Result<Vec<(f64, f64)>, CliError> {
    let mut windows = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (a, b) = part
            .split_once('-')
            .ok_or_else(|| usage(format!("window `{part}` is not `start-end`")))?;
        let a: f64 = a.trim().parse().map_err(|_| usage(format!("bad start in `{part}`")))?;
        let b: f64 = b.trim().parse().map_err(|_| usage(format!("bad end in `{part}`")))?;
        if !(a.is_finite() && b.is_finite() && a >= 0.0 && b > a) {
            return Err(usage(format!("window `{part}` is empty or negative")));
        }
        windows.push((a, b));
    }
    windows.sort_by(|x, y| x.0.total_cmp(&y.0));
    for w in windows.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(usage(format!(
                "active windows {}-{} and {}-{} overlap",
                w[0].0, w[0].1, w[1].0, w[1].1
            )));
        }
    }
    Ok(windows)
}

fn perturb(a: PerturbArgs) -> Result<(), CliError> {
    require_file(&a.input)?;
    require_parent(&a.output)?;
    if !(a.toggle.is_finite() && a.toggle > 0.0) {
        return Err(usage("--toggle must be positive"));
    }
    let windows = match &a.active {
        Some(s) => parse_windows(s)?,
        None => Vec::new(),
    };
    let chunks = read_pcm(&a.input).map_err(data)?;
    let Some(first) = chunks.first() else {
        write_pcm(&a.output, &chunks).map_err(data)?;
        return Ok(());
    };
    let rate = first.sample_rate();
    let mut engine = AudioEngine::new(rate).map_err(data)?;
    let mut out = Vec::with_capacity(chunks.len());
    for chunk in &chunks {
        let t = chunk.start_index() as f64 / rate as f64;
        let effect = windows
            .iter()
            .find(|(s, e)| *s <= t && t < *e)
            .map_or(Effect::None, |(s, _)| {
                cycle_effect(*s, t, a.toggle, Effect::Mindless(a.pattern))
            });
        out.push(engine.process_chunk(chunk, effect).map_err(data)?);
    }
    write_pcm(&a.output, &out).map_err(data)
}

fn serve(a: ServeArgs) -> Result<(), CliError> {
    let descriptor = a.session.descriptor()?;
    if let Some(dir) = &a.log_dir {
        if !dir.is_dir() {
            return Err(usage(format!("log directory {} does not exist", dir.display())));
        }
    }
    let mut session = SessionConfig::new(descriptor, a.session.mode.into(), a.session.seed);
    session.toggle_period = a.toggle_period;
    session.treatment_probability = a.treatment_probability;
    session.pattern_per_cycle = a.pattern_per_cycle;
    session.scheduler_config().validate().map_err(usage)?;
    let mut options = ServerOptions::new(session);
    options.clock_rate = a.clock_rate;
    if let Some(dir) = a.log_dir {
        options.log_dir = dir;
    }
    let addr = format!("{}:{}", a.host, a.port);
    let listener = control::bind(&addr).map_err(data)?;
    let bound = listener.local_addr().map_err(data)?;
    let log_path = options.log_path();
    eprintln!("listening on ws://{bound}/, logging to {}", log_path.display());
    let log = control::serve(listener, options).map_err(data)?;
    println!("{}", log_path.display());
    eprintln!("session finished with {} records", log.len());
    Ok(())
}

fn read_profile(path: Option<&Path>) -> Result<CalibrationProfile, CliError> {
    let prompt = "no calibration profile; run `attractor calibrate` first";
    match path {
        None => Err(data(prompt)),
        Some(p) if !p.is_file() => Err(data(format!("{prompt} ({} not found)", p.display()))),
        Some(p) => CalibrationProfile::read(p).map_err(data),
    }
}

fn sense(a: SenseArgs) -> Result<(), CliError> {
    require_file(&a.landmarks)?;
    require_parent(&a.out)?;
    if !(a.fps.is_finite() && a.fps > 0.0) {
        return Err(usage("--fps must be positive"));
    }
    let profile = read_profile(a.profile.as_deref())?;
    let frames = read_landmarks(&a.landmarks).map_err(data)?;
    let mut pipeline = SensorPipeline::new(profile, a.debounce).map_err(data)?;
    let period = 1.0 / a.fps;
    let mut next_due = f64::NEG_INFINITY;
    let mut changes = Vec::new();
    for f in &frames {
        // Tolerates timestamp jitter of a tenth of a frame.
        if f.timestamp < next_due - 0.1 * period {
            continue;
        }
        next_due = f.timestamp + period;
        if let Some(c) = pipeline.process(f).change {
            changes.push(c);
        }
    }
    write_detections(&a.out, &changes).map_err(data)
}

fn calibrate_cmd(a: CalibrateArgs) -> Result<(), CliError> {
    require_file(&a.landmarks)?;
    require_parent(&a.out)?;
    let frames = read_landmarks(&a.landmarks).map_err(data)?;
    let poses = poses_of(&frames, None, &FaceModel3D::default());
    let at = frames.last().map_or(0.0, |f| f.timestamp);
    let profile = calibrate(&poses, at).map_err(data)?;
    profile.write(&a.out).map_err(data)
}

fn analyze(a: AnalyzeArgs) -> Result<(), CliError> {
    for p in a.events.iter().chain(&a.detections) {
        require_file(p)?;
    }
    for p in std::iter::once(&a.report).chain(&a.text).chain(&a.svg) {
        require_parent(p)?;
    }
    if a.detections.len() > a.events.len() {
        return Err(usage("more --detections than --events"));
    }
    let mut inputs = Vec::new();
    for (i, path) in a.events.iter().enumerate() {
        let log = SessionLog::read(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
        let detections = match a.detections.get(i) {
            Some(d) => Some(read_detections(d).map_err(|e| data(format!("{}: {e}", d.display())))?),
            None => None,
        };
        inputs.push(SessionInput { log, detections });
    }
    let report = analytics::report(&inputs).map_err(data)?;
    report.write(&a.report).map_err(data)?;
    if let Some(p) = &a.text {
        std::fs::write(p, render_text(&report)).map_err(data)?;
    }
    if let Some(p) = &a.svg {
        std::fs::write(p, render_svg(&report)).map_err(data)?;
    }
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    if let Some(p) = &a.profile {
        require_file(p)?;
    }
    let mut profile = match &a.profile {
        Some(p) => BehaviorProfile::read(p).map_err(data)?,
        None => BehaviorProfile::default(),
    };
    if a.precision.is_some() {
        profile.precision_target = a.precision;
    }
    if !(a.duration.is_finite() && a.duration > 0.0) {
        return Err(usage("--duration must be positive"));
    }
    let id = a.session_id.unwrap_or_else(|| format!("sim-{}", a.seed));
    let descriptor = match &a.parts {
        Some(modes) => SessionDescriptor::with_modes(id, modes, a.duration / modes.len() as f64, a.blinded),
        None => SessionDescriptor::random_order(id, a.seed, a.duration / 3.0, a.blinded),
    }
    .map_err(usage)?;
    let config = SimConfig {
        seed: a.seed,
        descriptor,
        trigger: a.mode.into(),
        profile,
    };
    let s = sim::simulate(&config).map_err(data)?;
    for p in s.write(&a.out).map_err(data)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn live(a: LiveArgs) -> Result<(), CliError> {
    if !a.sim_dir.is_dir() {
        return Err(usage(format!("{} is not a directory", a.sim_dir.display())));
    }
    if !(a.clock_rate.is_finite() && a.clock_rate > 0.0 && a.timeout > 0.0) {
        return Err(usage("--clock-rate and --timeout must be positive"));
    }
    let script = LiveScript::load(&a.sim_dir, &a.session_id).map_err(data)?;
    let t = sim::run_peers(&a.addr, &script, a.clock_rate, Duration::from_secs_f64(a.timeout))
        .map_err(data)?;
    if let Some(dir) = &a.transcripts {
        std::fs::create_dir_all(dir).map_err(data)?;
        for (role, frames) in [("client", &t.client), ("sensor", &t.sensor), ("console", &t.console)] {
            let mut text = frames.join("\n");
            text.push('\n');
            std::fs::write(dir.join(format!("{role}.frames.jsonl")), text).map_err(data)?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Perturb(a) => perturb(a),
        Command::Serve(a) => serve(a),
        Command::Sense(a) => sense(a),
        Command::Calibrate(a) => calibrate_cmd(a),
        Command::Analyze(a) => analyze(a),
        Command::Simulate(a) => simulate(a),
        Command::Live(a) => live(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
