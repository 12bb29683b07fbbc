use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::Duration;

use attractor_core::control::SessionDescriptor;
use attractor_core::scheduler::{EventKind, InterventionMode, SessionLog, TriggerMode};
use attractor_core::sensor::{
    project, read_detections, AttentionLabel, CalibrationProfile, CameraModel, FaceModel3D,
    HeadPose, LandmarkFrame,
};
use attractor_core::sim::{run_peers, simulate, BehaviorProfile, LiveScript, SimConfig};
use serde_json::Value;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_attractor");
const RATE: u32 = 16_000;

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn attractor")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_wav(path: &Path, samples: &[f32]) {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).unwrap();
    for &s in samples {
        w.write_sample((s * i16::MAX as f32).round() as i16).unwrap();
    }
    w.finalize().unwrap();
}

fn read_wav(path: &Path) -> Vec<f32> {
    let mut r = hound::WavReader::open(path).unwrap();
    r.samples::<i16>()
        .map(|s| s.unwrap() as f32 / i16::MAX as f32)
        .collect()
}

fn tone(freq: f64, secs: f64) -> Vec<f32> {
    (0..(secs * RATE as f64) as usize)
        .map(|i| (0.3 * (2.0 * std::f64::consts::PI * freq * i as f64 / RATE as f64).sin()) as f32)
        .collect()
}

fn rms(x: &[f32]) -> f64 {
    (x.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

// Direct DFT magnitude scan around the expected peak.
fn peak_frequency(x: &[f32], lo: f64, hi: f64) -> f64 {
    let mut best = (lo, 0.0);
    let mut f = lo;
    while f <= hi {
        let w = 2.0 * std::f64::consts::PI * f / RATE as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (n, &v) in x.iter().enumerate() {
            let hann = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / x.len() as f64).cos();
            re += v as f64 * hann * (w * n as f64).cos();
            im -= v as f64 * hann * (w * n as f64).sin();
        }
        let mag = re * re + im * im;
        if mag > best.1 {
            best = (f, mag);
        }
        f += 0.1;
    }
    best.0
}

fn seconds(x: &[f32], a: f64, b: f64) -> &[f32] {
    &x[(a * RATE as f64) as usize..(b * RATE as f64) as usize]
}

#[test]
fn no_subcommand_is_a_usage_error() {
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["perturb", "--in"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn perturb_halves_first_on_phase_only() {
    let dir = TempDir::new().unwrap();
    let (input, output) = (dir.path().join("in.wav"), dir.path().join("out.wav"));
    let src = tone(300.0, 8.0);
    write_wav(&input, &src);
    let o = run(&[
        "perturb", "--in", p(&input), "--out", p(&output), "--pattern", "volume-halve",
        "--toggle", "3", "--active", "0-6",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let src = read_wav(&input);
    let out = read_wav(&output);
    assert_eq!(out.len(), src.len());
    let ratio = rms(seconds(&out, 0.0, 3.0)) / rms(seconds(&src, 0.0, 3.0));
    assert!((ratio - 0.5).abs() < 1e-3, "{ratio}");
    assert_eq!(seconds(&out, 3.0, 8.0), seconds(&src, 3.0, 8.0));
}

#[test]
fn perturb_without_windows_is_bit_identical() {
    let dir = TempDir::new().unwrap();
    let (input, output) = (dir.path().join("in.wav"), dir.path().join("out.wav"));
    write_wav(&input, &tone(440.0, 2.3));
    let o = run(&["perturb", "--in", p(&input), "--out", p(&output), "--pattern", "pitch-up"]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(&input).unwrap(), std::fs::read(&output).unwrap());
}

#[test]
fn perturb_rejects_overlapping_windows() {
    let dir = TempDir::new().unwrap();
    let (input, output) = (dir.path().join("in.wav"), dir.path().join("out.wav"));
    write_wav(&input, &tone(440.0, 1.0));
    let o = run(&[
        "perturb", "--in", p(&input), "--out", p(&output), "--pattern", "halve",
        "--active", "0-4,3-6",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("overlap"));
    assert!(!output.exists());
}

#[test]
fn perturb_missing_input_fails_before_work() {
    let dir = TempDir::new().unwrap();
    let output = dir.path().join("out.wav");
    let o = run(&[
        "perturb", "--in", p(&dir.path().join("nope.wav")), "--out", p(&output), "--pattern", "halve",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!output.exists());
}

#[test]
fn perturb_pitch_up_moves_peak_one_tone() {
    let dir = TempDir::new().unwrap();
    let (input, output) = (dir.path().join("in.wav"), dir.path().join("out.wav"));
    write_wav(&input, &tone(440.0, 10.0));
    let o = run(&[
        "perturb", "--in", p(&input), "--out", p(&output), "--pattern", "pitch-up",
        "--active", "0-3,6-9", "--toggle", "3",
    ]);
    assert!(o.status.success());
    let out = read_wav(&output);
    let expected = 440.0 * 2f64.powf(1.0 / 6.0);
    for (a, b) in [(0.5, 2.5), (6.5, 8.5)] {
        let f = peak_frequency(seconds(&out, a, b), 400.0, 540.0);
        assert!((f - expected).abs() / expected < 0.005, "{a}-{b}: {f}");
    }
    let f = peak_frequency(seconds(&out, 3.5, 5.5), 400.0, 540.0);
    assert!((f - 440.0).abs() < 1.0, "{f}");
}

fn frame(t: f64, yaw: f64, pitch: f64) -> LandmarkFrame {
    let camera = CameraModel::for_image(1280, 720);
    let pose = HeadPose::new(yaw, pitch, 0.0, [0.0, 0.0, 600.0]);
    LandmarkFrame {
        timestamp: t,
        width: 1280,
        height: 720,
        points: project(&FaceModel3D::default(), &pose, &camera).unwrap(),
    }
}

fn write_frames(path: &Path, frames: &[LandmarkFrame]) {
    let text: String = frames
        .iter()
        .map(|f| serde_json::to_string(f).unwrap() + "\n")
        .collect();
    std::fs::write(path, text).unwrap();
}

fn sweep() -> Vec<LandmarkFrame> {
    (0..=40)
        .map(|i| {
            let s = i as f64 / 40.0;
            let yaw = -20.0 + 40.0 * s;
            let pitch = 10.0 * (2.0 * std::f64::consts::PI * s).sin();
            frame(i as f64 / 15.0, yaw, pitch)
        })
        .collect()
}

#[test]
fn calibrate_recovers_sweep_extremes_and_round_trips() {
    let dir = TempDir::new().unwrap();
    let (lm, out) = (dir.path().join("sweep.jsonl"), dir.path().join("profile.json"));
    write_frames(&lm, &sweep());
    let o = run(&["calibrate", "--landmarks", p(&lm), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let profile = CalibrationProfile::read(&out).unwrap();
    for (got, want) in [
        (profile.yaw_min, -20.0),
        (profile.yaw_max, 20.0),
        (profile.pitch_min, -10.0),
        (profile.pitch_max, 10.0),
    ] {
        assert!((got - want).abs() < 0.1, "{profile:?}");
    }
    let text = std::fs::read_to_string(&out).unwrap();
    let again = CalibrationProfile::read(&out).unwrap();
    assert_eq!(profile, again);
    again.write(&out).unwrap();
    assert_eq!(std::fs::read_to_string(&out).unwrap(), text);
}

#[test]
fn calibrate_static_sweep_is_degenerate() {
    let dir = TempDir::new().unwrap();
    let (lm, out) = (dir.path().join("static.jsonl"), dir.path().join("profile.json"));
    let frames: Vec<_> = (0..30).map(|i| frame(i as f64 / 15.0, 3.0, 2.0)).collect();
    write_frames(&lm, &frames);
    let o = run(&["calibrate", "--landmarks", p(&lm), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("degenerate"));
    assert!(!out.exists());
}

fn write_profile(dir: &Path) -> PathBuf {
    let path = dir.join("profile.json");
    CalibrationProfile::new((-20.0, 20.0), (-10.0, 10.0), 0.0)
        .unwrap()
        .write(&path)
        .unwrap();
    path
}

#[test]
fn sense_flips_at_debounced_crossing() {
    let dir = TempDir::new().unwrap();
    let profile = write_profile(dir.path());
    let (lm, out) = (dir.path().join("lm.jsonl"), dir.path().join("det.jsonl"));
    // Yaw ramps 0.5 degrees per frame; frame 40 (20.25 degrees) starts the distracted run.
    let frames: Vec<_> = (0..80).map(|i| frame(i as f64 / 15.0, 0.5 * i as f64 + 0.25, 0.0)).collect();
    write_frames(&lm, &frames);
    let o = run(&["sense", "--landmarks", p(&lm), "--profile", p(&profile), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let changes = read_detections(&out).unwrap();
    assert_eq!(changes.len(), 1, "{changes:?}");
    assert_eq!(changes[0].state, AttentionLabel::Distracted);
    assert!((changes[0].t - 40.0 / 15.0).abs() < 1e-9, "{}", changes[0].t);
}

#[test]
fn sense_at_calibration_extremes_stays_attentive() {
    let dir = TempDir::new().unwrap();
    let profile = write_profile(dir.path());
    let (lm, out) = (dir.path().join("lm.jsonl"), dir.path().join("det.jsonl"));
    let corners = [(-19.9, -9.9), (19.9, 9.9), (-19.9, 9.9), (19.9, -9.9), (0.0, 0.0)];
    let frames: Vec<_> = (0..60)
        .map(|i| {
            let (y, pi) = corners[i % corners.len()];
            frame(i as f64 / 15.0, y, pi)
        })
        .collect();
    write_frames(&lm, &frames);
    let o = run(&["sense", "--landmarks", p(&lm), "--profile", p(&profile), "--out", p(&out)]);
    assert!(o.status.success());
    assert!(read_detections(&out).unwrap().is_empty());
}

#[test]
fn sense_without_profile_prompts_calibration() {
    let dir = TempDir::new().unwrap();
    let (lm, out) = (dir.path().join("lm.jsonl"), dir.path().join("det.jsonl"));
    write_frames(&lm, &sweep());
    for extra in [vec![], vec!["--profile", "/nonexistent/profile.json"]] {
        let mut args = vec!["sense", "--landmarks", p(&lm), "--out", p(&out)];
        args.extend(extra);
        let o = run(&args);
        assert_eq!(o.status.code(), Some(2));
        assert!(String::from_utf8_lossy(&o.stderr).contains("attractor calibrate"));
    }
    assert!(!out.exists());
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    for d in [&a, &b] {
        let o = run(&["simulate", "--seed", "11", "--duration", "300", "--out", p(d.path())]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (x, y) = (dir_bytes(a.path()), dir_bytes(b.path()));
    assert_eq!(x.len(), 7);
    assert_eq!(x, y);
    let c = TempDir::new().unwrap();
    run(&["simulate", "--seed", "12", "--duration", "300", "--out", p(c.path())]);
    assert_ne!(
        std::fs::read(a.path().join("session-sim-11.events.jsonl")).unwrap(),
        std::fs::read(c.path().join("session-sim-12.events.jsonl")).unwrap()
    );
}

fn analyze(dir: &Path, id: &str, detections: bool) -> Value {
    let events = dir.join(format!("session-{id}.events.jsonl"));
    let det = dir.join(format!("{id}.detections.jsonl"));
    let report = dir.join("report.json");
    let text = dir.join("report.txt");
    let svg = dir.join("report.svg");
    let mut args = vec!["analyze", "--events", p(&events), "--report", p(&report)];
    if detections {
        args.extend(["--detections", p(&det)]);
    }
    args.extend(["--text", p(&text), "--svg", p(&svg)]);
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));
    serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap()
}

#[test]
fn simulated_manual_session_yields_recovery_rows() {
    let dir = TempDir::new().unwrap();
    let o = run(&[
        "simulate", "--seed", "3", "--duration", "1800", "--mode", "manual", "--parts", "mindless",
        "--session-id", "exp1", "--out", p(dir.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = analyze(dir.path(), "exp1", false);
    let rec = &r["recovery_time"];
    assert!(rec["treatment"]["n"].as_u64().unwrap() >= 2, "{rec}");
    assert!(rec["control"]["n"].as_u64().unwrap() >= 2, "{rec}");
    assert!(rec["test"]["p_value"].as_f64().is_some());
}

#[test]
fn simulated_auto_session_yields_three_modes_and_confusion() {
    let dir = TempDir::new().unwrap();
    let o = run(&[
        "simulate", "--seed", "4", "--duration", "900", "--session-id", "exp2", "--out", p(dir.path()),
    ]);
    assert!(o.status.success());
    let r = analyze(dir.path(), "exp2", true);
    let parts = r["sessions"][0]["parts"].as_array().unwrap();
    let mut modes: Vec<_> = parts.iter().map(|p| p["mode"].as_str().unwrap().to_owned()).collect();
    modes.sort();
    assert_eq!(modes, ["alerting", "control", "mindless"]);
    assert!(parts.iter().all(|p| p["distracted_time"].as_f64().is_some()));
    assert!(r["confusion"]["matrix"].is_object());
}

#[test]
fn injected_precision_is_recovered() {
    let dir = TempDir::new().unwrap();
    let o = run(&[
        "simulate", "--seed", "21", "--duration", "5400", "--precision", "0.5", "--session-id", "prec",
        "--out", p(dir.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = analyze(dir.path(), "prec", true);
    let precision = r["confusion"]["precision"].as_f64().unwrap();
    assert!((precision - 0.50).abs() <= 0.03, "{precision}");
}

#[test]
fn analyze_empty_log_reports_zero_episodes() {
    let dir = TempDir::new().unwrap();
    let (events, report) = (dir.path().join("empty.jsonl"), dir.path().join("r.json"));
    std::fs::write(&events, "").unwrap();
    let o = run(&["analyze", "--events", p(&events), "--report", p(&report)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["sessions"][0]["episodes"].as_array().unwrap().len(), 0);
    assert!(!r["omissions"].as_array().unwrap().is_empty());
}

#[test]
fn analyze_malformed_log_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let (events, report) = (dir.path().join("bad.jsonl"), dir.path().join("r.json"));
    std::fs::write(&events, "{not json\n").unwrap();
    let o = run(&["analyze", "--events", p(&events), "--report", p(&report)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn serve_reports_port_in_use() {
    let held = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = held.local_addr().unwrap().port().to_string();
    let dir = TempDir::new().unwrap();
    let o = run(&["serve", "--port", &port, "--log-dir", p(dir.path())]);
    assert_ne!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains(&port));
}

#[test]
fn serve_runs_blinded_three_part_session() {
    let dir = TempDir::new().unwrap();
    let modes = [InterventionMode::Control, InterventionMode::Mindless, InterventionMode::Alerting];
    let mut child = Command::new(BIN)
        .args([
            "serve", "--port", "0", "--mode", "auto", "--parts", "control,mindless,alerting",
            "--part-duration", "40", "--seed", "5", "--blinded", "--session-id", "live1",
            "--clock-rate", "40", "--log-dir", p(dir.path()),
        ])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stderr = BufReader::new(child.stderr.take().unwrap());
    let mut line = String::new();
    stderr.read_line(&mut line).unwrap();
    let addr = line
        .split("ws://")
        .nth(1)
        .and_then(|s| s.split('/').next())
        .unwrap_or_else(|| panic!("no address in `{line}`"))
        .to_owned();

    let profile = BehaviorProfile {
        mean_attentive: 8.0,
        mean_distracted: 5.0,
        ..BehaviorProfile::default()
    };
    let config = SimConfig {
        seed: 5,
        descriptor: SessionDescriptor::with_modes("live1", &modes, 40.0, true).unwrap(),
        trigger: TriggerMode::Auto,
        profile,
    };
    let script = LiveScript::from_simulation(&simulate(&config).unwrap());
    let transcripts = run_peers(&addr, &script, 40.0, Duration::from_secs(60)).unwrap();
    let status = child.wait().unwrap();
    assert!(status.success());

    let log = SessionLog::read(dir.path().join("session-live1.events.jsonl")).unwrap();
    let parts = log
        .events()
        .iter()
        .filter(|e| matches!(e.kind, EventKind::PartEnd { .. }))
        .count();
    assert_eq!(parts, 3);
    assert!(log.events().iter().any(|e| matches!(e.kind, EventKind::SessionEnd { .. })));

    let end = transcripts
        .console
        .iter()
        .position(|f| f.contains("\"session_end\""))
        .expect("console saw session_end");
    assert!(end > 0);
    for f in &transcripts.console[..end] {
        for word in ["mindless", "alerting", "control", "treatment", "condition"] {
            assert!(!f.contains(word), "console frame leaks `{word}`: {f}");
        }
    }
    assert!(transcripts.console[end..].iter().any(|f| f.contains("condition_reveal")));
    assert!(transcripts.client.iter().any(|f| f.contains("\"activate\"")));
}
