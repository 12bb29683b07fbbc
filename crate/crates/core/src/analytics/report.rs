use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::attribution::{pattern_attribution, PatternAttribution};
use super::episodes::{extract_episodes, recovery_time_stats, Episode, RecoveryStats};
use super::hypothesis::{one_way_anova, paired_t_test, AnovaResult, TestResult};
use super::track::{
    annotation_track, confusion_matrix, detection_track, detection_track_from_changes,
    distraction_count, total_distracted_time, ConfusionMatrix,
};
use super::Result;
use crate::scheduler::{EventKind, InterventionMode, SessionLog};
use crate::sensor::StateChange;

/// One session's inputs to [`report`].
#[derive(Debug, Clone)]
pub struct SessionInput {
    pub log: SessionLog,
    /// Offline sensor output; replaces detections logged by the server.
    pub detections: Option<Vec<StateChange>>,
}

impl SessionInput {
    pub fn new(log: SessionLog) -> Self {
        Self {
            log,
            detections: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartReport {
    pub part: Option<usize>,
    pub mode: Option<InterventionMode>,
    pub start: f64,
    pub end: f64,
    /// From annotations, seconds.
    pub distracted_time: f64,
    pub distraction_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detected_distracted_time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMatrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub session_id: Option<String>,
    pub episodes: Vec<Episode>,
    pub parts: Vec<PartReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionSummary {
    pub matrix: ConfusionMatrix,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeAnova {
    pub modes: Vec<InterventionMode>,
    pub result: AnovaResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Omission {
    pub metric: String,
    pub reason: String,
}

/// Every metric over a set of sessions. Metrics that cannot be computed are `None` and
/// listed in `omissions` with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub sessions: Vec<SessionReport>,
    pub recovery_time: Option<RecoveryStats>,
    pub pattern_attribution: Option<PatternAttribution>,
    pub confusion: Option<ConfusionSummary>,
    pub distracted_time_anova: Option<ModeAnova>,
    pub distraction_count_anova: Option<ModeAnova>,
    /// Per-session distracted time, mindless against alerting.
    pub mindless_vs_alerting: Option<TestResult>,
    pub omissions: Vec<Omission>,
}

impl Report {
    pub const METRICS: [&'static str; 6] = [
        "recovery_time",
        "pattern_attribution",
        "confusion",
        "distracted_time_anova",
        "distraction_count_anova",
        "mindless_vs_alerting",
    ];

    pub fn write(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(std::io::Error::from)?;
        text.push('\n');
        std::fs::write(path, text)
    }

    pub fn read(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::from)
    }
}

struct Part {
    part: Option<usize>,
    mode: Option<InterventionMode>,
    start: f64,
    end: f64,
}

fn parts_of(log: &SessionLog) -> Vec<Part> {
    let mut parts = Vec::new();
    let mut open: Option<Part> = None;
    for e in log.events() {
        match e.kind {
            EventKind::PartStart { part, mode } => {
                open = Some(Part {
                    part: Some(part),
                    mode: Some(mode),
                    start: e.t,
                    end: e.t,
                })
            }
            EventKind::PartEnd { .. } => {
                if let Some(mut p) = open.take() {
                    p.end = e.t;
                    parts.push(p);
                }
            }
            _ => {}
        }
    }
    if let Some(mut p) = open {
        p.end = log.last_time().unwrap_or(p.start);
        parts.push(p);
    }
    if parts.is_empty() {
        if let (Some(first), Some(last)) = (log.events().first(), log.last_time()) {
            parts.push(Part {
                part: None,
                mode: None,
                start: first.t,
                end: last,
            });
        }
    }
    parts.retain(|p| p.end > p.start);
    parts
}

fn has_detections(input: &SessionInput) -> bool {
    input.detections.is_some()
        || input
            .log
            .events()
            .iter()
            .any(|e| matches!(e.kind, EventKind::DetectionChange { .. }))
}

fn session_report(input: &SessionInput) -> Result<SessionReport> {
    let log = &input.log;
    let session_id = log.events().iter().find_map(|e| match &e.kind {
        EventKind::SessionStart { session_id, .. } => Some(session_id.clone()),
        _ => None,
    });
    let episodes = extract_episodes(log)?;
    let detect = has_detections(input);
    let mut parts = Vec::new();
    for p in parts_of(log) {
        let annotated = annotation_track(log, p.start, p.end)?;
        let detected = if !detect {
            None
        } else if let Some(changes) = &input.detections {
            Some(detection_track_from_changes(changes, p.start, p.end)?)
        } else {
            Some(detection_track(log, p.start, p.end)?)
        };
        let confusion = match &detected {
            Some(d) => Some(confusion_matrix(&annotated, d)?),
            None => None,
        };
        parts.push(PartReport {
            part: p.part,
            mode: p.mode,
            start: p.start,
            end: p.end,
            distracted_time: total_distracted_time(&annotated),
            distraction_count: distraction_count(&annotated),
            detected_distracted_time: detected.as_ref().map(total_distracted_time),
            confusion,
        });
    }
    Ok(SessionReport {
        session_id,
        episodes,
        parts,
    })
}

fn mode_anova(sessions: &[SessionReport], value: impl Fn(&PartReport) -> f64) -> Result<ModeAnova> {
    let mut modes = Vec::new();
    let mut groups: Vec<Vec<f64>> = Vec::new();
    for mode in InterventionMode::ALL {
        let g: Vec<f64> = sessions
            .iter()
            .flat_map(|s| &s.parts)
            .filter(|p| p.mode == Some(mode))
            .map(&value)
            .collect();
        if !g.is_empty() {
            modes.push(mode);
            groups.push(g);
        }
    }
    Ok(ModeAnova {
        modes,
        result: one_way_anova(&groups)?,
    })
}

fn paired_modes(sessions: &[SessionReport]) -> Result<TestResult> {
    let mut mindless = Vec::new();
    let mut alerting = Vec::new();
    for s in sessions {
        let total = |m| {
            let parts: Vec<&PartReport> = s.parts.iter().filter(|p| p.mode == Some(m)).collect();
            (!parts.is_empty()).then(|| parts.iter().map(|p| p.distracted_time).sum::<f64>())
        };
        if let (Some(a), Some(b)) = (total(InterventionMode::Mindless), total(InterventionMode::Alerting)) {
            mindless.push(a);
            alerting.push(b);
        }
    }
    paired_t_test(&mindless, &alerting)
}

fn keep<T>(omissions: &mut Vec<Omission>, metric: &str, r: Result<T>) -> Option<T> {
    match r {
        Ok(v) => Some(v),
        Err(e) => {
            omissions.push(Omission {
                metric: metric.into(),
                reason: e.to_string(),
            });
            None
        }
    }
}

/// Builds the full report. Malformed logs are errors; missing data only omits metrics.
pub fn report(inputs: &[SessionInput]) -> Result<Report> {
    let mut sessions = Vec::with_capacity(inputs.len());
    for input in inputs {
        sessions.push(session_report(input)?);
    }
    let episodes: Vec<Episode> = sessions.iter().flat_map(|s| s.episodes.clone()).collect();
    let mut omissions = Vec::new();
    let recovery_time = keep(&mut omissions, "recovery_time", recovery_time_stats(&episodes));
    let pattern_attribution = keep(&mut omissions, "pattern_attribution", pattern_attribution(&episodes));
    let matrices: Vec<ConfusionMatrix> = sessions
        .iter()
        .flat_map(|s| &s.parts)
        .filter_map(|p| p.confusion)
        .collect();
    let confusion = keep(
        &mut omissions,
        "confusion",
        if matrices.is_empty() {
            Err(super::AnalyticsError::InsufficientData("no detection track".into()))
        } else {
            let mut m = ConfusionMatrix::default();
            for c in &matrices {
                m.add(c);
            }
            Ok(ConfusionSummary {
                matrix: m,
                accuracy: m.accuracy(),
                precision: m.precision(),
            })
        },
    );
    let distracted_time_anova = keep(
        &mut omissions,
        "distracted_time_anova",
        mode_anova(&sessions, |p| p.distracted_time),
    );
    let distraction_count_anova = keep(
        &mut omissions,
        "distraction_count_anova",
        mode_anova(&sessions, |p| p.distraction_count as f64),
    );
    let mindless_vs_alerting = keep(&mut omissions, "mindless_vs_alerting", paired_modes(&sessions));
    Ok(Report {
        sessions,
        recovery_time,
        pattern_attribution,
        confusion,
        distracted_time_anova,
        distraction_count_anova,
        mindless_vs_alerting,
        omissions,
    })
}

fn fmt_test(t: &TestResult) -> String {
    let df = match t.df2 {
        Some(d2) => format!("({}, {})", t.df1, d2),
        None => format!("({})", t.df1),
    };
    let effect = match t.effect {
        super::EffectSize::CohensD => "d",
        super::EffectSize::CramersV => "V",
        super::EffectSize::EtaSquared => "eta2",
    };
    format!(
        "stat{df} = {:.4}, p = {:.4}, {effect} = {:.4}",
        t.statistic, t.p_value, t.effect_size
    )
}

fn opt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{:.1} %", v * 100.0))
}

/// Plain-text tables.
pub fn render_text(r: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "sessions: {}", r.sessions.len());
    let _ = writeln!(s, "\n{:<10} {:>5} {:>10} {:>14} {:>8} {:>10}", "session", "part", "mode", "distracted s", "count", "detected s");
    for sess in &r.sessions {
        let id = sess.session_id.as_deref().unwrap_or("-");
        for p in &sess.parts {
            let _ = writeln!(
                s,
                "{:<10} {:>5} {:>10} {:>14.1} {:>8} {:>10}",
                id,
                p.part.map_or("-".to_string(), |v| v.to_string()),
                p.mode.map_or("-", |m| m.name()),
                p.distracted_time,
                p.distraction_count,
                p.detected_distracted_time.map_or("-".to_string(), |v| format!("{v:.1}")),
            );
        }
    }
    if let Some(rt) = &r.recovery_time {
        let _ = writeln!(s, "\nrecovery time");
        let _ = writeln!(s, "  treatment  {:.2} s (sd {:.2}, n {})", rt.treatment.mean, rt.treatment.sd, rt.treatment.n);
        let _ = writeln!(s, "  control    {:.2} s (sd {:.2}, n {})", rt.control.mean, rt.control.sd, rt.control.n);
        let _ = writeln!(s, "  {}", fmt_test(&rt.test));
    }
    if let Some(pa) = &r.pattern_attribution {
        let _ = writeln!(s, "\npattern          last-before  total");
        for i in 0..4 {
            let _ = writeln!(s, "  {:<16} {:>6} {:>6}", pa.patterns[i].name(), pa.last_before_refocus[i], pa.total[i]);
        }
        let _ = writeln!(s, "  {}", fmt_test(&pa.test));
    }
    if let Some(c) = &r.confusion {
        let m = &c.matrix;
        let _ = writeln!(s, "\nconfusion (min)   det attentive  det distracted");
        let _ = writeln!(s, "  ann attentive   {:>13.1} {:>15.1}", m.attentive_attentive, m.attentive_distracted);
        let _ = writeln!(s, "  ann distracted  {:>13.1} {:>15.1}", m.distracted_attentive, m.distracted_distracted);
        let _ = writeln!(s, "  accuracy {}, precision {}", opt_pct(c.accuracy), opt_pct(c.precision));
    }
    for (name, a) in [
        ("distracted time", &r.distracted_time_anova),
        ("distraction count", &r.distraction_count_anova),
    ] {
        if let Some(a) = a {
            let _ = writeln!(s, "\n{name} by mode: {}", fmt_test(&a.result.test));
            for c in &a.result.post_hoc {
                let _ = writeln!(
                    s,
                    "  {} vs {}: d = {:.4}, p(adj) = {:.4}",
                    a.modes[c.a].name(),
                    a.modes[c.b].name(),
                    c.test.effect_size,
                    c.p_adjusted
                );
            }
        }
    }
    if let Some(t) = &r.mindless_vs_alerting {
        let _ = writeln!(s, "\nmindless vs alerting (paired): {}", fmt_test(t));
    }
    if !r.omissions.is_empty() {
        let _ = writeln!(s, "\nomitted");
        for o in &r.omissions {
            let _ = writeln!(s, "  {}: {}", o.metric, o.reason);
        }
    }
    s
}

/// Bar chart of mean distracted time and count per mode.
pub fn render_svg(r: &Report) -> String {
    let mut bars: Vec<(String, f64)> = Vec::new();
    for mode in InterventionMode::ALL {
        let vals: Vec<f64> = r
            .sessions
            .iter()
            .flat_map(|s| &s.parts)
            .filter(|p| p.mode == Some(mode))
            .map(|p| p.distracted_time)
            .collect();
        if !vals.is_empty() {
            bars.push((mode.name().into(), vals.iter().sum::<f64>() / vals.len() as f64));
        }
    }
    let (w, h, pad) = (120.0 * bars.len().max(1) as f64 + 40.0, 240.0, 30.0);
    let max = bars.iter().map(|b| b.1).fold(0.0f64, f64::max).max(1e-9);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    let _ = writeln!(s, "<text x=\"{pad}\" y=\"16\">mean distracted time (s)</text>");
    for (i, (name, v)) in bars.iter().enumerate() {
        let bh = (h - 3.0 * pad) * v / max;
        let x = pad + 120.0 * i as f64;
        let y = h - pad - bh;
        let _ = writeln!(s, "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"80\" height=\"{bh:.1}\" fill=\"#4a6fa5\"/>");
        let _ = writeln!(s, "<text x=\"{x:.1}\" y=\"{:.1}\">{v:.1}</text>", y - 4.0);
        let _ = writeln!(s, "<text x=\"{x:.1}\" y=\"{:.1}\">{name}</text>", h - pad + 16.0);
    }
    s.push_str("</svg>\n");
    s
}
