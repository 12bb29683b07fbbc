use serde::{Deserialize, Serialize};

use super::hypothesis::{unpaired_t_test, GroupStats, TestResult};
use super::{AnalyticsError, Result};
use crate::audio::PerturbationPattern;
use crate::scheduler::{AnnotationMark, Condition, EventKind, InterventionMode, SessionLog};

/// One annotated distraction, from `distraction_start` to `refocus`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub start: f64,
    pub end: f64,
    /// Condition of the intervention episode the scheduler opened for it, if any.
    pub condition: Option<Condition>,
    pub mode: Option<InterventionMode>,
    /// Pattern of the last "on" phase at or before the refocus.
    pub last_pattern: Option<PerturbationPattern>,
    /// Pattern of every "on" phase during the distraction.
    pub patterns: Vec<PerturbationPattern>,
    pub part: Option<usize>,
    /// No refocus was annotated: `end` is the part or log end.
    pub open: bool,
}

impl Episode {
    pub fn recovery_time(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, Copy)]
struct Intervention {
    condition: Condition,
    mode: InterventionMode,
}

/// Pairs each `distraction_start` annotation with the next `refocus`.
///
/// A distraction still open at a part end, session end or the end of the log becomes an
/// open episode truncated there.
pub fn extract_episodes(log: &SessionLog) -> Result<Vec<Episode>> {
    let mut out = Vec::new();
    let mut current: Option<Episode> = None;
    let mut intervention: Option<Intervention> = None;
    let mut part = None;

    for e in log.events() {
        match &e.kind {
            EventKind::PartStart { part: p, .. } => part = Some(*p),
            EventKind::Activate {
                condition, mode, ..
            } => {
                let iv = Intervention {
                    condition: *condition,
                    mode: *mode,
                };
                intervention = Some(iv);
                if let Some(ep) = current.as_mut() {
                    if ep.condition.is_none() {
                        ep.condition = Some(iv.condition);
                        ep.mode = Some(iv.mode);
                    }
                }
            }
            EventKind::Deactivate { .. } => intervention = None,
            EventKind::ToggleOn {
                pattern: Some(p), ..
            } => {
                if let Some(ep) = current.as_mut() {
                    ep.patterns.push(*p);
                    ep.last_pattern = Some(*p);
                }
            }
            EventKind::Annotation {
                mark: AnnotationMark::DistractionStart,
            } => {
                if let Some(open) = &current {
                    return Err(AnalyticsError::MalformedLog {
                        t: e.t,
                        reason: format!(
                            "second distraction_start without refocus after {}",
                            open.start
                        ),
                    });
                }
                current = Some(Episode {
                    start: e.t,
                    end: e.t,
                    condition: intervention.map(|i| i.condition),
                    mode: intervention.map(|i| i.mode),
                    last_pattern: None,
                    patterns: Vec::new(),
                    part,
                    open: false,
                });
            }
            EventKind::Annotation {
                mark: AnnotationMark::Refocus,
            } => {
                let Some(mut ep) = current.take() else {
                    return Err(AnalyticsError::MalformedLog {
                        t: e.t,
                        reason: "refocus without distraction_start".into(),
                    });
                };
                ep.end = e.t;
                out.push(ep);
            }
            EventKind::PartEnd { .. } | EventKind::SessionEnd {} => {
                if let Some(mut ep) = current.take() {
                    ep.end = e.t;
                    ep.open = true;
                    out.push(ep);
                }
            }
            _ => {}
        }
    }
    if let Some(mut ep) = current {
        ep.end = log.last_time().unwrap_or(ep.start);
        ep.open = true;
        out.push(ep);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryStats {
    pub treatment: GroupStats,
    pub control: GroupStats,
    /// Treatment against control.
    pub test: TestResult,
}

/// Recovery times of closed episodes grouped by condition, with a pooled t-test.
pub fn recovery_time_stats(episodes: &[Episode]) -> Result<RecoveryStats> {
    let times = |c| -> Vec<f64> {
        episodes
            .iter()
            .filter(|e| !e.open && e.condition == Some(c))
            .map(Episode::recovery_time)
            .collect()
    };
    let (treatment, control) = (times(Condition::Treatment), times(Condition::Control));
    for (name, g) in [("treatment", &treatment), ("control", &control)] {
        if g.len() < 2 {
            return Err(AnalyticsError::InsufficientData(format!(
                "{name} group has {} closed episodes, needs 2",
                g.len()
            )));
        }
    }
    Ok(RecoveryStats {
        test: unpaired_t_test(&treatment, &control)?,
        treatment: GroupStats::of(&treatment)?,
        control: GroupStats::of(&control)?,
    })
}
