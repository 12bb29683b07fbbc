use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Condition, InterventionMode, Result, SchedulerError};
use crate::audio::PerturbationPattern;
use crate::control::{Message, Role};
use crate::sensor::{AttentionLabel, CalibrationProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationMark {
    DistractionStart,
    Refocus,
}

/// Who opens and closes episodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerMode {
    /// Sensor attention-state changes drive episodes.
    Auto,
    /// Console annotations drive episodes, each with a concealed random condition.
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartSpec {
    pub part_id: usize,
    pub mode: InterventionMode,
    pub duration: f64,
}

/// Record payloads. Serialized with a `kind` tag next to the record timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    ConditionAssigned {
        episode: u64,
        condition: Condition,
    },
    PatternSelected {
        episode: u64,
        pattern: PerturbationPattern,
    },
    Activate {
        episode: u64,
        condition: Condition,
        mode: InterventionMode,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pattern: Option<PerturbationPattern>,
    },
    Deactivate {
        episode: u64,
    },
    ToggleOn {
        episode: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pattern: Option<PerturbationPattern>,
    },
    ToggleOff {
        episode: u64,
    },
    Annotation {
        mark: AnnotationMark,
    },
    DetectionChange {
        state: AttentionLabel,
    },
    SessionStart {
        session_id: String,
        trigger: TriggerMode,
        seed: u64,
        blinded: bool,
        parts: Vec<PartSpec>,
    },
    PartStart {
        part: usize,
        mode: InterventionMode,
    },
    PartEnd {
        part: usize,
    },
    PartDegraded {
        part: usize,
        role: Role,
    },
    CalibrationDone {
        profile: CalibrationProfile,
    },
    /// A message as received from a connection.
    Received {
        conn: u64,
        /// Absent until the connection has declared a role.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        from: Option<Role>,
        message: Message,
    },
    /// A message the server sent.
    Sent {
        conn: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        to: Option<Role>,
        message: Message,
    },
    SessionEnd {},
}

impl EventKind {
    /// Events produced by the scheduler state machine itself.
    pub fn is_scheduler_event(&self) -> bool {
        matches!(
            self,
            EventKind::ConditionAssigned { .. }
                | EventKind::PatternSelected { .. }
                | EventKind::Activate { .. }
                | EventKind::Deactivate { .. }
                | EventKind::ToggleOn { .. }
                | EventKind::ToggleOff { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub t: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl SessionEvent {
    pub fn new(t: f64, kind: EventKind) -> Self {
        Self { t, kind }
    }
}

/// Append-only, time-ordered event log. Stored as one JSON object per line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionLog {
    events: Vec<SessionEvent>,
}

impl SessionLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, event: SessionEvent) -> Result<()> {
        if !event.t.is_finite() {
            return Err(SchedulerError::Parse {
                line: self.events.len() + 1,
                reason: format!("non-finite timestamp {}", event.t),
            });
        }
        if let Some(last) = self.events.last() {
            if event.t < last.t {
                return Err(SchedulerError::OutOfOrder {
                    last: last.t,
                    got: event.t,
                });
            }
        }
        self.events.push(event);
        Ok(())
    }

    pub fn extend(&mut self, events: impl IntoIterator<Item = SessionEvent>) -> Result<()> {
        for e in events {
            self.append(e)?;
        }
        Ok(())
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn last_time(&self) -> Option<f64> {
        self.events.last().map(|e| e.t)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("session events always serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        Self::from_reader(text.as_bytes())
    }

    pub fn from_reader(reader: impl std::io::Read) -> Result<Self> {
        let mut log = SessionLog::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let event: SessionEvent =
                serde_json::from_str(&line).map_err(|e| SchedulerError::Parse {
                    line: i + 1,
                    reason: e.to_string(),
                })?;
            log.append(event).map_err(|e| SchedulerError::Parse {
                line: i + 1,
                reason: e.to_string(),
            })?;
        }
        Ok(log)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(fs::File::open(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }
}

impl<'a> IntoIterator for &'a SessionLog {
    type Item = &'a SessionEvent;
    type IntoIter = std::slice::Iter<'a, SessionEvent>;

    fn into_iter(self) -> Self::IntoIter {
        self.events.iter()
    }
}
