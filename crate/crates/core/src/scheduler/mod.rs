//! Intervention scheduling.
//!
//! An episode opens on activation and closes on deactivation. Inside a treatment
//! episode the effect cycles on and off every `toggle_period` seconds, starting in the
//! "on" phase. Conditions are drawn from a seeded generator so a whole session can be
//! replayed from its log.

mod log;
mod machine;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::PerturbationPattern;

pub use log::{AnnotationMark, EventKind, PartSpec, SessionEvent, SessionLog, TriggerMode};
pub use machine::{cycle_effect, cycle_index, Scheduler};

#[derive(Debug, Error)]
pub enum SchedulerError {
    #[error("invalid scheduler config: {0}")]
    InvalidConfig(String),
    #[error("an episode is already active (activated at {activated_at} s), cannot activate at {now} s")]
    AlreadyActive { activated_at: f64, now: f64 },
    #[error("no episode is active at {now} s")]
    NotActive { now: f64 },
    #[error("timestamp {got} s precedes the last logged timestamp {last} s")]
    OutOfOrder { last: f64, got: f64 },
    #[error("replay diverged at log record {index}: expected {expected}, found {found}")]
    ReplayMismatch {
        index: usize,
        expected: String,
        found: String,
    },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SchedulerError>;

/// Assigned arm of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Treatment,
    Control,
}

/// What a session part does when the participant is judged distracted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionMode {
    Mindless,
    Alerting,
    Control,
}

impl InterventionMode {
    pub const ALL: [InterventionMode; 3] = [
        InterventionMode::Mindless,
        InterventionMode::Alerting,
        InterventionMode::Control,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InterventionMode::Mindless => "mindless",
            InterventionMode::Alerting => "alerting",
            InterventionMode::Control => "control",
        }
    }
}

impl fmt::Display for InterventionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InterventionMode {
    type Err = SchedulerError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mindless" => Ok(InterventionMode::Mindless),
            "alerting" => Ok(InterventionMode::Alerting),
            "control" => Ok(InterventionMode::Control),
            other => Err(SchedulerError::InvalidConfig(format!(
                "unknown intervention mode `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub toggle_period: f64,
    pub treatment_probability: f64,
    pub mode: InterventionMode,
    pub rng_seed: u64,
    /// Draw the condition per episode. When false every episode in a mindless or
    /// alerting part is a treatment episode.
    pub randomize_condition: bool,
    /// Draw a fresh pattern on every "on" phase instead of once per episode.
    pub pattern_per_cycle: bool,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            toggle_period: 3.0,
            treatment_probability: 0.5,
            mode: InterventionMode::Mindless,
            rng_seed: 0,
            randomize_condition: true,
            pattern_per_cycle: false,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.toggle_period.is_finite() && self.toggle_period > 0.0) {
            return Err(SchedulerError::InvalidConfig(format!(
                "toggle period must be positive, got {}",
                self.toggle_period
            )));
        }
        if !(0.0..=1.0).contains(&self.treatment_probability) {
            return Err(SchedulerError::InvalidConfig(format!(
                "treatment probability must be in [0, 1], got {}",
                self.treatment_probability
            )));
        }
        Ok(())
    }
}

/// One phase change inside an episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Toggle {
    pub t: f64,
    pub enabled: bool,
    pub pattern: Option<PerturbationPattern>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionEpisode {
    pub episode_id: u64,
    pub activated_at: f64,
    pub deactivated_at: Option<f64>,
    pub condition: Condition,
    pub mode: InterventionMode,
    pub pattern: Option<PerturbationPattern>,
    pub toggle_history: Vec<Toggle>,
    #[serde(skip)]
    pub(crate) pattern_seed: Option<u64>,
}

impl InterventionEpisode {
    pub fn is_open(&self) -> bool {
        self.deactivated_at.is_none()
    }

    pub fn duration(&self) -> Option<f64> {
        self.deactivated_at.map(|end| end - self.activated_at)
    }

    /// True when this episode perturbs or alerts at all.
    pub fn intervenes(&self) -> bool {
        self.condition == Condition::Treatment && self.mode != InterventionMode::Control
    }
}
