use serde::{Deserialize, Serialize};

use super::{DecodeError, Role};
use crate::audio::PerturbationPattern;
use crate::scheduler::{AnnotationMark, Condition, InterventionMode, PartSpec};
use crate::sensor::{AttentionLabel, CalibrationProfile};

/// What the audio client should play while an episode is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientEffect {
    /// Cycle `pattern` on and off every `toggle_period` seconds.
    Mindless,
    /// Beep alert.
    Alert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReveal {
    pub episode: u64,
    pub condition: Condition,
    pub mode: InterventionMode,
    pub activated_at: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deactivated_at: Option<f64>,
}

/// Type-specific message fields; the variant name is the `type` field on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Body {
    Hello {
        role: Role,
        /// A sensor that already holds a calibration profile.
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        calibrated: bool,
    },
    Activate {
        episode: u64,
        effect: ClientEffect,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pattern: Option<PerturbationPattern>,
        toggle_period: f64,
    },
    Deactivate {
        episode: u64,
    },
    AttentionState {
        state: AttentionLabel,
    },
    Annotation {
        mark: AnnotationMark,
        /// Set on the server's acknowledgment.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        episode: Option<u64>,
    },
    CalibrationStart {},
    CalibrationPoint {
        yaw: f64,
        pitch: f64,
    },
    CalibrationDone {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        profile: Option<CalibrationProfile>,
    },
    ModeSet {
        part: usize,
        mode: InterventionMode,
    },
    ConditionReveal {
        parts: Vec<PartSpec>,
        episodes: Vec<EpisodeReveal>,
    },
    SessionEnd {},
    Error {
        reason: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ref_seq: Option<u64>,
    },
}

impl Body {
    pub fn type_name(&self) -> &'static str {
        match self {
            Body::Hello { .. } => "hello",
            Body::Activate { .. } => "activate",
            Body::Deactivate { .. } => "deactivate",
            Body::AttentionState { .. } => "attention_state",
            Body::Annotation { .. } => "annotation",
            Body::CalibrationStart {} => "calibration_start",
            Body::CalibrationPoint { .. } => "calibration_point",
            Body::CalibrationDone { .. } => "calibration_done",
            Body::ModeSet { .. } => "mode_set",
            Body::ConditionReveal { .. } => "condition_reveal",
            Body::SessionEnd {} => "session_end",
            Body::Error { .. } => "error",
        }
    }
}

/// One control-plane frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    /// Sender clock, seconds.
    pub t: f64,
    /// Strictly increasing per sender and connection.
    pub seq: u64,
    #[serde(flatten)]
    pub body: Body,
}

impl Message {
    pub fn new(t: f64, seq: u64, body: Body) -> Self {
        Self { t, seq, body }
    }

    /// Canonical UTF-8 JSON text, one message per frame.
    pub fn encode(&self) -> Vec<u8> {
        self.encode_text().into_bytes()
    }

    pub fn encode_text(&self) -> String {
        serde_json::to_string(self).expect("messages always serialize")
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let text = std::str::from_utf8(bytes).map_err(|e| DecodeError {
            offset: e.valid_up_to(),
            reason: format!("invalid UTF-8: {e}"),
        })?;
        let message: Message = serde_json::from_str(text).map_err(|e| DecodeError {
            offset: byte_offset(text, e.line(), e.column()),
            reason: e.to_string(),
        })?;
        if !message.t.is_finite() {
            return Err(DecodeError {
                offset: 0,
                reason: format!("timestamp {} is not finite", message.t),
            });
        }
        Ok(message)
    }
}

/// Converts serde_json's 1-based line/column into a byte offset.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}
