//! Chunked audio processing.
//!
//! Audio is handled as fixed-size mono chunks of `sample_rate / 16` samples
//! (1000 samples, 62.5 ms at 16 kHz). Every effect preserves the chunk length and
//! keeps samples inside `[-1, 1]`.

mod beep;
mod engine;
mod gain;
mod pitch;
mod wav;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU8, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use beep::{synthesize_beep, BeepSpec, ChunkGeometry};
pub use engine::AudioEngine;
pub use gain::apply_gain;
pub use pitch::PitchShifter;
pub use wav::{read_pcm, read_raw_frame, write_pcm, write_raw_frame};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;
pub const CHUNKS_PER_SECOND: u32 = 16;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AudioError>;

/// Samples per chunk for a sample rate.
pub fn chunk_len(sample_rate: u32) -> usize {
    (sample_rate / CHUNKS_PER_SECOND) as usize
}

/// One fixed-duration buffer of mono samples.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioChunk {
    samples: Vec<f32>,
    sample_rate: u32,
    start_index: u64,
    valid_len: usize,
}

impl AudioChunk {
    pub fn new(samples: Vec<f32>, sample_rate: u32, start_index: u64) -> Result<Self> {
        if sample_rate == 0 || !sample_rate.is_multiple_of(CHUNKS_PER_SECOND) {
            return Err(AudioError::InvalidArgument(format!(
                "sample rate {sample_rate} is not a positive multiple of {CHUNKS_PER_SECOND}"
            )));
        }
        let expected = chunk_len(sample_rate);
        if samples.len() != expected {
            return Err(AudioError::InvalidArgument(format!(
                "chunk has {} samples, expected {expected}",
                samples.len()
            )));
        }
        if let Some(bad) = samples.iter().find(|s| !(-1.0..=1.0).contains(*s)) {
            return Err(AudioError::InvalidArgument(format!(
                "sample {bad} outside [-1, 1]"
            )));
        }
        let valid_len = samples.len();
        Ok(Self {
            samples,
            sample_rate,
            start_index,
            valid_len,
        })
    }

    /// A final chunk holding fewer than a chunk's worth of real samples;
    /// the rest is zero padding.
    pub fn partial(valid: &[f32], sample_rate: u32, start_index: u64) -> Result<Self> {
        let len = chunk_len(sample_rate);
        if valid.len() > len {
            return Err(AudioError::InvalidArgument(format!(
                "{} samples do not fit in a {len}-sample chunk",
                valid.len()
            )));
        }
        let mut samples = valid.to_vec();
        samples.resize(len, 0.0);
        let mut chunk = Self::new(samples, sample_rate, start_index)?;
        chunk.valid_len = valid.len();
        Ok(chunk)
    }

    pub fn silence(sample_rate: u32, start_index: u64) -> Result<Self> {
        Self::new(vec![0.0; chunk_len(sample_rate)], sample_rate, start_index)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn start_index(&self) -> u64 {
        self.start_index
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of real (non-padding) samples.
    pub fn valid_len(&self) -> usize {
        self.valid_len
    }

    pub fn is_partial(&self) -> bool {
        self.valid_len < self.samples.len()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Same geometry and padding flag, new sample values. Values are clamped to `[-1, 1]`.
    pub(crate) fn with_samples(&self, mut samples: Vec<f32>) -> Self {
        debug_assert_eq!(samples.len(), self.samples.len());
        for s in &mut samples {
            *s = s.clamp(-1.0, 1.0);
        }
        Self {
            samples,
            sample_rate: self.sample_rate,
            start_index: self.start_index,
            valid_len: self.valid_len,
        }
    }
}

/// One of the four perturbations applied to the voice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationPattern {
    VolumeHalve,
    VolumeDouble,
    PitchDownOneTone,
    PitchUpOneTone,
}

impl PerturbationPattern {
    pub const ALL: [PerturbationPattern; 4] = [
        PerturbationPattern::VolumeHalve,
        PerturbationPattern::VolumeDouble,
        PerturbationPattern::PitchDownOneTone,
        PerturbationPattern::PitchUpOneTone,
    ];

    pub fn index(self) -> usize {
        match self {
            PerturbationPattern::VolumeHalve => 0,
            PerturbationPattern::VolumeDouble => 1,
            PerturbationPattern::PitchDownOneTone => 2,
            PerturbationPattern::PitchUpOneTone => 3,
        }
    }

    /// Linear gain factor for the volume patterns.
    pub fn gain(self) -> Option<f32> {
        match self {
            PerturbationPattern::VolumeHalve => Some(0.5),
            PerturbationPattern::VolumeDouble => Some(2.0),
            _ => None,
        }
    }

    /// Frequency ratio for the pitch patterns: a whole tone is two semitones.
    pub fn pitch_ratio(self) -> Option<f64> {
        match self {
            PerturbationPattern::PitchDownOneTone => Some(2f64.powf(-2.0 / 12.0)),
            PerturbationPattern::PitchUpOneTone => Some(2f64.powf(2.0 / 12.0)),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PerturbationPattern::VolumeHalve => "volume_halve",
            PerturbationPattern::VolumeDouble => "volume_double",
            PerturbationPattern::PitchDownOneTone => "pitch_down_one_tone",
            PerturbationPattern::PitchUpOneTone => "pitch_up_one_tone",
        }
    }
}

impl fmt::Display for PerturbationPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PerturbationPattern {
    type Err = AudioError;

    fn from_str(s: &str) -> Result<Self> {
        let normalized = s.trim().to_ascii_lowercase().replace('-', "_");
        let pattern = match normalized.as_str() {
            "volume_halve" | "halve" => PerturbationPattern::VolumeHalve,
            "volume_double" | "double" => PerturbationPattern::VolumeDouble,
            "pitch_down_one_tone" | "pitch_down" => PerturbationPattern::PitchDownOneTone,
            "pitch_up_one_tone" | "pitch_up" => PerturbationPattern::PitchUpOneTone,
            _ => {
                return Err(AudioError::InvalidArgument(format!(
                    "unknown perturbation pattern `{s}`"
                )))
            }
        };
        Ok(pattern)
    }
}

/// What the engine does to the current chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Effect {
    #[default]
    None,
    Mindless(PerturbationPattern),
    Alert,
}

impl Effect {
    fn encode(self) -> u8 {
        match self {
            Effect::None => 0,
            Effect::Mindless(p) => 1 + p.index() as u8,
            Effect::Alert => 5,
        }
    }

    fn decode(code: u8) -> Self {
        match code {
            1..=4 => Effect::Mindless(PerturbationPattern::ALL[(code - 1) as usize]),
            5 => Effect::Alert,
            _ => Effect::None,
        }
    }
}

/// Lock-free single-value mailbox: the control side publishes, the audio side reads
/// once per chunk.
#[derive(Debug, Default)]
pub struct SharedEffect(AtomicU8);

impl SharedEffect {
    pub fn new(effect: Effect) -> Self {
        Self(AtomicU8::new(effect.encode()))
    }

    pub fn publish(&self, effect: Effect) {
        self.0.store(effect.encode(), Ordering::Release);
    }

    pub fn load(&self) -> Effect {
        Effect::decode(self.0.load(Ordering::Acquire))
    }
}
