use super::beep::{synthesize_beep, BeepSpec, ChunkGeometry};
use super::gain::apply_gain;
use super::pitch::PitchShifter;
use super::{AudioChunk, AudioError, Effect, PerturbationPattern, Result};

/// Per-stream effect processor.
///
/// Both pitch shifters are fed every chunk so a pitch pattern that is re-enabled by the
/// on/off cycle continues from a warm state instead of restarting its delay line.
#[derive(Debug)]
pub struct AudioEngine {
    sample_rate: u32,
    beep: BeepSpec,
    pitch_down: PitchShifter,
    pitch_up: PitchShifter,
    alert_started_at: Option<u64>,
}

impl AudioEngine {
    pub fn new(sample_rate: u32) -> Result<Self> {
        Self::with_beep(sample_rate, BeepSpec::default())
    }

    pub fn with_beep(sample_rate: u32, beep: BeepSpec) -> Result<Self> {
        beep.validate()?;
        let down = PerturbationPattern::PitchDownOneTone.pitch_ratio().unwrap_or(1.0);
        let up = PerturbationPattern::PitchUpOneTone.pitch_ratio().unwrap_or(1.0);
        Ok(Self {
            sample_rate,
            beep,
            pitch_down: PitchShifter::new(down)?,
            pitch_up: PitchShifter::new(up)?,
            alert_started_at: None,
        })
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn beep(&self) -> &BeepSpec {
        &self.beep
    }

    pub fn reset(&mut self) {
        self.pitch_down.reset();
        self.pitch_up.reset();
        self.alert_started_at = None;
    }

    pub fn process_chunk(&mut self, chunk: &AudioChunk, effect: Effect) -> Result<AudioChunk> {
        if chunk.sample_rate() != self.sample_rate {
            return Err(AudioError::InvalidArgument(format!(
                "chunk sample rate {} does not match engine rate {}",
                chunk.sample_rate(),
                self.sample_rate
            )));
        }

        let down = self.pitch_down.process_chunk(chunk);
        let up = self.pitch_up.process_chunk(chunk);

        if effect != Effect::Alert {
            self.alert_started_at = None;
        }

        match effect {
            Effect::None => Ok(chunk.clone()),
            Effect::Mindless(pattern) => match pattern {
                PerturbationPattern::VolumeHalve | PerturbationPattern::VolumeDouble => {
                    apply_gain(chunk, pattern.gain().unwrap_or(1.0))
                }
                PerturbationPattern::PitchDownOneTone => Ok(down),
                PerturbationPattern::PitchUpOneTone => Ok(up),
            },
            Effect::Alert => {
                let started = *self.alert_started_at.get_or_insert(chunk.start_index());
                let elapsed =
                    chunk.start_index().saturating_sub(started) as f64 / self.sample_rate as f64;
                let overlay = synthesize_beep(
                    &self.beep,
                    elapsed,
                    ChunkGeometry {
                        start_index: chunk.start_index(),
                        length: chunk.len(),
                        sample_rate: self.sample_rate,
                    },
                );
                let mixed = chunk
                    .samples()
                    .iter()
                    .zip(overlay)
                    .map(|(s, b)| s + b)
                    .collect();
                Ok(chunk.with_samples(mixed))
            }
        }
    }
}
