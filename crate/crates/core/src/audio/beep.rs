use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{AudioError, Result};

/// Beep alert timing and tone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeepSpec {
    /// Burst length, seconds.
    pub duration: f64,
    /// Burst repetition period, seconds.
    pub period: f64,
    pub frequency: f64,
    pub amplitude: f64,
    /// Linear fade-in / fade-out length, seconds.
    pub ramp: f64,
}

impl Default for BeepSpec {
    fn default() -> Self {
        Self {
            duration: 0.1,
            period: 3.0,
            frequency: 1000.0,
            amplitude: 0.5,
            ramp: 0.005,
        }
    }
}

impl BeepSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.duration > 0.0
            && self.duration < self.period
            && self.ramp >= 0.0
            && 2.0 * self.ramp < self.duration
            && self.frequency > 0.0
            && (0.0..=1.0).contains(&self.amplitude);
        if ok {
            Ok(())
        } else {
            Err(AudioError::InvalidArgument(format!("invalid beep spec {self:?}")))
        }
    }

    /// Overlay value at `t` seconds after activation.
    pub fn sample_at(&self, t: f64) -> f32 {
        if t < 0.0 {
            return 0.0;
        }
        let local = t % self.period;
        if local >= self.duration {
            return 0.0;
        }
        let envelope = if self.ramp > 0.0 {
            (local / self.ramp).min((self.duration - local) / self.ramp).min(1.0)
        } else {
            1.0
        };
        (self.amplitude * envelope * (2.0 * PI * self.frequency * local).sin()) as f32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkGeometry {
    pub start_index: u64,
    pub length: usize,
    pub sample_rate: u32,
}

/// Additive beep overlay for one chunk whose first sample sits
/// `time_since_activation` seconds after the alert was activated.
pub fn synthesize_beep(spec: &BeepSpec, time_since_activation: f64, geometry: ChunkGeometry) -> Vec<f32> {
    let dt = 1.0 / geometry.sample_rate as f64;
    (0..geometry.length)
        .map(|i| spec.sample_at(time_since_activation + i as f64 * dt))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometry() -> ChunkGeometry {
        ChunkGeometry {
            start_index: 0,
            length: 1000,
            sample_rate: 16_000,
        }
    }

    fn peak(v: &[f32]) -> f32 {
        v.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }

    #[test]
    fn default_spec_is_valid() {
        BeepSpec::default().validate().unwrap();
        let bad = BeepSpec {
            duration: 3.0,
            ..BeepSpec::default()
        };
        assert!(bad.validate().is_err());
        let bad_ramp = BeepSpec {
            ramp: 0.06,
            ..BeepSpec::default()
        };
        assert!(bad_ramp.validate().is_err());
    }

    #[test]
    fn burst_in_first_tenth_of_a_second() {
        let spec = BeepSpec::default();
        let overlay = synthesize_beep(&spec, 0.0, geometry());
        // first 0.0625 s are inside the burst
        assert!(peak(&overlay) > 0.4);
        assert!(peak(&overlay) <= 0.5 + 1e-6);
    }

    #[test]
    fn silent_between_bursts() {
        let spec = BeepSpec::default();
        for t in [0.1, 0.5, 1.7, 2.9] {
            let g = ChunkGeometry { length: 1000, ..geometry() };
            let overlay = synthesize_beep(&spec, t, g);
            // chunk ending before 3.0 s
            if t + 0.0625 <= 3.0 {
                assert_eq!(peak(&overlay), 0.0, "t = {t}");
            }
        }
    }

    #[test]
    fn burst_repeats_every_period() {
        let spec = BeepSpec::default();
        let first = synthesize_beep(&spec, 0.0, geometry());
        let again = synthesize_beep(&spec, 3.0, geometry());
        assert!(peak(&again) > 0.4);
        for (a, b) in first.iter().zip(&again) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn burst_is_exactly_duration_long() {
        let spec = BeepSpec::default();
        let g = ChunkGeometry {
            length: 16_000,
            ..geometry()
        };
        let overlay = synthesize_beep(&spec, 0.0, g);
        let last_nonzero = overlay.iter().rposition(|s| *s != 0.0).unwrap();
        assert!(last_nonzero < 1600);
        assert!(last_nonzero > 1590);
    }
}
