use super::{AudioChunk, AudioError, Result};

/// Multiplies every sample by `factor`, saturating at `[-1, 1]`.
pub fn apply_gain(chunk: &AudioChunk, factor: f32) -> Result<AudioChunk> {
    if !factor.is_finite() || factor <= 0.0 {
        return Err(AudioError::InvalidArgument(format!(
            "gain factor must be finite and positive, got {factor}"
        )));
    }
    let samples = chunk.samples().iter().map(|s| s * factor).collect();
    Ok(chunk.with_samples(samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chunk_with(prefix: &[f32]) -> AudioChunk {
        let mut s = prefix.to_vec();
        s.resize(1000, 0.0);
        AudioChunk::new(s, 16_000, 0).unwrap()
    }

    #[test]
    fn doubles_samples() {
        let out = apply_gain(&chunk_with(&[0.1, -0.2]), 2.0).unwrap();
        assert_eq!(&out.samples()[..2], &[0.2, -0.4]);
    }

    #[test]
    fn unit_gain_is_identity() {
        let c = chunk_with(&[0.3, -0.7, 1.0, -1.0]);
        assert_eq!(apply_gain(&c, 1.0).unwrap(), c);
    }

    #[test]
    fn clamps_at_full_scale() {
        let out = apply_gain(&chunk_with(&[0.8, -0.9]), 2.0).unwrap();
        assert_eq!(&out.samples()[..2], &[1.0, -1.0]);
    }

    #[test]
    fn rejects_bad_factors() {
        let c = chunk_with(&[]);
        for f in [0.0, -1.0, f32::NAN, f32::INFINITY] {
            assert!(matches!(
                apply_gain(&c, f),
                Err(AudioError::InvalidArgument(_))
            ));
        }
    }

    proptest! {
        #[test]
        fn linear_below_saturation(s in -1.0f32..=1.0, f in 0.01f32..4.0) {
            let out = apply_gain(&chunk_with(&[s]), f).unwrap();
            let v = out.samples()[0];
            prop_assert!((-1.0..=1.0).contains(&v));
            if (s * f).abs() <= 1.0 {
                prop_assert_eq!(v, s * f);
            }
        }
    }
}
