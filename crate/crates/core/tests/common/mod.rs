//! Independent oracles shared by the integration suites. Nothing here calls into the
//! code paths it checks.
#![allow(dead_code)]

use std::f64::consts::PI;

/// Power of `samples` at frequency `f` via the Goertzel recurrence, Hann-weighted.
pub fn tone_power(samples: &[f32], rate: f64, f: f64) -> f64 {
    let n = samples.len();
    let w = 2.0 * PI * f / rate;
    let coeff = 2.0 * w.cos();
    let (mut s1, mut s2) = (0.0f64, 0.0f64);
    for (i, &x) in samples.iter().enumerate() {
        let hann = 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos();
        let s0 = x as f64 * hann + coeff * s1 - s2;
        s2 = s1;
        s1 = s0;
    }
    s1 * s1 + s2 * s2 - coeff * s1 * s2
}

/// Frequency of the strongest spectral peak in `[lo, hi]` Hz: 1 Hz grid scan followed by
/// a 0.05 Hz refinement around the best grid point.
pub fn dominant_frequency(samples: &[f32], rate: f64, lo: f64, hi: f64) -> f64 {
    let mut best = (lo, f64::MIN);
    let mut f = lo;
    while f <= hi {
        let p = tone_power(samples, rate, f);
        if p > best.1 {
            best = (f, p);
        }
        f += 1.0;
    }
    let center = best.0;
    let mut f = center - 1.0;
    while f <= center + 1.0 {
        let p = tone_power(samples, rate, f);
        if p > best.1 {
            best = (f, p);
        }
        f += 0.05;
    }
    best.0
}

pub fn sine(freq: f64, amplitude: f64, len: usize, rate: f64) -> Vec<f32> {
    (0..len)
        .map(|n| (amplitude * (2.0 * PI * freq * n as f64 / rate).sin()) as f32)
        .collect()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample variance with n - 1 in the denominator, two-pass.
pub fn sample_var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)
}

/// Two-sided Student-t p-value through statrs.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    let dist = StudentsT::new(0.0, 1.0, df).unwrap();
    2.0 * (1.0 - dist.cdf(t.abs()))
}

pub fn f_upper_p(f: f64, df1: f64, df2: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, FisherSnedecor};
    FisherSnedecor::new(df1, df2).unwrap().sf(f)
}

pub fn chi2_upper_p(x: f64, df: f64) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    ChiSquared::new(df).unwrap().sf(x)
}

/// Tiny deterministic generator for randomized instances (xorshift64*).
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_f64(&mut self) -> f64 {
        self.0 ^= self.0 >> 12;
        self.0 ^= self.0 << 25;
        self.0 ^= self.0 >> 27;
        let v = self.0.wrapping_mul(0x2545_F491_4F6C_DD1D);
        (v >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Box-Muller normal draw.
    pub fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        let u1 = self.next_f64().max(1e-300);
        let u2 = self.next_f64();
        mean + sd * (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }
}
