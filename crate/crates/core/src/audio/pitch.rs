//! Streaming pitch shifter.
//!
//! A phase vocoder stretches the signal in time by `ratio` and a linear-interpolation
//! resampler reads the stretched signal back at `ratio` samples per output sample, so
//! the duration is unchanged and every frequency is scaled by `ratio`.
//!
//! Synthesis frame `k` is placed at `round(k * hop * ratio)`, so the synthesis hop
//! alternates between neighbouring integers and the average stretch is exactly
//! `ratio`. Overlap-add is normalised by the accumulated squared window.
//!
//! Output is delayed by a constant `window + hop` samples; each call returns exactly as
//! many samples as it was given.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{AudioChunk, AudioError, Result};

pub const DEFAULT_WINDOW: usize = 1024;
pub const DEFAULT_HOP: usize = 256;

const MIN_RATIO: f64 = 0.5;
const MAX_RATIO: f64 = 2.0;
const WINDOW_SUM_FLOOR: f32 = 1e-3;

pub struct PitchShifter {
    ratio: f64,
    window_len: usize,
    hop: usize,
    window: Vec<f32>,
    fft: Arc<dyn Fft<f32>>,
    ifft: Arc<dyn Fft<f32>>,
    scratch: Vec<Complex<f32>>,
    spectrum: Vec<Complex<f32>>,

    // analysis side
    input: Vec<f32>,
    input_base: u64,
    frame: u64,
    prev_phase: Vec<f64>,
    synth_phase: Vec<f64>,

    // overlap-add buffer of the stretched signal, starting at `stretch_base`
    accum: Vec<f32>,
    weight: Vec<f32>,
    stretch_base: u64,
    prev_position: u64,

    // resampler
    next_output: u64,
    output: VecDeque<f32>,
}

impl std::fmt::Debug for PitchShifter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PitchShifter")
            .field("ratio", &self.ratio)
            .field("window_len", &self.window_len)
            .field("hop", &self.hop)
            .field("frame", &self.frame)
            .finish_non_exhaustive()
    }
}

impl PitchShifter {
    pub fn new(ratio: f64) -> Result<Self> {
        Self::with_geometry(ratio, DEFAULT_WINDOW, DEFAULT_HOP)
    }

    pub fn with_geometry(ratio: f64, window_len: usize, hop: usize) -> Result<Self> {
        if !(MIN_RATIO..=MAX_RATIO).contains(&ratio) {
            return Err(AudioError::InvalidArgument(format!(
                "pitch ratio {ratio} outside [{MIN_RATIO}, {MAX_RATIO}]"
            )));
        }
        if window_len < 4 || hop == 0 || hop > window_len / 2 {
            return Err(AudioError::InvalidArgument(format!(
                "window {window_len} / hop {hop} is not a usable vocoder geometry"
            )));
        }
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(window_len);
        let ifft = planner.plan_fft_inverse(window_len);
        let scratch_len = fft
            .get_inplace_scratch_len()
            .max(ifft.get_inplace_scratch_len());
        let window = (0..window_len)
            .map(|n| (0.5 - 0.5 * (2.0 * PI * n as f64 / window_len as f64).cos()) as f32)
            .collect();
        let bins = window_len / 2 + 1;
        let mut shifter = Self {
            ratio,
            window_len,
            hop,
            window,
            fft,
            ifft,
            scratch: vec![Complex::default(); scratch_len],
            spectrum: vec![Complex::default(); window_len],
            input: Vec::new(),
            input_base: 0,
            frame: 0,
            prev_phase: vec![0.0; bins],
            synth_phase: vec![0.0; bins],
            accum: Vec::new(),
            weight: Vec::new(),
            stretch_base: 0,
            prev_position: 0,
            next_output: 0,
            output: VecDeque::new(),
        };
        shifter.reset();
        Ok(shifter)
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    /// Constant input-to-output delay in samples.
    pub fn latency(&self) -> usize {
        self.window_len + self.hop
    }

    /// Returns the shifter to its freshly constructed state.
    pub fn reset(&mut self) {
        self.input.clear();
        self.input_base = 0;
        self.frame = 0;
        self.prev_phase.iter_mut().for_each(|p| *p = 0.0);
        self.synth_phase.iter_mut().for_each(|p| *p = 0.0);
        self.accum.clear();
        self.weight.clear();
        self.stretch_base = 0;
        self.prev_position = 0;
        self.next_output = 0;
        self.output.clear();
        self.output.extend(std::iter::repeat_n(0.0, self.latency()));
    }

    /// Shifts one chunk of a continuous stream.
    pub fn process_chunk(&mut self, chunk: &AudioChunk) -> AudioChunk {
        let out = self.process(chunk.samples());
        chunk.with_samples(out)
    }

    /// Streams `samples` through the shifter, returning the same number of samples.
    pub fn process(&mut self, samples: &[f32]) -> Vec<f32> {
        self.input.extend_from_slice(samples);
        self.run_frames();
        self.resample();
        let n = samples.len();
        if self.output.len() < n {
            // Only reachable with a geometry whose latency is below the frame span.
            self.output.extend(std::iter::repeat_n(0.0, n - self.output.len()));
        }
        self.output.drain(..n).map(|s| s.clamp(-1.0, 1.0)).collect()
    }

    fn synthesis_position(&self, frame: u64) -> u64 {
        (frame as f64 * self.hop as f64 * self.ratio).round() as u64
    }

    fn run_frames(&mut self) {
        let n = self.window_len;
        let bins = n / 2 + 1;
        loop {
            let start = self.frame * self.hop as u64;
            let offset = (start - self.input_base) as usize;
            if offset + n > self.input.len() {
                break;
            }

            for (i, slot) in self.spectrum.iter_mut().enumerate() {
                *slot = Complex::new(self.input[offset + i] * self.window[i], 0.0);
            }
            self.fft
                .process_with_scratch(&mut self.spectrum, &mut self.scratch);

            let position = self.synthesis_position(self.frame);
            let synth_hop = (position - self.prev_position) as f64;
            let analysis_hop = self.hop as f64;
            for b in 0..bins {
                let c = self.spectrum[b];
                let magnitude = c.norm() as f64;
                let phase = (c.im as f64).atan2(c.re as f64);
                if self.frame == 0 {
                    self.synth_phase[b] = phase;
                } else {
                    let bin_freq = 2.0 * PI * b as f64 / n as f64;
                    let deviation =
                        wrap_phase(phase - self.prev_phase[b] - bin_freq * analysis_hop);
                    let inst_freq = bin_freq + deviation / analysis_hop;
                    self.synth_phase[b] = wrap_phase(self.synth_phase[b] + inst_freq * synth_hop);
                }
                self.prev_phase[b] = phase;
                let (s, c) = self.synth_phase[b].sin_cos();
                self.spectrum[b] = Complex::new((magnitude * c) as f32, (magnitude * s) as f32);
            }
            // Hermitian symmetry for a real inverse.
            for b in bins..n {
                self.spectrum[b] = self.spectrum[n - b].conj();
            }
            self.spectrum[0].im = 0.0;
            self.spectrum[n / 2].im = 0.0;
            self.ifft
                .process_with_scratch(&mut self.spectrum, &mut self.scratch);

            let base = (position - self.stretch_base) as usize;
            if self.accum.len() < base + n {
                self.accum.resize(base + n, 0.0);
                self.weight.resize(base + n, 0.0);
            }
            let scale = 1.0 / n as f32;
            for i in 0..n {
                let w = self.window[i];
                self.accum[base + i] += self.spectrum[i].re * scale * w;
                self.weight[base + i] += w * w;
            }

            self.prev_position = position;
            self.frame += 1;
        }

        // Drop input the next frame no longer needs.
        let next_start = self.frame * self.hop as u64;
        let consumed = (next_start - self.input_base) as usize;
        if consumed > 0 {
            self.input.drain(..consumed.min(self.input.len()));
            self.input_base = next_start;
        }
    }

    fn resample(&mut self) {
        // Stretched samples below the next frame's position receive no more overlap.
        let finalized = self.synthesis_position(self.frame);
        loop {
            let pos = self.next_output as f64 * self.ratio;
            let left = pos.floor() as u64;
            if left + 1 >= finalized {
                break;
            }
            let frac = (pos - left as f64) as f32;
            let a = self.stretched_at(left);
            let b = self.stretched_at(left + 1);
            self.output.push_back(a + (b - a) * frac);
            self.next_output += 1;
        }

        let keep_from = (self.next_output as f64 * self.ratio).floor() as u64;
        if keep_from > self.stretch_base {
            let drop = ((keep_from - self.stretch_base) as usize).min(self.accum.len());
            self.accum.drain(..drop);
            self.weight.drain(..drop);
            self.stretch_base += drop as u64;
        }
    }

    fn stretched_at(&self, index: u64) -> f32 {
        let i = (index - self.stretch_base) as usize;
        match (self.accum.get(i), self.weight.get(i)) {
            (Some(&a), Some(&w)) if w > WINDOW_SUM_FLOOR => a / w,
            _ => 0.0,
        }
    }
}

fn wrap_phase(phase: f64) -> f64 {
    let two_pi = 2.0 * PI;
    phase - two_pi * ((phase + PI) / two_pi).floor()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, len: usize, rate: f64) -> Vec<f32> {
        (0..len)
            .map(|n| (0.5 * (2.0 * PI * freq * n as f64 / rate).sin()) as f32)
            .collect()
    }

    #[test]
    fn rejects_out_of_range_ratio() {
        for r in [0.49, 2.01, 0.0, -1.0, f64::NAN] {
            assert!(PitchShifter::new(r).is_err(), "ratio {r}");
        }
        assert!(PitchShifter::new(0.5).is_ok());
        assert!(PitchShifter::new(2.0).is_ok());
    }

    #[test]
    fn output_length_matches_input() {
        let mut s = PitchShifter::new(1.2).unwrap();
        for len in [1000, 1, 17, 4096, 1000] {
            assert_eq!(s.process(&vec![0.1; len]).len(), len);
        }
    }

    #[test]
    fn unit_ratio_reconstructs_delayed_input() {
        let mut s = PitchShifter::new(1.0).unwrap();
        let input = tone(440.0, 16_000, 16_000.0);
        let mut out = Vec::new();
        for c in input.chunks(1000) {
            out.extend(s.process(c));
        }
        let lat = s.latency();
        // skip the start-up region where the window sum is still building
        for n in (lat + 2048)..out.len() {
            assert!(
                (out[n] - input[n - lat]).abs() < 1e-3,
                "sample {n}: {} vs {}",
                out[n],
                input[n - lat]
            );
        }
    }

    #[test]
    fn reset_gives_identical_output() {
        let input = tone(300.0, 8000, 16_000.0);
        let mut s = PitchShifter::new(2f64.powf(2.0 / 12.0)).unwrap();
        let first: Vec<f32> = input.chunks(1000).flat_map(|c| s.process(c)).collect();
        s.reset();
        let second: Vec<f32> = input.chunks(1000).flat_map(|c| s.process(c)).collect();
        assert_eq!(first, second);
    }

    #[test]
    fn chunking_does_not_change_output() {
        let input = tone(523.0, 12_000, 16_000.0);
        let mut a = PitchShifter::new(0.9).unwrap();
        let mut b = PitchShifter::new(0.9).unwrap();
        let whole: Vec<f32> = input.chunks(1000).flat_map(|c| a.process(c)).collect();
        let odd: Vec<f32> = input.chunks(333).flat_map(|c| b.process(c)).collect();
        assert_eq!(whole, odd);
    }

    #[test]
    fn wrap_phase_range() {
        for k in -20..20 {
            let p = wrap_phase(k as f64 * 0.77);
            assert!((-PI..PI).contains(&p));
        }
    }
}
