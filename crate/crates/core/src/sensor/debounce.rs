use serde::{Deserialize, Serialize};

use super::AttentionLabel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionState {
    pub state: AttentionLabel,
    pub since: f64,
}

/// Debounced transition, timestamped at the first frame of the run that caused it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateChange {
    pub t: f64,
    pub state: AttentionLabel,
}

/// Flips the reported state only after `window` consecutive raw frames disagree with it.
#[derive(Debug, Clone)]
pub struct Debouncer {
    window: usize,
    current: AttentionState,
    run_start: f64,
    run_len: usize,
}

impl Debouncer {
    /// `window` is clamped to at least one frame.
    pub fn new(window: usize, initial: AttentionLabel) -> Self {
        Self {
            window: window.max(1),
            current: AttentionState {
                state: initial,
                since: f64::NEG_INFINITY,
            },
            run_start: 0.0,
            run_len: 0,
        }
    }

    pub fn state(&self) -> AttentionState {
        self.current
    }

    pub fn push(&mut self, t: f64, raw: AttentionLabel) -> Option<StateChange> {
        if raw == self.current.state {
            self.run_len = 0;
            return None;
        }
        if self.run_len == 0 {
            self.run_start = t;
        }
        self.run_len += 1;
        if self.run_len < self.window {
            return None;
        }
        self.run_len = 0;
        self.current = AttentionState {
            state: raw,
            since: self.run_start,
        };
        Some(StateChange {
            t: self.run_start,
            state: raw,
        })
    }
}

/// Batch form of [`Debouncer`] starting from the attentive state.
pub fn debounce(frames: &[(f64, AttentionLabel)], window: usize) -> Vec<StateChange> {
    let mut d = Debouncer::new(window, AttentionLabel::Attentive);
    frames.iter().filter_map(|&(t, raw)| d.push(t, raw)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use AttentionLabel::{Attentive as A, Distracted as D};
    use proptest::prelude::*;

    fn frames(labels: &[AttentionLabel]) -> Vec<(f64, AttentionLabel)> {
        labels.iter().enumerate().map(|(i, &l)| (i as f64 / 15.0, l)).collect()
    }

    #[test]
    fn three_frame_window() {
        let f = frames(&[A, A, D, A, D, D, D]);
        let events = debounce(&f, 3);
        assert_eq!(events, vec![StateChange { t: f[4].0, state: D }]);
    }

    #[test]
    fn unit_window_mirrors_raw_changes() {
        let labels = [D, D, A, D, A, A, D];
        let events = debounce(&frames(&labels), 1);
        let times: Vec<usize> = events.iter().map(|e| (e.t * 15.0).round() as usize).collect();
        assert_eq!(times, vec![0, 2, 3, 4, 6]);
    }

    #[test]
    fn alternating_never_flips_with_window_two() {
        let labels: Vec<_> = (0..40).map(|i| if i % 2 == 0 { A } else { D }).collect();
        assert!(debounce(&frames(&labels), 2).is_empty());
    }

    /// Reference: scan for runs of `k` equal opposite labels.
    fn brute_force(labels: &[AttentionLabel], k: usize) -> Vec<(usize, AttentionLabel)> {
        let mut state = A;
        let mut out = Vec::new();
        let mut i = 0;
        while i < labels.len() {
            if labels[i] != state {
                let run = labels[i..].iter().take_while(|&&l| l == labels[i]).count();
                if run >= k {
                    state = labels[i];
                    out.push((i, state));
                    i += k;
                    continue;
                }
                i += run;
            } else {
                i += 1;
            }
        }
        out
    }

    proptest! {
        #[test]
        fn matches_run_rule(bits in proptest::collection::vec(any::<bool>(), 0..120), k in 1usize..6) {
            let labels: Vec<_> = bits.iter().map(|&b| if b { D } else { A }).collect();
            let got: Vec<(usize, AttentionLabel)> = debounce(&frames(&labels), k)
                .iter()
                .map(|e| ((e.t * 15.0).round() as usize, e.state))
                .collect();
            prop_assert_eq!(got, brute_force(&labels, k));
        }
    }
}
