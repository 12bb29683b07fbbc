use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::log::{EventKind, SessionEvent, SessionLog};
use super::{
    Condition, InterventionEpisode, InterventionMode, Result, SchedulerConfig, SchedulerError,
    Toggle,
};
use crate::audio::{Effect, PerturbationPattern};

// Absorbs rounding when `now` sits exactly on a cycle boundary.
const BOUNDARY_EPS: f64 = 1e-9;

/// Index of the on/off cycle containing `now`; cycle 0 starts at activation.
pub fn cycle_index(activated_at: f64, now: f64, period: f64) -> u64 {
    let cycles = (now - activated_at) / period + BOUNDARY_EPS;
    if cycles <= 0.0 {
        0
    } else {
        cycles.floor() as u64
    }
}

/// Effect at `now` for an episode that began at `activated_at` with `base` as its
/// intervention: mindless patterns are on during even cycles only, alerts stay on.
pub fn cycle_effect(activated_at: f64, now: f64, period: f64, base: Effect) -> Effect {
    match base {
        Effect::Mindless(_) if now < activated_at => Effect::None,
        Effect::Mindless(_) if cycle_index(activated_at, now, period).is_multiple_of(2) => base,
        Effect::Mindless(_) => Effect::None,
        other => other,
    }
}

fn pattern_for_cycle(seed: u64, cycle: u64) -> PerturbationPattern {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(cycle);
    PerturbationPattern::ALL[rng.random_range(0..PerturbationPattern::ALL.len())]
}

/// Episode lifecycle and blinded condition assignment.
///
/// Timestamps are supplied by the caller; the scheduler never reads a clock. Events
/// produced by each call are buffered and collected with [`Scheduler::drain_events`].
#[derive(Debug, Clone)]
pub struct Scheduler {
    config: SchedulerConfig,
    rng: ChaCha8Rng,
    episodes: Vec<InterventionEpisode>,
    active: Option<usize>,
    pending: Vec<SessionEvent>,
}

impl PartialEq for Scheduler {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.rng == other.rng
            && self.episodes == other.episodes
            && self.active == other.active
    }
}

impl Scheduler {
    pub fn new(config: SchedulerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
            config,
            episodes: Vec::new(),
            active: None,
            pending: Vec::new(),
        })
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    pub fn mode(&self) -> InterventionMode {
        self.config.mode
    }

    /// Switches the intervention mode between session parts.
    pub fn set_mode(&mut self, mode: InterventionMode) -> Result<()> {
        if let Some(ep) = self.active_episode() {
            return Err(SchedulerError::AlreadyActive {
                activated_at: ep.activated_at,
                now: f64::NAN,
            });
        }
        self.config.mode = mode;
        Ok(())
    }

    pub fn episodes(&self) -> &[InterventionEpisode] {
        &self.episodes
    }

    pub fn active_episode(&self) -> Option<&InterventionEpisode> {
        self.active.map(|i| &self.episodes[i])
    }

    pub fn is_active(&self) -> bool {
        self.active.is_some()
    }

    pub fn drain_events(&mut self) -> Vec<SessionEvent> {
        std::mem::take(&mut self.pending)
    }

    fn emit(&mut self, t: f64, kind: EventKind) {
        self.pending.push(SessionEvent::new(t, kind));
    }

    pub fn activate(&mut self, now: f64) -> Result<InterventionEpisode> {
        if let Some(ep) = self.active_episode() {
            return Err(SchedulerError::AlreadyActive {
                activated_at: ep.activated_at,
                now,
            });
        }
        let mode = self.config.mode;
        let condition = match mode {
            InterventionMode::Control => Condition::Control,
            _ if self.config.randomize_condition => {
                if self.rng.random::<f64>() < self.config.treatment_probability {
                    Condition::Treatment
                } else {
                    Condition::Control
                }
            }
            _ => Condition::Treatment,
        };

        let (pattern, pattern_seed) =
            if condition == Condition::Treatment && mode == InterventionMode::Mindless {
                if self.config.pattern_per_cycle {
                    let seed = self.rng.random::<u64>();
                    (Some(pattern_for_cycle(seed, 0)), Some(seed))
                } else {
                    let i = self.rng.random_range(0..PerturbationPattern::ALL.len());
                    (Some(PerturbationPattern::ALL[i]), None)
                }
            } else {
                (None, None)
            };

        let id = self.episodes.len() as u64;
        let mut episode = InterventionEpisode {
            episode_id: id,
            activated_at: now,
            deactivated_at: None,
            condition,
            mode,
            pattern,
            toggle_history: Vec::new(),
            pattern_seed,
        };

        self.emit(now, EventKind::ConditionAssigned { episode: id, condition });
        if let Some(p) = pattern {
            self.emit(now, EventKind::PatternSelected { episode: id, pattern: p });
        }
        self.emit(
            now,
            EventKind::Activate {
                episode: id,
                condition,
                mode,
                pattern,
            },
        );
        if condition == Condition::Treatment && mode == InterventionMode::Mindless {
            episode.toggle_history.push(Toggle {
                t: now,
                enabled: true,
                pattern,
            });
            self.emit(now, EventKind::ToggleOn { episode: id, pattern });
        }

        self.episodes.push(episode.clone());
        self.active = Some(self.episodes.len() - 1);
        Ok(episode)
    }

    /// Materialises on/off phase changes of the active episode up to `now`.
    pub fn tick(&mut self, now: f64) {
        let Some(i) = self.active else { return };
        let period = self.config.toggle_period;
        let (activated_at, id, seed, base) = {
            let ep = &self.episodes[i];
            if ep.toggle_history.is_empty() {
                return;
            }
            (ep.activated_at, ep.episode_id, ep.pattern_seed, ep.pattern)
        };
        let reached = cycle_index(activated_at, now, period);
        loop {
            let k = self.episodes[i].toggle_history.len() as u64;
            if k > reached {
                break;
            }
            let t = (activated_at + k as f64 * period).min(now);
            let enabled = k.is_multiple_of(2);
            let pattern = if enabled {
                seed.map(|s| pattern_for_cycle(s, k)).or(base)
            } else {
                None
            };
            self.episodes[i].toggle_history.push(Toggle { t, enabled, pattern });
            let kind = if enabled {
                EventKind::ToggleOn { episode: id, pattern }
            } else {
                EventKind::ToggleOff { episode: id }
            };
            self.emit(t, kind);
        }
    }

    pub fn deactivate(&mut self, now: f64) -> Result<InterventionEpisode> {
        let Some(i) = self.active else {
            return Err(SchedulerError::NotActive { now });
        };
        let activated_at = self.episodes[i].activated_at;
        if now <= activated_at {
            return Err(SchedulerError::OutOfOrder {
                last: activated_at,
                got: now,
            });
        }
        self.tick(now);
        let ep = &mut self.episodes[i];
        ep.deactivated_at = Some(now);
        let id = ep.episode_id;
        let closed = ep.clone();
        self.active = None;
        self.emit(now, EventKind::Deactivate { episode: id });
        Ok(closed)
    }

    pub fn current_effect(&self, now: f64) -> Effect {
        let Some(ep) = self.active_episode() else {
            return Effect::None;
        };
        if ep.condition != Condition::Treatment || now < ep.activated_at {
            return Effect::None;
        }
        match ep.mode {
            InterventionMode::Mindless => {
                let k = cycle_index(ep.activated_at, now, self.config.toggle_period);
                if !k.is_multiple_of(2) {
                    return Effect::None;
                }
                let pattern = ep
                    .pattern_seed
                    .map(|s| pattern_for_cycle(s, k))
                    .or(ep.pattern);
                pattern.map(Effect::Mindless).unwrap_or(Effect::None)
            }
            InterventionMode::Alerting => Effect::Alert,
            InterventionMode::Control => Effect::None,
        }
    }

    /// Rebuilds scheduler state from a session log by re-driving a fresh scheduler and
    /// checking that every scheduler record it produces matches the log.
    pub fn replay(config: SchedulerConfig, log: &SessionLog) -> Result<Self> {
        let mut s = Scheduler::new(config)?;
        let mut queue: VecDeque<SessionEvent> = VecDeque::new();
        for (index, event) in log.events().iter().enumerate() {
            if let EventKind::PartStart { mode, .. } = event.kind {
                s.set_mode(mode)?;
                continue;
            }
            if !event.kind.is_scheduler_event() {
                continue;
            }
            if queue.is_empty() {
                match event.kind {
                    EventKind::ToggleOn { .. } | EventKind::ToggleOff { .. } => s.tick(event.t),
                    EventKind::Deactivate { .. } => {
                        s.deactivate(event.t)?;
                    }
                    _ => {
                        s.activate(event.t)?;
                    }
                }
                queue.extend(s.drain_events());
            }
            let expected = queue.pop_front();
            if expected.as_ref() != Some(event) {
                return Err(SchedulerError::ReplayMismatch {
                    index,
                    expected: format!("{expected:?}"),
                    found: format!("{event:?}"),
                });
            }
        }
        if let Some(left) = queue.pop_front() {
            return Err(SchedulerError::ReplayMismatch {
                index: log.len(),
                expected: format!("{left:?}"),
                found: "end of log".into(),
            });
        }
        Ok(s)
    }
}
