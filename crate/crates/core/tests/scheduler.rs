use attractor_core::audio::{Effect, PerturbationPattern};
use attractor_core::scheduler::{Condition, InterventionMode, Scheduler, SchedulerConfig, SessionLog};

const N: usize = 10_000;

fn run(config: SchedulerConfig) -> Scheduler {
    let mut s = Scheduler::new(config).unwrap();
    for i in 0..N {
        let t = i as f64 * 10.0;
        s.activate(t).unwrap();
        s.deactivate(t + 1.0).unwrap();
    }
    s
}

#[test]
fn treatment_fraction_converges() {
    for seed in [0, 1, 42] {
        let s = run(SchedulerConfig {
            rng_seed: seed,
            ..SchedulerConfig::default()
        });
        let treated = s
            .episodes()
            .iter()
            .filter(|e| e.condition == Condition::Treatment)
            .count();
        let frac = treated as f64 / N as f64;
        assert!((0.48..=0.52).contains(&frac), "seed {seed}: {frac}");
    }
}

#[test]
fn patterns_are_uniform_over_treatment_episodes() {
    let s = run(SchedulerConfig {
        rng_seed: 9,
        randomize_condition: false,
        ..SchedulerConfig::default()
    });
    let mut counts = [0usize; 4];
    for e in s.episodes() {
        counts[e.pattern.expect("treatment episode has a pattern").index()] += 1;
    }
    for (p, c) in PerturbationPattern::ALL.iter().zip(counts) {
        let f = c as f64 / N as f64;
        assert!((0.23..=0.27).contains(&f), "{p:?}: {f}");
    }
}

#[test]
fn replayed_state_matches_live_state_at_every_logged_time() {
    let config = SchedulerConfig {
        rng_seed: 5,
        mode: InterventionMode::Mindless,
        ..SchedulerConfig::default()
    };
    let mut live = Scheduler::new(config.clone()).unwrap();
    let mut log = SessionLog::new();
    let mut snapshots = Vec::new();
    let mut t = 0.0;
    for k in 0..40 {
        t += 4.0 + (k % 7) as f64;
        live.activate(t).unwrap();
        let end = t + 2.0 + (k % 5) as f64 * 3.3;
        let mut now = t;
        while now < end {
            live.tick(now);
            snapshots.push((now, live.current_effect(now)));
            now += 0.7;
        }
        live.tick(end);
        live.deactivate(end).unwrap();
        snapshots.push((end, live.current_effect(end)));
        t = end;
        log.extend(live.drain_events()).unwrap();
    }
    let replayed = Scheduler::replay(config, &log).unwrap();
    assert_eq!(replayed.episodes(), live.episodes());
    for e in replayed.episodes() {
        for (now, effect) in snapshots
            .iter()
            .filter(|(now, _)| *now >= e.activated_at && *now < e.deactivated_at.unwrap())
        {
            let on = (((now - e.activated_at) / 3.0 + 1e-9).floor() as u64).is_multiple_of(2);
            let expected = match (e.condition, e.pattern) {
                (Condition::Treatment, Some(p)) if on => Effect::Mindless(p),
                _ => Effect::None,
            };
            assert_eq!(*effect, expected, "t = {now}");
        }
    }
}
