"""Smoke test for the `attractor` extension module.

Build and install first:

    pip install --no-build-isolation ./crates/py
    python python/smoke_test.py
"""

import json
import math
import tempfile

import attractor


def rms(xs):
    return math.sqrt(sum(x * x for x in xs) / len(xs))


def check_audio():
    engine = attractor.AudioEngine(16000)
    n = engine.chunk_len
    tone = [0.3 * math.sin(2 * math.pi * 440 * i / 16000) for i in range(4 * n)]
    halved = engine.process(tone, "volume-halve")
    assert len(halved) == len(tone)
    assert abs(rms(halved) / rms(tone) - 0.5) < 1e-6
    engine.reset()
    passthrough = engine.process(tone)
    assert max(abs(a - b) for a, b in zip(passthrough, tone)) < 1e-7
    assert attractor.cycle_effect(0.0, 1.0, "pitch-up") == "pitch_up_one_tone"
    assert attractor.cycle_effect(0.0, 4.0, "pitch-up") == "none"


def check_scheduler():
    s = attractor.Scheduler(mode="mindless", seed=7, randomize_condition=False)
    ep = s.activate(10.0)
    assert ep["condition"] == "treatment" and ep["pattern"] is not None
    s.tick(16.5)
    assert s.current_effect(16.5) != "none"
    assert s.current_effect(14.0) == "none"
    done = s.deactivate(17.0)
    assert done["deactivated_at"] == 17.0
    kinds = [e["kind"] for e in s.drain_events()]
    assert len(kinds) >= 4


def check_sensor():
    sweep = [(y, p) for y in (-20.0, 0.0, 20.0) for p in (-10.0, 0.0, 10.0)]
    solved = []
    for yaw, pitch in sweep:
        pose = attractor.solve_head_pose(attractor.project(yaw, pitch))
        assert abs(pose["yaw"] - yaw) < 1e-3 and abs(pose["pitch"] - pitch) < 1e-3
        solved.append((pose["yaw"], pose["pitch"]))
    profile = attractor.calibrate(solved)
    assert attractor.judge(0.0, 0.0, profile) == "attentive"
    assert attractor.judge(35.0, 0.0, profile) == "distracted"
    pipe = attractor.SensorPipeline(profile, debounce=3)
    changes = []
    for i in range(10):
        label, change = pipe.process(i / 15, attractor.project(40.0, 0.0))
        assert label == "distracted"
        if change:
            changes.append(change)
    assert len(changes) == 1 and changes[0]["state"] == "distracted"


def check_statistics():
    t = attractor.unpaired_t_test([1.0, 2.0, 3.0, 4.0], [2.0, 3.0, 4.0, 5.5])
    assert t["statistic"] < 0 and 0 < t["p_value"] < 1
    chi = attractor.chi_square_test([[19, 7, 14, 16], [50, 47, 50, 55]])
    assert abs(chi["effect_size"] - 0.1220) < 5e-4 and abs(chi["p_value"] - 0.2794) < 1e-3
    anova = attractor.one_way_anova([[1.0, 2.0, 3.0], [2.0, 3.0, 4.5], [5.0, 6.0, 7.5]])
    assert 0 <= anova["test"]["effect_size"] <= 1
    c = attractor.confusion(435.4, 78.0, 51.4, 70.7)
    assert abs(c["accuracy"] - 0.796) < 1e-3 and abs(c["precision"] - 0.476) < 1e-3


def check_control_session():
    session = attractor.ControlSession("py1", parts=["mindless"], part_duration=60.0, trigger="auto", seed=3)
    for conn, role in [(1, "client"), (2, "sensor")]:
        session.connect(conn)
        hello = {"t": 0.0, "seq": 1, "type": "hello", "role": role, "calibrated": True}
        out = session.handle(0.0, conn, json.dumps(hello))
        assert out[0]["message"]["type"] == "hello"
    assert session.is_started
    distracted = {"t": 5.0, "seq": 2, "type": "attention_state", "state": "distracted"}
    session.handle(5.0, 2, json.dumps(distracted))
    session.tick(61.0)
    assert session.is_finished
    lines = session.log_jsonl().splitlines()
    assert any('"session_end"' in line for line in lines)


def check_simulation_and_report():
    with tempfile.TemporaryDirectory() as d:
        manifest = attractor.simulate(5, duration=600.0, out_dir=d, session_id="pysim")
        assert manifest["config"]["seed"] == 5
        again = attractor.simulate(5, duration=600.0, session_id="pysim")
        assert again == manifest
        events = f"{d}/session-pysim.events.jsonl"
        assert attractor.read_log(events)
        report = attractor.analyze([events], [f"{d}/pysim.detections.jsonl"])
        assert len(report["sessions"][0]["parts"]) == 3
        assert report["confusion"] is not None


if __name__ == "__main__":
    check_audio()
    check_scheduler()
    check_sensor()
    check_statistics()
    check_control_session()
    check_simulation_and_report()
    print("smoke test ok")
