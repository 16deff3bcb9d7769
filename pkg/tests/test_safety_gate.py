import numpy as np
import pytest

from sevo.safety_gate import ARMED, DEBOUNCING, IDLE, GateConfig, GateState, gate_step, reset

from oracles import gate_reference


def run_stream(stream, config=GateConfig()):
    state = GateState()
    out = []
    for detected in stream:
        state, armed = gate_step(state, detected, config)
        out.append((state.phase, armed))
    return out


def test_empty_stream_never_arms():
    out = run_stream([False] * 10_000)
    assert all(phase == IDLE and not armed for phase, armed in out)


def test_first_armed_frame_is_t_plus_29():
    out = run_stream([True] * 40)
    armed_idx = [i for i, (_, armed) in enumerate(out) if armed]
    assert armed_idx[0] == 29
    assert armed_idx == list(range(29, 40))


def test_single_frame_dropouts_still_arm():
    pattern = ([True] * 10 + [False]) * 10
    out = run_stream(pattern)
    assert any(armed for _, armed in out)


def test_three_frame_dropouts_never_arm():
    pattern = ([True] * 10 + [False] * 3) * 20
    out = run_stream(pattern)
    assert not any(armed for _, armed in out)


def test_armed_survives_tolerated_dropout_then_disarms():
    stream = [True] * 30 + [False, False] + [True] + [False] * 3 + [True]
    out = run_stream(stream)
    assert out[29] == (ARMED, True)
    assert out[30] == (ARMED, True) and out[31] == (ARMED, True)  # within tolerance
    assert out[32] == (ARMED, True)
    assert out[35][0] == DEBOUNCING  # 3rd consecutive absence disarms
    assert out[36] == (DEBOUNCING, False)  # progress restarted from zero


def test_matches_reference_interpreter_on_random_streams():
    rng = np.random.default_rng(99)
    for _ in range(1000):
        n = int(rng.integers(1, 200))
        p = float(rng.random())
        stream = (rng.random(n) < p).tolist()
        debounce = float(rng.uniform(0.05, 2.0))
        tol = int(rng.integers(0, 4))
        rate = float(rng.choice([10.0, 30.0, 60.0]))
        config = GateConfig(debounce=debounce, flicker_tolerance=tol, frame_rate=rate)
        assert run_stream(stream, config) == gate_reference(stream, debounce, tol, rate)


def test_below_threshold_runs_never_arm():
    # streams built so no tolerant run ever reaches the 30-frame threshold
    rng = np.random.default_rng(100)
    config = GateConfig()
    for _ in range(200):
        stream = []
        for _ in range(int(rng.integers(1, 12))):
            stream += [True] * int(rng.integers(0, config.threshold))
            stream += [False] * int(rng.integers(config.flicker_tolerance + 1, 8))
        assert not any(armed for _, armed in run_stream(stream, config))


def test_arm_enabled_requires_recent_detection():
    rng = np.random.default_rng(101)
    config = GateConfig()
    for _ in range(200):
        stream = (rng.random(120) < 0.9).tolist()
        out = run_stream(stream, config)
        for t, (_, armed) in enumerate(out):
            if armed:
                recent = stream[max(0, t - config.flicker_tolerance) : t + 1]
                assert any(recent)


def test_gate_step_is_pure():
    state = GateState(phase=DEBOUNCING, consecutive_present=5, consecutive_absent=0)
    gate_step(state, True)
    assert state == GateState(phase=DEBOUNCING, consecutive_present=5, consecutive_absent=0)


def test_immediate_arm_when_threshold_is_one_frame():
    config = GateConfig(debounce=0.01, frame_rate=30.0)
    assert config.threshold == 1
    state, armed = gate_step(GateState(), True, config)
    assert armed and state.phase == ARMED


def test_reset():
    state = GateState(phase=ARMED, consecutive_present=50, consecutive_absent=1)
    assert reset(state) == GateState()
    after, armed = gate_step(reset(state), False)
    assert after == GateState() and not armed
    assert reset(reset(state)) == reset(state)


def test_config_validation():
    with pytest.raises(ValueError):
        GateConfig(debounce=0.0)
    with pytest.raises(ValueError):
        GateConfig(flicker_tolerance=-1)
    with pytest.raises(ValueError):
        GateConfig(frame_rate=0.0)
    with pytest.raises(ValueError):
        GateState(phase="BROKEN")
