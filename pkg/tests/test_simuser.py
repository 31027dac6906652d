import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ethd_sim.geometry import Vec3
from ethd_sim.simuser import (
    Aim,
    HeadScript,
    ReachProfile,
    SimulatedHand,
    TrackingPipeline,
    frame_times_us,
    hand_truth,
    tracked_hand,
)

START = Vec3(1.0, 0.0, 1.05)
GOAL = Vec3(0.6, 0.0, 1.10)
F32 = 1e-6


def quiet(**kw):
    return ReachProfile(START, Aim.FIXED_POINT, GOAL, jitter_sigma_m=0.0, **kw)


def test_hand_truth_endpoints():
    p = quiet(duration_s=0.8)
    assert hand_truth(p, 0.0) == START
    assert hand_truth(p, 0.8) == GOAL
    assert hand_truth(p, 5.0) == GOAL
    with pytest.raises(ValueError):
        hand_truth(p, -0.01)


def test_peak_speed_is_min_jerk_closed_form():
    p = quiet(duration_s=0.8)
    dt = 1e-4
    pts = [hand_truth(p, k * dt) for k in range(int(0.8 / dt) + 1)]
    peak = max(a.dist(b) for a, b in zip(pts, pts[1:])) / dt
    expected = 1.875 * START.dist(GOAL) / 0.8
    assert peak == pytest.approx(expected, rel=0.01)


def test_duration_follows_peak_speed():
    p = quiet(peak_speed_mps=0.5)
    d = START.dist(GOAL)
    assert p.duration_for(d) == pytest.approx(1.875 * d / 0.5)


def test_profile_validation():
    with pytest.raises(ValueError):
        ReachProfile(START, Aim.FIXED_POINT, None)
    with pytest.raises(ValueError):
        quiet(peak_speed_mps=0.0)
    with pytest.raises(ValueError):
        ReachProfile(START, "prop", jitter_sigma_m=-1.0)
    with pytest.raises(ValueError):
        hand_truth(ReachProfile(START, "prop"), 0.1)


def test_prop_aim_retargets_live_prop():
    hand = SimulatedHand(ReachProfile(START, Aim.PROP_POSITION, jitter_sigma_m=0.0, duration_s=0.1))
    hand.begin_reach(0, GOAL)
    moved = GOAL + Vec3(0, 0.05, 0)
    for t in range(0, 101_000, 1000):
        hand.step(t, moved)
    assert hand.position.dist(moved) < 1e-12
    # a finished reach stays put when the prop moves away
    assert hand.step(102_000, moved + Vec3(0.1, 0, 0)).dist(moved) < 1e-12


def test_simulated_hand_matches_hand_truth_without_jitter():
    hand = SimulatedHand(quiet(duration_s=0.5))
    hand.begin_reach(100_000, GOAL)
    for t in range(0, 700_000, 1000):
        pos = hand.step(t)
        ref = START if t <= 100_000 else hand_truth(hand.profile, (t - 100_000) / 1e6)
        assert pos.dist(ref) < 1e-12
    # interpolated history
    assert hand.at(350_500).dist(hand.at(350_000).lerp(hand.at(351_000), 0.5)) < 1e-15


def test_jitter_has_configured_marginal_sigma():
    hand = SimulatedHand(ReachProfile(START, Aim.FIXED_POINT, GOAL, jitter_sigma_m=0.002,
                                      jitter_tau_s=0.01, seed=4))
    xs = np.array([list(hand.step(t)) for t in range(0, 20_000_000, 1000)]) - list(START)
    assert np.all(np.abs(xs.std(axis=0) - 0.002) < 0.1 * 0.002)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 400))
def test_preview_then_commit_matches_step(seed, n):
    prof = ReachProfile(START, Aim.FIXED_POINT, GOAL, seed=seed, duration_s=0.2)
    a, b = SimulatedHand(prof), SimulatedHand(prof)
    a.begin_reach(50_000, GOAL)
    b.begin_reach(50_000, GOAL)
    times = list(range(0, n * 1000, 1000))
    stepped = [a.step(t) for t in times]
    previewed = b.preview(times)
    b.commit(times, previewed)
    assert stepped == previewed
    assert a.step(n * 1000) == b.step(n * 1000)


def test_head_script():
    h = HeadScript(((0.0, Vec3(1.4, 0.25, 1.65)), (0.5, Vec3(1.4, 0.0, 1.65))))
    assert h.at(0) == Vec3(1.4, 0.25, 1.65)
    assert h.at(250_000).dist(Vec3(1.4, 0.125, 1.65)) < 1e-15
    assert h.at(9_000_000) == Vec3(1.4, 0.0, 1.65)
    assert h.stationary_after(500_000) and not h.stationary_after(499_999)
    with pytest.raises(ValueError):
        HeadScript(())
    with pytest.raises(ValueError):
        HeadScript(((1.0, Vec3()), (0.5, Vec3())))


def test_frame_times_are_rounded_multiples():
    ts = list(frame_times_us(90.0, 1_000_000))
    assert ts[:4] == [0, 11111, 22222, 33333]
    assert len(ts) == 91 and ts[-1] == 1_000_000
    assert all(t == round(k * 1e6 / 90) for k, t in enumerate(ts))


def test_tracking_zero_latency_zero_noise_equals_truth():
    prof = quiet(duration_s=0.5)
    truth = lambda t: hand_truth(prof, t / 1e6)
    msgs = tracked_hand(TrackingPipeline(latency_ms=0.0, noise_sigma_m=0.0, seed=0), truth, 600_000)
    for m in msgs:
        assert m.tracked == 1
        assert Vec3(*m.position).dist(truth(m.timestamp_us)) < F32


def test_tracking_latency_gives_velocity_lag():
    v = Vec3(0.5, 0.0, 0.0)
    truth = lambda t: v * (t / 1e6)
    pipe = TrackingPipeline(latency_ms=30.0, noise_sigma_m=0.0005, seed=1)
    lags = [truth(m.timestamp_us).x - m.position[0] for m in tracked_hand(pipe, truth, 5_000_000)
            if m.timestamp_us >= 30_000]
    assert np.mean(lags) == pytest.approx(0.5 * 0.030, abs=3 * 0.0005 / math.sqrt(len(lags)) + F32)


def test_full_dropout_flags_everything_untracked():
    msgs = tracked_hand(TrackingPipeline(dropout_rate=1.0, seed=0), lambda t: START, 1_000_000)
    assert msgs and all(m.tracked == 0 for m in msgs)
    assert [m.seq for m in msgs] == list(range(len(msgs)))


def test_tracking_stream_is_seeded():
    run = lambda s: tracked_hand(TrackingPipeline(dropout_rate=0.2, seed=s), lambda t: START, 500_000)
    assert run(3) == run(3)
    assert run(3) != run(4)
    with pytest.raises(ValueError):
        TrackingPipeline(dropout_rate=1.5)
