import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ethd_sim.controller import (
    ContactModel,
    EndEffectorPlant,
    InteractionConfig,
    InteractionController,
    InteractionKind,
    MidTrajectory,
    Strategy,
    VolumeSpec,
    contact_force,
    detect_contact,
    dynamic_target,
    mid_trajectory_point,
    min_jerk,
    plant_step,
    retreat,
    volume_contains,
    weight,
)
from ethd_sim.geometry import Frame, Pose, Quat, Vec3

coord = st.floats(-2.0, 2.0, allow_nan=False)
vecs = st.builds(Vec3, coord, coord, coord)


def weight_ref(t):
    # independent evaluation: (e^{3t} - 1) / (e^3 - 1), capped at t = 1
    t = min(t, 1.0)
    return (math.exp(3 * t) - 1) / (math.exp(3) - 1)


# -- weight and trajectories -------------------------------------------------

def test_weight_examples():
    assert weight(0.0) == 0.0
    assert weight(1.0) == 1.0
    assert weight(2.0) == 1.0
    assert weight(0.5) == pytest.approx(0.18243, abs=1e-4)
    assert weight(0.5) == pytest.approx(weight_ref(0.5), abs=1e-12)
    with pytest.raises(ValueError):
        weight(-0.1)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 5.0), st.floats(0.0, 5.0))
def test_weight_is_monotone_and_bounded(a, b):
    lo, hi = sorted((a, b))
    assert 0.0 <= weight(lo) <= weight(hi) <= 1.0
    assert weight(a) == pytest.approx(weight_ref(a), abs=1e-12)


def test_min_jerk_endpoints_and_symmetry():
    assert min_jerk(0.0) == 0.0 and min_jerk(1.0) == 1.0
    assert min_jerk(0.5) == 0.5
    assert min_jerk(-1) == 0.0 and min_jerk(2) == 1.0
    for u in (0.1, 0.3, 0.45):
        assert min_jerk(u) + min_jerk(1 - u) == pytest.approx(1.0, abs=1e-15)


def test_mid_trajectory_examples():
    traj = MidTrajectory(Vec3(0.1, 0.2, 0.3), Vec3(0.5, -0.2, 0.9), 2.0)
    assert mid_trajectory_point(traj, 0.0) == traj.start
    assert mid_trajectory_point(traj, 2.0) == traj.goal
    assert mid_trajectory_point(traj, 1.0).dist(Vec3(0.3, 0.0, 0.6)) < 1e-15
    with pytest.raises(ValueError):
        MidTrajectory(Vec3(), Vec3(), 0.0)


def test_dynamic_target_examples():
    traj = MidTrajectory(Vec3(0.0, 0, 0), Vec3(0.30, 0, 0), 1.0)
    hand = Vec3(0.30, 0, 0)
    assert dynamic_target(traj, hand, 0.0) == traj.start
    # x_mid(0.5) = 0.15 by symmetry
    out = dynamic_target(traj, hand, 0.5)
    assert out.x == pytest.approx(0.17736, abs=1e-4)
    assert out.x == pytest.approx((1 - weight_ref(0.5)) * 0.15 + weight_ref(0.5) * 0.30, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(vecs, vecs, vecs, st.floats(1.0, 100.0))
def test_dynamic_target_is_exactly_hand_after_one_second(a, b, hand, t):
    assert dynamic_target(MidTrajectory(a, b, 1.0), hand, t) is hand


# -- interaction volume ------------------------------------------------------

def test_volume_examples():
    vol = VolumeSpec(0.10, 0.30, 0.30)
    prop = Pose(Vec3(0.55, 0.0, 1.10), Quat.identity(), Frame.BOARD)
    assert volume_contains(vol, prop, prop.position)
    assert not volume_contains(vol, prop, prop.position + Vec3(0.31, 0, 0))
    assert volume_contains(vol, prop, prop.position + Vec3(0.2, 0.05, 0))
    assert not volume_contains(vol, prop, prop.position + Vec3(0.2, 0.06, 0))
    assert not volume_contains(vol, prop, prop.position + Vec3(-0.01, 0, 0))


def test_volume_follows_prop_orientation():
    vol = VolumeSpec(0.10, 0.30, 0.30)
    turned = Pose(Vec3.zero(), Quat.from_axis_angle((0, 0, 1), math.pi / 2), Frame.BOARD)
    assert volume_contains(vol, turned, Vec3(0.0, 0.2, 0.0))
    assert not volume_contains(vol, turned, Vec3(0.2, 0.0, 0.0))
    assert vol.swapped() == VolumeSpec(0.30, 0.10, 0.30)


# -- plant -------------------------------------------------------------------

def test_plant_holds_when_target_is_position():
    p = EndEffectorPlant(Vec3(0.1, 0.2, 0.3))
    assert plant_step(p, Vec3(0.1, 0.2, 0.3)) == Vec3(0.1, 0.2, 0.3)
    assert p.at_rest


def test_plant_lands_exactly_and_holds():
    p = EndEffectorPlant(Vec3.zero(), max_speed_mps=2.0, max_accel_mps2=10.0)
    goal = Vec3(0.001, 0, 0)
    path = [plant_step(p, goal) for _ in range(100)]
    first = path.index(goal)
    assert all(x == goal for x in path[first:])
    assert all(x.x < goal.x for x in path[:first])


def _ticks_to_arrive(p, target, limit=100_000):
    for k in range(1, limit):
        p.step(target)
        if p.position == target and p.at_rest:
            return k
        if p.position == target:
            # landed; one more tick drops the velocity
            continue
    raise AssertionError("never arrived")


def test_plant_one_metre_arrival_matches_trapezoid():
    p = EndEffectorPlant(Vec3.zero(), 1.0, 5.0)
    # closed form: d/v + v/a = 1.2 s
    k = _ticks_to_arrive(p, Vec3(1.0, 0, 0))
    assert 1.0 <= k / 1000 <= 1.3
    assert k / 1000 == pytest.approx(1.2, abs=0.01)


@settings(max_examples=30, deadline=None)
@given(vecs, vecs)
def test_plant_respects_limits_and_converges(start, goal):
    p = EndEffectorPlant(start, 1.0, 5.0)
    prev_v = Vec3.zero()
    for _ in range(8000):
        p.step(goal)
        v = p.velocity
        assert v.norm() <= 1.0 * (1 + 1e-9)
        assert (v - prev_v).norm() <= 5.0 * 0.001 * (1 + 1e-6)
        prev_v = v
        if p.position == goal and p.at_rest:
            break
    assert p.position == goal


def test_freeze_keeps_position():
    p = EndEffectorPlant(Vec3.zero())
    p.step(Vec3(1, 0, 0))
    before = p.position
    assert p.freeze() == before and p.at_rest


# -- contact -----------------------------------------------------------------

def test_contact_force_examples():
    m = ContactModel(2000.0, 0.05)
    assert contact_force(Vec3.zero(), Vec3(0.06, 0, 0), m) == 0.0
    assert contact_force(Vec3.zero(), Vec3(0.045, 0, 0), m) == pytest.approx(10.0, abs=1e-9)
    f = contact_force(Vec3.zero(), Vec3(0.0425, 0, 0), m)
    assert f == pytest.approx(15.0, abs=1e-9)
    assert m.threshold_distance(7.5) == pytest.approx(0.04625, abs=1e-15)
    damped = ContactModel(2000.0, 0.05, damping_Ns_per_m=10.0)
    assert contact_force(Vec3.zero(), Vec3(0.045, 0, 0), damped, 0.5) == pytest.approx(15.0)


def test_detect_contact_thresholds():
    handover = InteractionConfig(kind=InteractionKind.HANDOVER)
    fist = InteractionConfig(kind=InteractionKind.FIST_BUMP)
    assert not detect_contact(7.4, handover)
    assert detect_contact(7.6, handover)
    assert not detect_contact(15.0, fist)
    assert detect_contact(15.01, fist)
    assert InteractionConfig(kind="highfive").force_threshold_N == 15.0
    with pytest.raises(ValueError):
        InteractionConfig(force_threshold_N=0.0)


# -- retreat -----------------------------------------------------------------

def test_retreat_examples():
    p = EndEffectorPlant(Vec3(0.3, 0, 1.3))
    assert retreat(p, Pose(Vec3(0.3, 0, 1.3))) == []
    p = EndEffectorPlant(Vec3(0.7, 0, 1.3), 1.0, 5.0)
    path = retreat(p, Pose(Vec3(0.3, 0, 1.3)))
    assert path[-1] == Vec3(0.3, 0, 1.3)
    assert len(path) / 1000 <= 0.7


def test_retreat_pauses_while_frozen():
    p = EndEffectorPlant(Vec3(0.7, 0, 1.3), 1.0, 5.0)
    path = retreat(p, Pose(Vec3(0.3, 0, 1.3)), frozen=lambda tick: tick < 100)
    assert all(x == Vec3(0.7, 0, 1.3) for x in path[:100])
    assert path[-1] == Vec3(0.3, 0, 1.3)
    with pytest.raises(RuntimeError):
        retreat(EndEffectorPlant(Vec3.zero()), Pose(Vec3(1, 0, 0)), frozen=lambda tick: True,
                max_ticks=50)


# -- controller --------------------------------------------------------------

def test_static_controller_holds_ready_pose():
    c = InteractionController(InteractionConfig(strategy=Strategy.STATIC))
    ready = c.config.ready_pose.position
    assert c.update(0, ready, Vec3(0.6, 0, 1.1)) == ready
    assert not c.triggered


def test_dynamic_controller_triggers_in_volume_and_converges_to_hand():
    c = InteractionController(InteractionConfig(strategy=Strategy.DYNAMIC))
    ready = c.config.ready_pose.position
    far = ready + Vec3(0.5, 0, 0)
    assert c.update(0, ready, far) == ready and not c.triggered
    hand = ready + Vec3(0.2, 0.01, -0.02)
    first = c.update(1000, ready, hand)
    assert c.triggered and c.trigger_us == 1000
    assert first == ready  # w(0) = 0 and the mid trajectory starts at the prop
    assert c.trajectory.goal.dist(ready.lerp(hand, 0.5)) < 1e-15
    # untracked frames keep the last hand
    assert c.update(1_001_000, ready, None) == hand
    assert c.last_weight == 1.0
