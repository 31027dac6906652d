import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ethd_sim.geometry import (
    Frame,
    FrameMismatch,
    Pose,
    Quat,
    SimClock,
    Transform,
    Vec3,
    apply,
    compose,
    inverse,
)

finite = st.floats(-10.0, 10.0, allow_nan=False, allow_infinity=False)
vecs = st.builds(Vec3, finite, finite, finite)
quats = st.tuples(finite, finite, finite, finite).filter(
    lambda q: sum(c * c for c in q) > 1e-3).map(lambda q: Quat(*q))


def close(a: Vec3, b: Vec3, tol: float) -> bool:
    return a.dist(b) <= tol


def rot_z(deg):
    return Quat.from_axis_angle((0, 0, 1), math.radians(deg))


# -- oracle examples ---------------------------------------------------------

def test_compose_with_identity_is_unchanged():
    t = Transform(rot_z(30), Vec3(0.1, -0.2, 0.3), Frame.BOARD, Frame.HEADSET)
    out = compose(t, Transform.identity(Frame.BOARD))
    assert out.rotation == t.rotation
    assert out.translation == t.translation
    assert (out.from_frame, out.to_frame) == (Frame.BOARD, Frame.HEADSET)


def test_compose_with_inverse_is_identity():
    t = Transform(Quat(0.3, 0.1, -0.7, 0.2), Vec3(1.0, 2.0, -0.5), Frame.BOARD, Frame.HEADSET)
    out = compose(t, inverse(t))
    assert out.from_frame == out.to_frame == Frame.HEADSET
    assert out.translation.norm() < 1e-9
    assert out.rotation.angle_to(Quat.identity()) < 1e-7


def test_two_quarter_turns_flip_x():
    q = Transform(rot_z(90), Vec3.zero())
    assert close(apply(compose(q, q), Vec3(1, 0, 0)), Vec3(-1, 0, 0), 1e-12)


def test_apply_examples():
    assert apply(Transform.identity(), Vec3(1, 2, 3)) == Vec3(1, 2, 3)
    assert apply(Transform(Quat.identity(), Vec3(0.1, 0, 0)), Vec3.zero()) == Vec3(0.1, 0, 0)
    assert close(apply(Transform(rot_z(180), Vec3.zero()), Vec3(1, 0, 0)), Vec3(-1, 0, 0), 1e-12)


def test_compose_rejects_frames_that_do_not_chain():
    a = Transform(Quat.identity(), Vec3.zero(), Frame.BOARD, Frame.HEADSET)
    b = Transform(Quat.identity(), Vec3.zero(), Frame.ROBOT_BASE, Frame.WORLD)
    with pytest.raises(FrameMismatch):
        compose(a, b)


def test_quat_normalizes_and_rejects_zero():
    q = Quat(2.0, 0.0, 0.0, 0.0)
    assert q == Quat.identity()
    with pytest.raises(ValueError):
        Quat(0.0, 0.0, 0.0, 0.0)
    with pytest.raises(AttributeError):
        q.w = 3.0


def test_pose_rejects_non_finite_position():
    with pytest.raises(ValueError):
        Pose(Vec3(float("nan"), 0, 0))


def test_sim_clock_is_monotone():
    c = SimClock()
    assert c.tick(1000) == 1000
    assert c.advance_to(5000) == 5000
    assert c.seconds == 0.005
    with pytest.raises(ValueError):
        c.advance_to(10)
    with pytest.raises(ValueError):
        c.tick(-1)


# -- properties --------------------------------------------------------------

@settings(max_examples=200, deadline=None)
@given(quats, vecs)
def test_rotation_preserves_length(q, v):
    assert math.isclose(q.rotate(v).norm(), v.norm(), rel_tol=1e-9, abs_tol=1e-9)


@settings(max_examples=200, deadline=None)
@given(quats, vecs, vecs)
def test_inverse_undoes_apply(q, t, p):
    tr = Transform(q, t, Frame.BOARD, Frame.HEADSET)
    assert close(apply(inverse(tr), apply(tr, p)), p, 1e-9)


@settings(max_examples=200, deadline=None)
@given(quats, vecs, quats, vecs, vecs)
def test_compose_matches_sequential_apply(qa, ta, qb, tb, p):
    a = Transform(qa, ta, Frame.HEADSET, Frame.WORLD)
    b = Transform(qb, tb, Frame.BOARD, Frame.HEADSET)
    assert close(apply(compose(a, b), p), apply(a, apply(b, p)), 1e-9)
