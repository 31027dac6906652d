"""Robot-side interaction control.

Two strategies are supported once the avatar signals readiness:

* static: hold the prop at the ready pose until contact;
* dynamic: when the tracked hand enters the interaction volume, plan a
  one-second minimum-jerk path from the prop toward the prop/hand midpoint and
  blend it with the live hand estimate using an exponential weight that
  reaches 1 after one second.

The arm is abstracted to a kinematic end-effector that tracks a target under
speed and acceleration limits at 1000 Hz.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional

from .geometry import US_PER_S, Frame, Pose, Quat, Vec3

__all__ = [
    "InteractionKind",
    "Strategy",
    "VolumeSpec",
    "InteractionConfig",
    "MidTrajectory",
    "EndEffectorPlant",
    "ContactModel",
    "InteractionController",
    "weight",
    "min_jerk",
    "mid_trajectory_point",
    "dynamic_target",
    "volume_contains",
    "plant_step",
    "contact_force",
    "detect_contact",
    "retreat",
]

_EXPM1_3 = math.expm1(3.0)


class InteractionKind(str, Enum):
    HANDOVER = "handover"
    FIST_BUMP = "fistbump"
    HIGH_FIVE = "highfive"

    @property
    def default_force_threshold(self) -> float:
        return 7.5 if self is InteractionKind.HANDOVER else 15.0

    @property
    def label(self) -> str:
        return {"handover": "Handover", "fistbump": "Fist Bump", "highfive": "High Five"}[self.value]


class Strategy(str, Enum):
    STATIC = "static"
    DYNAMIC = "dynamic"


def weight(t_dynamic_s: float) -> float:
    """Blend weight toward the live hand: (e^{3a} - 1) / (e^3 - 1), a = min(t, 1)."""
    if t_dynamic_s < 0.0:
        raise ValueError(f"t_dynamic_s must be >= 0, got {t_dynamic_s}")
    a = t_dynamic_s if t_dynamic_s < 1.0 else 1.0
    return math.expm1(3.0 * a) / _EXPM1_3


def min_jerk(u: float) -> float:
    """Normalized minimum-jerk position profile 10u^3 - 15u^4 + 6u^5 on [0, 1]."""
    if u <= 0.0:
        return 0.0
    if u >= 1.0:
        return 1.0
    u3 = u * u * u
    return u3 * (10.0 + u * (-15.0 + 6.0 * u))


@dataclass(frozen=True)
class VolumeSpec:
    """Box in front of the prop whose entry by the hand triggers dynamic tracking.

    Prop-local axes: +x is the prop's outward (forward) axis, y is lateral and
    z is vertical. ``extent_y_m`` and ``extent_z_m`` are full widths.
    """

    extent_y_m: float = 0.10
    extent_z_m: float = 0.30
    depth_m: float = 0.30

    def __post_init__(self):
        if min(self.extent_y_m, self.extent_z_m, self.depth_m) <= 0.0:
            raise ValueError("interaction volume extents must be positive")

    def swapped(self) -> "VolumeSpec":
        """Same volume with the cross-section axes exchanged."""
        return VolumeSpec(self.extent_z_m, self.extent_y_m, self.depth_m)


def volume_contains(volume: VolumeSpec, prop_pose: Pose, hand: Vec3) -> bool:
    local = prop_pose.orientation.conj().rotate(hand - prop_pose.position)
    return (
        0.0 <= local.x <= volume.depth_m
        and abs(local.y) <= volume.extent_y_m / 2.0
        and abs(local.z) <= volume.extent_z_m / 2.0
    )


@dataclass(frozen=True)
class InteractionConfig:
    kind: InteractionKind = InteractionKind.FIST_BUMP
    strategy: Strategy = Strategy.STATIC
    force_threshold_N: Optional[float] = None
    ready_pose: Pose = Pose(Vec3(0.55, 0.0, 1.10), Quat.identity(), Frame.BOARD)
    interaction_volume: VolumeSpec = VolumeSpec()

    def __post_init__(self):
        object.__setattr__(self, "kind", InteractionKind(self.kind))
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if self.force_threshold_N is None:
            object.__setattr__(self, "force_threshold_N", self.kind.default_force_threshold)
        if not self.force_threshold_N > 0.0:
            raise ValueError(f"force threshold must be positive, got {self.force_threshold_N}")


@dataclass(frozen=True)
class MidTrajectory:
    start: Vec3
    goal: Vec3
    duration_s: float = 1.0
    t0_us: int = 0

    def __post_init__(self):
        if not self.duration_s > 0.0:
            raise ValueError("mid-trajectory duration must be positive")


def mid_trajectory_point(traj: MidTrajectory, t_s: float) -> Vec3:
    if t_s < 0.0:
        raise ValueError(f"t_s must be >= 0, got {t_s}")
    if t_s >= traj.duration_s:
        return traj.goal
    return traj.start.lerp(traj.goal, min_jerk(t_s / traj.duration_s))


def dynamic_target(traj: MidTrajectory, hand: Vec3, t_dynamic_s: float) -> Vec3:
    """x_target = (1 - w) x_mid(t) + w x_hand(t)."""
    w = weight(t_dynamic_s)
    if w >= 1.0:
        return hand
    mid = mid_trajectory_point(traj, t_dynamic_s)
    return mid * (1.0 - w) + hand * w


class EndEffectorPlant:
    """Kinematic end-effector tracking a point target under speed/accel limits.

    Each tick the commanded speed is the lesser of ``max_speed_mps`` and the
    discrete braking speed for the remaining distance, and the velocity change
    is clipped to ``max_accel_mps2 * dt``. When the target is reachable this
    tick without breaking either limit (now or on the following stop), the
    plant lands on it exactly.
    """

    def __init__(self, position: Vec3, max_speed_mps: float = 1.0, max_accel_mps2: float = 5.0,
                 tick_hz: int = 1000):
        if max_speed_mps <= 0.0 or max_accel_mps2 <= 0.0 or tick_hz <= 0:
            raise ValueError("plant limits and tick rate must be positive")
        self.position = position
        self.velocity = Vec3.zero()
        self.max_speed_mps = float(max_speed_mps)
        self.max_accel_mps2 = float(max_accel_mps2)
        self.tick_hz = int(tick_hz)
        self.dt = 1.0 / tick_hz

    @property
    def at_rest(self) -> bool:
        v = self.velocity
        return v.x == 0.0 and v.y == 0.0 and v.z == 0.0

    def freeze(self) -> Vec3:
        """Hold position this tick and drop velocity to zero (safety halt)."""
        self.velocity = Vec3.zero()
        return self.position

    def step(self, target: Vec3, dt_s: Optional[float] = None) -> Vec3:
        dt = self.dt if dt_s is None else dt_s
        if dt <= 0.0:
            raise ValueError("dt must be positive")
        p = self.position
        v = self.velocity
        vmax = self.max_speed_mps
        amax = self.max_accel_mps2
        a_dt = amax * dt
        tol = 1e-12

        ex = target.x - p.x
        ey = target.y - p.y
        ez = target.z - p.z
        d = math.sqrt(ex * ex + ey * ey + ez * ez)

        # land exactly when both this tick's and the next (stopping) tick's
        # velocity changes stay within the acceleration bound
        if d <= vmax * dt * (1.0 + tol):
            nx, ny, nz = ex / dt, ey / dt, ez / dt
            need = math.sqrt(nx * nx + ny * ny + nz * nz)
            dvx, dvy, dvz = nx - v.x, ny - v.y, nz - v.z
            if need <= a_dt * (1.0 + tol) and math.sqrt(dvx * dvx + dvy * dvy + dvz * dvz) <= a_dt * (1.0 + tol):
                self.velocity = Vec3(nx, ny, nz) if d > 0.0 else Vec3.zero()
                self.position = target
                return target

        if d > 0.0:
            v_brake = amax * (-dt / 2.0 + math.sqrt(dt * dt / 4.0 + 2.0 * d / amax))
            speed = vmax if v_brake > vmax else v_brake
            k = speed / d
            dvx, dvy, dvz = ex * k - v.x, ey * k - v.y, ez * k - v.z
        else:
            dvx, dvy, dvz = -v.x, -v.y, -v.z
        dv = math.sqrt(dvx * dvx + dvy * dvy + dvz * dvz)
        if dv > a_dt:
            s = a_dt / dv
            dvx, dvy, dvz = dvx * s, dvy * s, dvz * s
        vx, vy, vz = v.x + dvx, v.y + dvy, v.z + dvz
        sp = math.sqrt(vx * vx + vy * vy + vz * vz)
        if sp > vmax:
            s = vmax / sp
            vx, vy, vz = vx * s, vy * s, vz * s
        self.velocity = Vec3(vx, vy, vz)
        self.position = Vec3(p.x + vx * dt, p.y + vy * dt, p.z + vz * dt)
        return self.position


def plant_step(plant: EndEffectorPlant, target: Vec3, dt_s: float = 0.001) -> Vec3:
    return plant.step(target, dt_s)


@dataclass(frozen=True)
class ContactModel:
    """Linear spring between the hand point and a spherical prop surface."""

    stiffness_N_per_m: float = 2000.0
    contact_radius_m: float = 0.05
    damping_Ns_per_m: float = 0.0

    def __post_init__(self):
        if not self.stiffness_N_per_m > 0.0:
            raise ValueError("contact stiffness must be positive")
        if not self.contact_radius_m > 0.0:
            raise ValueError("contact radius must be positive")

    def threshold_distance(self, force_N: float) -> float:
        """Hand-to-prop distance at which the static spring force equals ``force_N``."""
        return self.contact_radius_m - force_N / self.stiffness_N_per_m


def contact_force(prop: Vec3, hand: Vec3, model: ContactModel = ContactModel(),
                  approach_speed: float = 0.0) -> float:
    """Contact force magnitude in newtons; zero when the hand is outside the prop radius.

    ``approach_speed`` only contributes through ``damping_Ns_per_m`` (zero by
    default) and only while penetrating.
    """
    pen = model.contact_radius_m - prop.dist(hand)
    if pen <= 0.0:
        return 0.0
    return model.stiffness_N_per_m * pen + model.damping_Ns_per_m * max(0.0, approach_speed)


def detect_contact(force_N: float, config: InteractionConfig) -> bool:
    return force_N > config.force_threshold_N


def retreat(plant: EndEffectorPlant, retreat_pose: Pose, max_ticks: int = 10_000,
            frozen: Callable[[int], bool] = lambda tick: False) -> List[Vec3]:
    """Drive ``plant`` to ``retreat_pose`` and return the per-tick positions.

    ``frozen(tick)`` models a safety hold: while true the plant does not move
    and the retreat stays pending. The list ends on the arrival tick; an
    already-arrived plant yields an empty trajectory.
    """
    goal = retreat_pose.position
    path: List[Vec3] = []
    for tick in range(max_ticks):
        if plant.position == goal and plant.at_rest:
            return path
        if frozen(tick):
            path.append(plant.freeze())
            continue
        path.append(plant.step(goal))
    raise RuntimeError(f"retreat did not complete within {max_ticks} ticks")


@dataclass
class InteractionController:
    """Per-tick target generation while the strategy is engaged.

    ``update`` consumes the latest delivered hand estimate (``None`` while the
    hand is untracked) and returns the end-effector target for this tick.
    """

    config: InteractionConfig
    trigger_us: Optional[int] = None
    trajectory: Optional[MidTrajectory] = None
    last_weight: float = 0.0
    last_target: Optional[Vec3] = None
    _hand: Optional[Vec3] = field(default=None, repr=False)

    @property
    def triggered(self) -> bool:
        return self.trigger_us is not None

    def update(self, now_us: int, prop_position: Vec3, hand_estimate: Optional[Vec3]) -> Vec3:
        cfg = self.config
        ready = cfg.ready_pose.position
        if hand_estimate is not None:
            self._hand = hand_estimate
        if cfg.strategy is Strategy.STATIC:
            self.last_target = ready
            return ready

        if self.trajectory is None:
            hand = hand_estimate
            prop_pose = Pose(prop_position, cfg.ready_pose.orientation, cfg.ready_pose.frame)
            if hand is not None and volume_contains(cfg.interaction_volume, prop_pose, hand):
                self.trigger_us = now_us
                self.trajectory = MidTrajectory(prop_position, prop_position.lerp(hand, 0.5), 1.0, now_us)
            else:
                self.last_target = ready
                return ready

        t_dyn = (now_us - self.trigger_us) / US_PER_S
        # keep tracking the last known hand through tracking dropouts
        target = dynamic_target(self.trajectory, self._hand, t_dyn)
        self.last_weight = weight(t_dyn)
        self.last_target = target
        return target
