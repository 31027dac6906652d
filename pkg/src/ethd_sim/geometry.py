"""Rigid-body value types and the integer simulation clock.

Everything in the simulation core is double precision and expressed in metres;
time is carried as integer microseconds so the 1000 Hz robot loop and the
~90 Hz headset loop can be interleaved without float drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "Frame",
    "FrameMismatch",
    "Vec3",
    "Quat",
    "Pose",
    "Transform",
    "SimClock",
    "compose",
    "apply",
    "inverse",
    "US_PER_S",
]

US_PER_S = 1_000_000


class Frame(str, Enum):
    BOARD = "Board"
    ROBOT_BASE = "RobotBase"
    HEADSET = "Headset"
    WORLD = "World"


class FrameMismatch(ValueError):
    """Raised when composing transforms whose frames do not chain."""


class Vec3:
    """3-vector in metres. Treated as immutable; never assign to fields.

    A plain slotted class rather than a frozen dataclass: it sits on the
    1000 Hz hot path and construction cost matters.
    """

    __slots__ = ("x", "y", "z")

    def __init__(self, x: float = 0.0, y: float = 0.0, z: float = 0.0):
        self.x = float(x)
        self.y = float(y)
        self.z = float(z)

    @classmethod
    def of(cls, seq) -> "Vec3":
        x, y, z = seq
        return cls(x, y, z)

    @classmethod
    def zero(cls) -> "Vec3":
        return cls(0.0, 0.0, 0.0)

    def __iter__(self):
        yield self.x
        yield self.y
        yield self.z

    def __add__(self, o: "Vec3") -> "Vec3":
        return Vec3(self.x + o.x, self.y + o.y, self.z + o.z)

    def __sub__(self, o: "Vec3") -> "Vec3":
        return Vec3(self.x - o.x, self.y - o.y, self.z - o.z)

    def __mul__(self, k: float) -> "Vec3":
        return Vec3(self.x * k, self.y * k, self.z * k)

    __rmul__ = __mul__

    def __truediv__(self, k: float) -> "Vec3":
        return Vec3(self.x / k, self.y / k, self.z / k)

    def __neg__(self) -> "Vec3":
        return Vec3(-self.x, -self.y, -self.z)

    def __eq__(self, o) -> bool:
        if not isinstance(o, Vec3):
            return NotImplemented
        return self.x == o.x and self.y == o.y and self.z == o.z

    def __hash__(self) -> int:
        return hash((self.x, self.y, self.z))

    def __repr__(self) -> str:
        return f"Vec3({self.x!r}, {self.y!r}, {self.z!r})"

    def dot(self, o: "Vec3") -> float:
        return self.x * o.x + self.y * o.y + self.z * o.z

    def cross(self, o: "Vec3") -> "Vec3":
        return Vec3(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    def dist(self, o: "Vec3") -> float:
        dx = self.x - o.x
        dy = self.y - o.y
        dz = self.z - o.z
        return math.sqrt(dx * dx + dy * dy + dz * dz)

    def lerp(self, o: "Vec3", s: float) -> "Vec3":
        return Vec3(
            self.x + (o.x - self.x) * s,
            self.y + (o.y - self.y) * s,
            self.z + (o.z - self.z) * s,
        )

    def is_finite(self) -> bool:
        return math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.z)

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


class Quat:
    """Unit quaternion (w, x, y, z). Normalized on construction."""

    __slots__ = ("w", "x", "y", "z")

    def __init__(self, w: float = 1.0, x: float = 0.0, y: float = 0.0, z: float = 0.0,
                 normalize: bool = True):
        if normalize:
            n = math.sqrt(w * w + x * x + y * y + z * z)
            if n == 0.0 or not math.isfinite(n):
                raise ValueError("cannot normalize a zero or non-finite quaternion")
            w, x, y, z = w / n, x / n, y / n, z / n
        object.__setattr__(self, "w", float(w))
        object.__setattr__(self, "x", float(x))
        object.__setattr__(self, "y", float(y))
        object.__setattr__(self, "z", float(z))

    def __setattr__(self, name, value):
        raise AttributeError("Quat is immutable")

    @classmethod
    def identity(cls) -> "Quat":
        return cls(1.0, 0.0, 0.0, 0.0, normalize=False)

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "Quat":
        ax = Vec3.of(axis)
        n = ax.norm()
        if n == 0.0:
            return cls.identity()
        s = math.sin(angle / 2.0) / n
        return cls(math.cos(angle / 2.0), ax.x * s, ax.y * s, ax.z * s)

    @classmethod
    def from_rotvec(cls, rv) -> "Quat":
        v = Vec3.of(rv)
        angle = v.norm()
        if angle == 0.0:
            return cls.identity()
        return cls.from_axis_angle(v, angle)

    def __iter__(self):
        yield self.w
        yield self.x
        yield self.y
        yield self.z

    def __eq__(self, o) -> bool:
        if not isinstance(o, Quat):
            return NotImplemented
        return self.w == o.w and self.x == o.x and self.y == o.y and self.z == o.z

    def __hash__(self) -> int:
        return hash((self.w, self.x, self.y, self.z))

    def __repr__(self) -> str:
        return f"Quat({self.w!r}, {self.x!r}, {self.y!r}, {self.z!r})"

    def __mul__(self, o: "Quat") -> "Quat":
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = o.w, o.x, o.y, o.z
        return Quat(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def conj(self) -> "Quat":
        return Quat(self.w, -self.x, -self.y, -self.z, normalize=False)

    def dot(self, o: "Quat") -> float:
        return self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z

    def norm(self) -> float:
        return math.sqrt(self.dot(self))

    def rotate(self, v: Vec3) -> Vec3:
        # v' = v + 2w (q x v) + 2 q x (q x v)
        qx, qy, qz, w = self.x, self.y, self.z, self.w
        tx = 2.0 * (qy * v.z - qz * v.y)
        ty = 2.0 * (qz * v.x - qx * v.z)
        tz = 2.0 * (qx * v.y - qy * v.x)
        return Vec3(
            v.x + w * tx + (qy * tz - qz * ty),
            v.y + w * ty + (qz * tx - qx * tz),
            v.z + w * tz + (qx * ty - qy * tx),
        )

    def angle_to(self, o: "Quat") -> float:
        """Geodesic rotation distance in radians (sign-invariant)."""
        d = min(1.0, abs(self.dot(o)))
        return 2.0 * math.acos(d)

    def to_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])


@dataclass(frozen=True)
class Pose:
    position: Vec3
    orientation: Quat = Quat.identity()
    frame: Frame = Frame.BOARD

    def __post_init__(self):
        if not isinstance(self.frame, Frame):
            object.__setattr__(self, "frame", Frame(self.frame))
        if not self.position.is_finite():
            raise ValueError(f"non-finite pose position {self.position!r}")

    def as_transform(self, from_frame: Frame) -> "Transform":
        """Transform mapping coordinates in ``from_frame`` (the posed body) into ``self.frame``."""
        return Transform(self.orientation, self.position, from_frame, self.frame)


@dataclass(frozen=True)
class Transform:
    """Maps points expressed in ``from_frame`` into ``to_frame``: p' = R p + t."""

    rotation: Quat
    translation: Vec3
    from_frame: Frame = Frame.WORLD
    to_frame: Frame = Frame.WORLD

    @classmethod
    def identity(cls, frame: Frame = Frame.WORLD) -> "Transform":
        return cls(Quat.identity(), Vec3.zero(), frame, frame)


def apply(t: Transform, p: Vec3) -> Vec3:
    return t.rotation.rotate(p) + t.translation


def compose(a: Transform, b: Transform) -> Transform:
    """Return the transform equivalent to applying ``b`` then ``a``."""
    if a.from_frame != b.to_frame:
        raise FrameMismatch(
            f"cannot compose {b.from_frame.value}->{b.to_frame.value} "
            f"into {a.from_frame.value}->{a.to_frame.value}"
        )
    return Transform(
        a.rotation * b.rotation,
        a.rotation.rotate(b.translation) + a.translation,
        b.from_frame,
        a.to_frame,
    )


def inverse(t: Transform) -> Transform:
    rinv = t.rotation.conj()
    return Transform(rinv, -rinv.rotate(t.translation), t.to_frame, t.from_frame)


class SimClock:
    """Monotone integer-microsecond clock advanced only by explicit ticks."""

    def __init__(self, now: int = 0):
        if now < 0:
            raise ValueError("clock cannot start before zero")
        self._now = int(now)

    @property
    def now(self) -> int:
        return self._now

    @property
    def seconds(self) -> float:
        return self._now / US_PER_S

    def tick(self, dt_us: int) -> int:
        if dt_us < 0:
            raise ValueError("clock only moves forward")
        self._now += int(dt_us)
        return self._now

    def advance_to(self, t_us: int) -> int:
        if t_us < self._now:
            raise ValueError(f"cannot rewind clock from {self._now} to {t_us}")
        self._now = int(t_us)
        return self._now
