"""Simulated user: reaching hand, scripted head, and headset hand tracking.

The hand follows a minimum-jerk reach toward either a fixed point or the live
prop position (re-targeted every tick), plus a slowly varying Gaussian tremor.
The tracking pipeline samples the hand at ~90 Hz, reports the position it had
``latency_ms`` earlier, and adds white measurement noise.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .controller import min_jerk
from .geometry import US_PER_S, Vec3
from .wireproto import HandPoseMsg

__all__ = [
    "Aim",
    "ReachProfile",
    "SimulatedHand",
    "HeadScript",
    "TrackingPipeline",
    "hand_truth",
    "tracked_hand",
    "frame_times_us",
]

# peak speed of s(u) = 10u^3 - 15u^4 + 6u^5 is s'(1/2) = 15/8
MIN_JERK_PEAK = 1.875


class Aim(str, Enum):
    PROP_POSITION = "prop"
    FIXED_POINT = "fixed"


@dataclass(frozen=True)
class ReachProfile:
    start: Vec3
    aim: Aim = Aim.FIXED_POINT
    fixed_point: Optional[Vec3] = None
    peak_speed_mps: float = 1.0
    duration_s: Optional[float] = None
    jitter_sigma_m: float = 0.002
    # correlation time of the tremor process; the marginal std stays jitter_sigma_m
    jitter_tau_s: float = 0.1
    seed: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "aim", Aim(self.aim))
        if self.peak_speed_mps <= 0.0:
            raise ValueError("peak speed must be positive")
        if self.duration_s is not None and self.duration_s <= 0.0:
            raise ValueError("reach duration must be positive")
        if self.aim is Aim.FIXED_POINT and self.fixed_point is None:
            raise ValueError("fixed-point aim needs fixed_point")
        if self.jitter_sigma_m < 0.0 or self.jitter_tau_s <= 0.0:
            raise ValueError("jitter sigma must be >= 0 and tau > 0")

    def duration_for(self, distance_m: float) -> float:
        if self.duration_s is not None:
            return self.duration_s
        return max(MIN_JERK_PEAK * distance_m / self.peak_speed_mps, 1e-3)


def hand_truth(profile: ReachProfile, t_s: float, aim_point: Optional[Vec3] = None) -> Vec3:
    """Noise-free reach position ``t_s`` seconds after reach onset."""
    if t_s < 0.0:
        raise ValueError("t_s must be >= 0")
    if profile.aim is Aim.FIXED_POINT or aim_point is None:
        aim_point = profile.fixed_point if profile.fixed_point is not None else aim_point
    if aim_point is None:
        raise ValueError("prop-position aim needs the live aim_point")
    T = profile.duration_for(profile.start.dist(aim_point))
    return profile.start.lerp(aim_point, min_jerk(t_s / T))


class SimulatedHand:
    """Stateful hand advanced once per robot tick; keeps its truth history."""

    def __init__(self, profile: ReachProfile, tick_us: int = 1000):
        self.profile = profile
        self.tick_us = tick_us
        self.rng = np.random.default_rng(profile.seed)
        self.onset_us: Optional[int] = None
        self.duration_s: Optional[float] = None
        # where a completed reach came to rest
        self.end_point: Optional[Vec3] = None
        self.position = profile.start
        self._times: List[int] = []
        self._hist: List[Vec3] = []
        sigma = profile.jitter_sigma_m
        self._rho = float(np.exp(-(tick_us / US_PER_S) / profile.jitter_tau_s))
        self._innov = sigma * float(np.sqrt(1.0 - self._rho ** 2))
        self._jit = tuple(self.rng.normal(0.0, sigma, 3).tolist()) if sigma > 0.0 else (0.0, 0.0, 0.0)
        self._block: List[tuple] = []
        self._bi = 0

    def begin_reach(self, now_us: int, aim_point: Vec3) -> None:
        if self.onset_us is None:
            self.onset_us = now_us
            self.duration_s = self.profile.duration_for(self.profile.start.dist(self._aim(aim_point)))

    def _aim(self, live: Optional[Vec3]) -> Vec3:
        if self.profile.aim is Aim.FIXED_POINT or live is None:
            return self.profile.fixed_point if self.profile.fixed_point is not None else live
        return live

    def _refill(self, n: int = 1024) -> None:
        # AR(1) recursion over a block of innovations, one tuple per tick
        rho, k = self._rho, self._innov
        x, y, z = self._jit
        if self._bi > 4096:
            del self._block[:self._bi]
            self._bi = 0
        out = self._block
        for a, b, c in self.rng.standard_normal((n, 3)).tolist():
            x = rho * x + k * a
            y = rho * y + k * b
            z = rho * z + k * c
            out.append((x, y, z))
        self._jit = (x, y, z)

    def _jitter_ahead(self, n: int) -> List[tuple]:
        """The next ``n`` tremor samples without consuming them."""
        if self.profile.jitter_sigma_m == 0.0:
            return [(0.0, 0.0, 0.0)] * n
        while len(self._block) - self._bi < n:
            self._refill()
        return self._block[self._bi:self._bi + n]

    def _base(self, now_us: int, live_prop: Optional[Vec3]) -> Vec3:
        p = self.profile
        if self.onset_us is None or now_us <= self.onset_us:
            return p.start
        if self.end_point is not None:
            return self.end_point
        u = (now_us - self.onset_us) / US_PER_S / self.duration_s
        return p.start.lerp(self._aim(live_prop), min_jerk(u))

    def _latch(self, now_us: int, live_prop: Optional[Vec3]) -> None:
        # a finished reach stays where it ended instead of following the prop
        if self.end_point is None and self.onset_us is not None \
                and (now_us - self.onset_us) / US_PER_S >= self.duration_s:
            self.end_point = self._aim(live_prop)

    def step(self, now_us: int, live_prop: Optional[Vec3] = None) -> Vec3:
        (pos,) = self.preview((now_us,), live_prop)
        self.commit((now_us,), (pos,), live_prop)
        return pos

    def preview(self, times: Sequence[int], live_prop: Optional[Vec3] = None) -> List[Vec3]:
        """Positions :meth:`step` would produce at ``times``, without advancing state.

        Assumes ``live_prop`` stays fixed over ``times`` and no reach starts
        in between.
        """
        out = []
        end = self.end_point
        for t, (jx, jy, jz) in zip(times, self._jitter_ahead(len(times))):
            if end is None and self.onset_us is not None \
                    and (t - self.onset_us) / US_PER_S >= self.duration_s:
                end = self._aim(live_prop)
            base = end if end is not None else self._base(t, live_prop)
            out.append(Vec3(base.x + jx, base.y + jy, base.z + jz))
        return out

    def commit(self, times: Sequence[int], positions: Sequence[Vec3],
               live_prop: Optional[Vec3] = None) -> None:
        if not times:
            return
        self._latch(times[-1], live_prop)
        self._bi += len(times)
        self._times.extend(times)
        self._hist.extend(positions)
        self.position = positions[-1]

    def at(self, t_us: int) -> Vec3:
        """Truth position at ``t_us``, linearly interpolated between ticks."""
        times = self._times
        if not times or t_us <= times[0]:
            return self._hist[0] if times else self.profile.start
        if t_us >= times[-1]:
            return self._hist[-1]
        i = bisect.bisect_right(times, t_us) - 1
        t0 = times[i]
        if t0 == t_us:
            return self._hist[i]
        t1 = times[i + 1]
        return self._hist[i].lerp(self._hist[i + 1], (t_us - t0) / (t1 - t0))


@dataclass(frozen=True)
class HeadScript:
    """Piecewise-linear head waypoints ``(t_s, position)``; holds the last one."""

    waypoints: Tuple[Tuple[float, Vec3], ...]

    def __post_init__(self):
        if not self.waypoints:
            raise ValueError("head script needs at least one waypoint")
        ts = [t for t, _ in self.waypoints]
        if ts != sorted(ts):
            raise ValueError("head waypoints must be time-ordered")
        object.__setattr__(self, "_ts", [round(t * US_PER_S) for t in ts])

    def at(self, t_us: int) -> Vec3:
        ts = self._ts
        wps = self.waypoints
        if t_us <= ts[0]:
            return wps[0][1]
        if t_us >= ts[-1]:
            return wps[-1][1]
        i = bisect.bisect_right(ts, t_us) - 1
        return wps[i][1].lerp(wps[i + 1][1], (t_us - ts[i]) / (ts[i + 1] - ts[i]))

    def stationary_after(self, t_us: int) -> bool:
        return t_us >= self._ts[-1]


def frame_times_us(rate_hz: float, t_end_us: int) -> Iterator[int]:
    """Sample instants k/rate, rounded to whole microseconds, up to ``t_end_us``."""
    k = 0
    while True:
        t = round(k * US_PER_S / rate_hz)
        if t > t_end_us:
            return
        yield t
        k += 1


@dataclass
class TrackingPipeline:
    sample_rate_hz: float = 90.0
    latency_ms: float = 30.0
    noise_sigma_m: float = 0.002
    dropout_rate: float = 0.0
    hand_id: int = HandPoseMsg.RIGHT
    seed: Optional[int] = None
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.sample_rate_hz <= 0.0:
            raise ValueError("sample rate must be positive")
        if self.latency_ms < 0.0:
            raise ValueError("latency must be non-negative")
        if not 0.0 <= self.dropout_rate <= 1.0:
            raise ValueError("dropout rate must be in [0, 1]")
        self.rng = np.random.default_rng(self.seed)

    @property
    def latency_us(self) -> int:
        return round(self.latency_ms * 1000.0)

    def capture_time(self, emit_us: int) -> int:
        return emit_us - self.latency_us

    def sample(self, emit_us: int, truth: Callable[[int], Vec3], seq: int = 0) -> HandPoseMsg:
        """Tracked hand for the frame at ``emit_us``.

        Noise and dropout draws happen every frame in a fixed order so a seed
        yields the same stream regardless of configuration changes elsewhere.
        """
        noise = self.rng.standard_normal(3) * self.noise_sigma_m
        dropped = self.rng.random() < self.dropout_rate
        if dropped:
            return HandPoseMsg(seq, emit_us, self.hand_id, 0, (0.0, 0.0, 0.0))
        p = truth(max(0, self.capture_time(emit_us)))
        return HandPoseMsg(seq, emit_us, self.hand_id, 1,
                           (p.x + noise[0], p.y + noise[1], p.z + noise[2]))


def tracked_hand(pipeline: TrackingPipeline, truth_history: Callable[[int], Vec3],
                 t_end_us: int, t_start_us: int = 0) -> List[HandPoseMsg]:
    """Sampled, delayed, noisy stream of hand messages over ``[t_start_us, t_end_us]``."""
    out = []
    for seq, t in enumerate(x for x in frame_times_us(pipeline.sample_rate_hz, t_end_us)
                            if x >= t_start_us):
        out.append(pipeline.sample(t, truth_history, seq))
    return out
