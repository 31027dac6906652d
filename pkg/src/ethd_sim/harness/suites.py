"""Protocol soak and safety suites.

Both are pure functions of their seed so the CLI and the test-suite share
them. Each returns plain result objects plus a versioned CSV rendering.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..geometry import US_PER_S, SimClock, Vec3
from ..safety import SafetyConfig, SafetyMode, SafetyMonitor, check_head
from ..sequencer import Phase
from ..wireproto import (
    DEFINED_FLAG_BITS,
    DecodeError,
    EndEffectorStateMsg,
    EventDeduplicator,
    EventFlagsMsg,
    EventRepeater,
    HandPoseMsg,
    HeadPoseMsg,
    LinkConfig,
    LoopbackChannel,
    RedundancyPolicy,
    SimTruthMsg,
    decode,
    encode,
)
from .nodes import safety_config
from .runner import Simulation
from .scenario import Scenario

logger = logging.getLogger(__name__)

__all__ = [
    "RoundTripResult",
    "DeliveryResult",
    "ProtocolSoakReport",
    "roundtrip_soak",
    "delivery_soak",
    "protocol_soak",
    "protocol_soak_csv",
    "SafetyCase",
    "head_intrusion_case",
    "safe_zone_exit_case",
    "estop_latch_case",
    "estop_latch_property",
    "safety_suite",
    "safety_suite_csv",
]


# ---------------------------------------------------------------------------
# protocol soak


@dataclass(frozen=True)
class RoundTripResult:
    messages: int
    mismatches: int
    fuzzed: int
    fuzz_unexpected: int

    @property
    def passed(self) -> bool:
        return self.mismatches == 0 and self.fuzz_unexpected == 0


@dataclass(frozen=True)
class DeliveryResult:
    events: int
    delivered: int
    loss: float
    repeat_count: int
    datagrams_sent: int
    datagrams_lost: int

    @property
    def delivery_rate(self) -> float:
        return self.delivered / self.events if self.events else 1.0

    @property
    def theoretical_rate(self) -> float:
        return 1.0 - self.loss ** self.repeat_count


@dataclass
class ProtocolSoakReport:
    roundtrip: RoundTripResult
    delivery: DeliveryResult
    sweep: List[DeliveryResult] = field(default_factory=list)


def _random_floats(rng: np.random.Generator, n: int) -> np.ndarray:
    # log-uniform magnitudes across the useful f32 range, random sign
    mag = 10.0 ** rng.uniform(-6.0, 6.0, n)
    return mag * rng.choice((-1.0, 1.0), n)


def _random_message(rng: np.random.Generator):
    kind = int(rng.integers(5))
    seq = int(rng.integers(0, 2**32))
    ts = int(rng.integers(0, 2**63))
    v = _random_floats(rng, 9).tolist()
    if kind == 0:
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        return HeadPoseMsg(seq, ts, v[:3], tuple(q.tolist()))
    if kind == 1:
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        return HandPoseMsg(seq, ts, int(rng.integers(2)), int(rng.integers(2)), v[:3],
                           tuple(q.tolist()))
    if kind == 2:
        return EventFlagsMsg(seq, ts, int(rng.integers(0, DEFINED_FLAG_BITS + 1)),
                             int(rng.integers(0, 2**32)))
    if kind == 3:
        return EndEffectorStateMsg(seq, ts, v[:3], v[3:6], v[6:9])
    return SimTruthMsg(seq, ts, v[:3], v[3:6])


def roundtrip_soak(n_messages: int = 100_000, seed: int = 0, fuzz: int = 10_000) -> RoundTripResult:
    """Encode/decode ``n_messages`` random messages and check bit-exact re-encoding.

    Also flips random bytes of ``fuzz`` valid datagrams; decoding those must
    either succeed or raise :class:`DecodeError`, never anything else.
    """
    rng = np.random.default_rng(seed)
    mismatches = 0
    samples = []
    for i in range(n_messages):
        msg = _random_message(rng)
        data = encode(msg)
        back = decode(data)
        if back != msg or encode(back) != data:
            mismatches += 1
            logger.warning("round-trip mismatch: %r", msg)
        if i < fuzz:
            samples.append(data)
    unexpected = 0
    for data in samples:
        buf = bytearray(data)
        for _ in range(int(rng.integers(1, 4))):
            buf[int(rng.integers(len(buf)))] = int(rng.integers(256))
        cut = int(rng.integers(len(buf) - 4, len(buf) + 5))
        buf = buf[:cut] if cut <= len(buf) else buf + bytes(cut - len(buf))
        try:
            decode(bytes(buf))
        except DecodeError:
            pass
        except Exception:  # noqa: BLE001 - counting anything that escapes the contract
            unexpected += 1
    return RoundTripResult(n_messages, mismatches, len(samples), unexpected)


def delivery_soak(n_events: int = 10_000, loss: float = 0.3, repeat_count: int = 5,
                  seed: int = 0, frame_us: int = 11_111) -> DeliveryResult:
    """Send ``n_events`` distinct events over a lossy loopback with K-fold repetition.

    Events are spaced K sender frames apart so each one gets all K copies
    before the next supersedes it; the receiver deduplicates by ``event_seq``.
    """
    clock = SimClock()
    channel = LoopbackChannel(clock, LinkConfig(loss=loss), seed=seed)
    repeater = EventRepeater(RedundancyPolicy(repeat_count))
    dedup = EventDeduplicator()
    delivered = set()
    t = 0
    for i in range(n_events):
        repeater.redundant_send(EventFlagsMsg(0, t, 1 << (i % 6), i + 1))
        for _ in range(repeat_count):
            clock.advance_to(t)
            repeater.on_frame(channel, t)
            for data in channel.receive():
                ev = decode(data)
                if dedup.accept(ev):
                    delivered.add(ev.event_seq)
            t += frame_us
    return DeliveryResult(n_events, len(delivered), loss, repeat_count, channel.sent, channel.lost)


def protocol_soak(n_messages: int = 100_000, n_events: int = 10_000, loss: float = 0.3,
                  repeat_count: int = 5, seed: int = 0,
                  sweep_losses: Sequence[float] = (0.0, 0.1, 0.3, 0.5),
                  sweep_repeats: Sequence[int] = (1, 2, 3, 5),
                  sweep_events: int = 2_000) -> ProtocolSoakReport:
    """Round-trip soak, the headline delivery soak and a loss/redundancy sweep."""
    ss = np.random.SeedSequence(seed)
    rt_ss, dl_ss, sw_ss = ss.spawn(3)
    seed_of = lambda s: int(s.generate_state(1)[0])
    rt = roundtrip_soak(n_messages, seed_of(rt_ss))
    dl = delivery_soak(n_events, loss, repeat_count, seed_of(dl_ss))
    sweep = []
    cells = [(p, k) for p in sweep_losses for k in sweep_repeats]
    for (p, k), s in zip(cells, sw_ss.spawn(len(cells))):
        sweep.append(delivery_soak(sweep_events, p, k, seed_of(s)))
    return ProtocolSoakReport(rt, dl, sweep)


def protocol_soak_csv(report: ProtocolSoakReport) -> str:
    buf = io.StringIO()
    buf.write("# protocol-soak/v1\n")
    rt = report.roundtrip
    buf.write(f"# roundtrip messages={rt.messages} mismatches={rt.mismatches} "
              f"fuzzed={rt.fuzzed} fuzz_unexpected={rt.fuzz_unexpected}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run", "loss", "repeat_count", "events", "delivered", "delivery_rate",
                "theoretical_rate", "datagrams_sent", "datagrams_lost"])
    rows = [("soak", report.delivery)] + [("sweep", d) for d in report.sweep]
    for name, d in rows:
        w.writerow([name, f"{d.loss:.3f}", d.repeat_count, d.events, d.delivered,
                    f"{d.delivery_rate:.6f}", f"{d.theoretical_rate:.6f}", d.datagrams_sent,
                    d.datagrams_lost])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# safety suite


@dataclass
class SafetyCase:
    name: str
    passed: bool
    metrics: Dict[str, float] = field(default_factory=dict)
    message: str = ""


def _frame_times(rate_hz: float, until_us: int) -> List[int]:
    out, k = [], 0
    while True:
        t = round(k * US_PER_S / rate_hz)
        if t > until_us:
            return out
        out.append(t)
        k += 1


def intrusion_scenario(base: Optional[Scenario] = None) -> Scenario:
    """Head walks to the mark, then lunges into the robot workspace while the
    robot is still moving to its ready pose, stays there, then steps back.

    The safe zone is widened so the halt is attributable to the workspace
    check alone, and the plant is slowed so it is mid-motion at the lunge.
    """
    sc = base or Scenario()
    mx, my = sc.geometry.mark
    h = sc.user.head_height_m
    waypoints = [
        [0.0, [mx, my + 0.25, h]],
        [0.3, [mx, my, h]],
        [0.45, [mx, my, h]],
        [0.75, [0.30, my, h]],
        [1.25, [0.30, my, h]],
        [1.55, [mx, my, h]],
    ]
    return sc.replace(
        user={"head_waypoints": waypoints},
        safety={"safe_zone_extents": [3.2, 3.2]},
        plant={"max_speed_mps": 0.3},
        run={"abort_on_estop": False},
    )


def head_intrusion_case(base: Optional[Scenario] = None, run_s: float = 2.0) -> SafetyCase:
    """Plant must stop on the very tick that first sees an in-workspace head pose."""
    sc = intrusion_scenario(base)
    sim = Simulation(sc, trace=True, coast=False)
    end_us = round(run_s * US_PER_S)
    sim.run_until(end_us)
    robot = sim.robot
    cfg = robot.safety.config
    tick = robot.tick_us

    halts = [tr for tr in robot.safety.transitions if tr.to_mode is SafetyMode.HALTED
             and tr.cause.value == "head_in_workspace"]
    if not halts:
        return SafetyCase("head_intrusion", False, message="no workspace halt recorded")
    t_halt = halts[0].timestamp_us
    releases = [tr.timestamp_us for tr in robot.safety.transitions
                if tr.timestamp_us > t_halt and tr.from_mode is SafetyMode.HALTED]
    t_release = releases[0] if releases else end_us + tick

    # expected delivering tick: first robot tick after the first headset frame
    # whose reported head pose is inside the sphere (zero-delay links, robot
    # tick runs before a frame at the same microsecond)
    head_lat = round(sc.tracking.head_latency_ms * 1000)
    expected = None
    for f in _frame_times(sc.tracking.sample_rate_hz, end_us):
        if check_head(sim.world.head_script.at(f - head_lat), cfg):
            expected = (f // tick + 1) * tick
            break

    pos = {row[0] * tick: (row[4], row[5], row[6]) for row in robot.trace}
    before = pos.get(t_halt - tick)
    held = [t for t in range(t_halt, t_release, tick) if t in pos]
    moved = max((Vec3(*pos[t]).dist(Vec3(*before)) for t in held), default=0.0) if before else float("inf")
    prior = pos.get(t_halt - 2 * tick)
    speed_before = Vec3(*before).dist(Vec3(*prior)) / (tick / US_PER_S) if before and prior else 0.0

    # deepest penetration of the true head before the halt took effect
    depth = 0.0
    for t in range(0, t_halt + 1, tick):
        d = cfg.workspace_radius_m - sim.world.head_script.at(t).dist(cfg.workspace_center)
        depth = max(depth, d)

    ok = expected == t_halt and moved == 0.0 and len(held) > 0
    return SafetyCase("head_intrusion", ok, {
        "halt_tick_us": t_halt,
        "expected_tick_us": -1 if expected is None else expected,
        "release_us": t_release,
        "held_ticks": len(held),
        "displacement_after_halt_m": moved,
        "plant_speed_before_halt_mps": speed_before,
        "max_intrusion_depth_m": depth,
    }, "" if ok else "plant was not frozen on the delivering tick")


def safe_zone_exit_scenario(base: Optional[Scenario] = None) -> Scenario:
    """Head stands on the mark, then walks sideways out of the safe zone."""
    sc = base or Scenario()
    mx, my = sc.geometry.mark
    h = sc.user.head_height_m
    waypoints = [
        [0.0, [mx, my + 0.25, h]],
        [0.5, [mx, my, h]],
        [1.0, [mx, my, h]],
        [1.5, [mx, my + 0.7, h]],
    ]
    return sc.replace(user={"head_waypoints": waypoints}, run={"abort_on_estop": False})


def safe_zone_exit_case(base: Optional[Scenario] = None, run_s: float = 1.6) -> SafetyCase:
    """Passthrough must be raised by the first headset frame after the head leaves."""
    sc = safe_zone_exit_scenario(base)
    sim = Simulation(sc, coast=False)
    end_us = round(run_s * US_PER_S)
    sim.run_until(end_us)
    cfg = safety_config(sc)
    cx, cy = cfg.safe_zone_center
    ex, ey = cfg.safe_zone_extents

    def outside(t):
        p = sim.world.head_script.at(t)
        return abs(p.x - cx) > ex / 2.0 or abs(p.y - cy) > ey / 2.0

    # first microsecond outside, by bisection on the monotone exit leg
    lo, hi = 0, end_us
    if not outside(hi):
        return SafetyCase("safe_zone_exit", False, message="script never leaves the safe zone")
    lo = max(t for t in range(0, end_us, 1000) if not outside(t))
    while hi - lo > 1:
        mid = (lo + hi) // 2
        lo, hi = (mid, hi) if not outside(mid) else (lo, mid)
    t_exit = hi

    raised = [t for t, on in sim.headset.passthrough_log if on and t >= t_exit]
    frame_us = US_PER_S / sc.tracking.sample_rate_hz
    robot_pt = [tr.timestamp_us for tr in sim.robot.safety.transitions
                if tr.to_mode is SafetyMode.PASSTHROUGH and tr.timestamp_us >= t_exit]
    if not raised:
        return SafetyCase("safe_zone_exit", False, {"exit_us": t_exit}, "passthrough never raised")
    delay = raised[0] - t_exit
    ok = delay <= frame_us
    return SafetyCase("safe_zone_exit", ok, {
        "exit_us": t_exit,
        "headset_passthrough_us": raised[0],
        "headset_delay_us": delay,
        "frame_period_us": frame_us,
        "robot_passthrough_us": robot_pt[0] if robot_pt else -1,
    }, "" if ok else "passthrough raised later than one headset frame")


def estop_latch_case(base: Optional[Scenario] = None, estop_s: float = 1.0,
                     run_s: float = 4.0) -> SafetyCase:
    """Operator e-stop with no reset: the robot stays in ESTOP and never moves again."""
    sc = (base or Scenario()).replace(operator={"estop_at_s": estop_s, "reset_at_s": None},
                                      run={"abort_on_estop": False})
    sim = Simulation(sc, trace=True, coast=False)
    sim.run_until(round(run_s * US_PER_S))
    robot = sim.robot
    tick = robot.tick_us
    tr = robot.safety.transitions
    into = [t for t in tr if t.to_mode is SafetyMode.ESTOP]
    t_stop = into[0].timestamp_us if into else -1
    later = [t for t in tr if t_stop >= 0 and t.timestamp_us > t_stop]
    rows = [r for r in robot.trace if r[0] * tick >= t_stop >= 0]
    moved = max((abs(r[c] - rows[0][c]) for r in rows for c in (4, 5, 6)), default=0.0)
    ok = (bool(into) and not later and robot.safety.state.mode is SafetyMode.ESTOP
          and moved == 0.0 and robot.phase is not Phase.COMPLETE)
    return SafetyCase("estop_latch", ok, {
        "estop_us": t_stop,
        "transitions_after_estop": len(later),
        "displacement_after_estop_m": moved,
    }, "" if ok else "e-stop did not latch")


def _random_head(rng: np.random.Generator, cfg: SafetyConfig) -> Optional[Vec3]:
    c = rng.integers(4)
    cx, cy = cfg.safe_zone_center
    if c == 0:
        return None
    if c == 1:  # inside the workspace sphere
        d = rng.normal(size=3)
        d = d / np.linalg.norm(d) * rng.uniform(0, cfg.workspace_radius_m * 0.99)
        return cfg.workspace_center + Vec3.of(d)
    if c == 2:  # outside the safe zone
        return Vec3(cx + rng.choice((-1, 1)) * rng.uniform(cfg.safe_zone_extents[0] / 2 + 0.01, 3.0),
                    cy + rng.uniform(-2.0, 2.0), 1.65)
    return Vec3(cx + rng.uniform(-0.25, 0.25), cy + rng.uniform(-0.25, 0.25), 1.65)


def estop_latch_property(n_scripts: int = 1000, length: int = 200, seed: int = 0,
                         cfg: SafetyConfig = SafetyConfig()) -> Tuple[int, int]:
    """Drive the monitor with random non-reset scripts containing one e-stop.

    Returns ``(scripts, violations)``; a violation is any tick after the
    e-stop where the mode is not ESTOP.
    """
    rng = np.random.default_rng(seed)
    violations = 0
    for _ in range(n_scripts):
        mon = SafetyMonitor(cfg)
        at = int(rng.integers(0, length))
        bad = False
        for i in range(length):
            estop = i == at or (i > at and rng.random() < 0.05)
            mon.step(_random_head(rng, cfg), estop, i * 1000)
            if i >= at and mon.state.mode is not SafetyMode.ESTOP:
                bad = True
        violations += bad
    return n_scripts, violations


def safety_suite(seed: int = 0, base: Optional[Scenario] = None,
                 n_scripts: int = 1000) -> List[SafetyCase]:
    base = (base or Scenario()).replace(seed=seed)
    cases = [head_intrusion_case(base), safe_zone_exit_case(base), estop_latch_case(base)]
    n, bad = estop_latch_property(n_scripts, seed=seed, cfg=safety_config(base))
    cases.append(SafetyCase("estop_latch_property", bad == 0,
                            {"scripts": n, "violations": bad},
                            "" if bad == 0 else f"{bad} scripts released the latch"))
    return cases


def safety_suite_csv(cases: Sequence[SafetyCase]) -> str:
    buf = io.StringIO()
    buf.write("# safety-suite/v1\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["case", "passed", "metric", "value"])
    for c in cases:
        if not c.metrics:
            w.writerow([c.name, int(c.passed), "", ""])
        for k, v in c.metrics.items():
            w.writerow([c.name, int(c.passed), k, f"{v:.9g}" if isinstance(v, float) else v])
    return buf.getvalue()
