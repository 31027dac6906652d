"""Trial execution on the virtual clock, batch statistics and colocation runs."""

from __future__ import annotations

import dataclasses
import logging
import math
import statistics
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..controller import InteractionKind, Strategy
from ..geometry import US_PER_S, Frame, Pose, Quat, SimClock, Vec3
from ..registration import NoiseModel, colocation_error, generate_samples, register
from ..safety import SafetyMode
from ..sequencer import Phase
from ..wireproto import LinkConfig, LoopbackChannel
from .nodes import HeadsetNode, RobotNode, World, derive_params
from .scenario import Scenario

logger = logging.getLogger(__name__)

__all__ = [
    "TrialError",
    "TrialTimeout",
    "SafetyAbort",
    "TrialRecord",
    "TrialBatchReport",
    "ColocationReport",
    "Simulation",
    "run_trial",
    "run_batch",
    "run_colocation_eval",
    "trial_seeds",
]


class TrialError(RuntimeError):
    status = "error"

    def __init__(self, message: str, record: "TrialRecord" = None):
        super().__init__(message)
        self.record = record


class TrialTimeout(TrialError):
    status = "timeout"


class SafetyAbort(TrialError):
    status = "safety_abort"


@dataclass
class TrialRecord:
    seed: int
    kind: InteractionKind
    strategy: Strategy
    status: str = "ok"
    t_physical_us: Optional[int] = None
    t_virtual_us: Optional[int] = None
    contact_point: Optional[Vec3] = None
    end_us: int = 0
    phases: List[Phase] = field(default_factory=list)
    message: str = ""

    @property
    def latency_us(self) -> Optional[int]:
        if self.t_physical_us is None or self.t_virtual_us is None:
            return None
        return self.t_virtual_us - self.t_physical_us

    @property
    def latency_ms(self) -> Optional[float]:
        lat = self.latency_us
        return None if lat is None else lat / 1000.0


def _link(section) -> LinkConfig:
    return LinkConfig(section.loss, section.latency_us, section.jitter_us)


class Simulation:
    """One scenario wired up on a virtual clock.

    Robot ticks and headset frames are processed in timestamp order; when both
    fall on the same microsecond the robot tick runs first.
    """

    def __init__(self, sc: Scenario, trace: Optional[bool] = None, coast: Optional[bool] = None):
        self.sc = sc
        self.params = derive_params(sc)
        self.clock = SimClock()
        t = sc.transport
        self.r2h = LoopbackChannel(self.clock, _link(t.robot_to_headset), self.params.link_seeds[0])
        self.h2r = LoopbackChannel(self.clock, _link(t.headset_to_robot), self.params.link_seeds[1])
        self.world = World(sc, self.params)
        self.robot = RobotNode(sc, self.r2h, self.h2r, on_avatar_cue=self.world.avatar_cue,
                               trace=sc.run.trace if trace is None else trace)
        self.headset = HeadsetNode(sc, self.params, self.h2r, self.r2h, truth=self.world)
        self.tick_us = self.robot.tick_us
        self.rate = sc.tracking.sample_rate_hz
        self._robot_t = 0
        self._frame_k = 0
        self._next_frame = 0
        op = sc.operator
        self.estop_us = None if op.estop_at_s is None else round(op.estop_at_s * US_PER_S)
        self.reset_us = None if op.reset_at_s is None else round(op.reset_at_s * US_PER_S)
        self._estop_done = False
        self._reset_done = False
        # idle-tick compression needs datagrams to arrive exactly at send time
        if coast is None:
            coast = sc.run.coast_idle
        self.coast = coast and self.r2h.perfect and self.h2r.perfect
        self._robot_inbox_dirty = True
        self.coasted_ticks = 0

    def _operator(self, now: int) -> Tuple[bool, bool]:
        estop = reset = False
        if self.estop_us is not None and not self._estop_done and now >= self.estop_us:
            estop = self._estop_done = True
        if self.reset_us is not None and not self._reset_done and now >= self.reset_us:
            reset = self._reset_done = True
        return estop, reset

    def _operator_bound(self) -> int:
        """Last tick time before the next pending operator input."""
        bound = 1 << 62
        if self.estop_us is not None and not self._estop_done:
            bound = min(bound, self.estop_us - 1)
        if self.reset_us is not None and not self._reset_done:
            bound = min(bound, self.reset_us - 1)
        return bound

    def _try_coast(self, limit_us: int) -> bool:
        robot = self.robot
        mode, budget = robot.coast_budget()
        if budget <= 0:
            return False
        if mode == "moving" and not self.world.prop_independent():
            return False
        t0 = self._robot_t
        end = min(self._next_frame, self._operator_bound(), limit_us)
        n = min(budget, (end - t0) // self.tick_us + 1)
        if n < 2:
            return False
        times = list(range(t0, t0 + n * self.tick_us, self.tick_us))
        start = robot.plant.position
        hands = self.world.preview(times, start)
        times = times[:len(hands)]
        if mode == "idle":
            k = robot.coast(times, hands)
        else:
            k = robot.coast_moving(times, hands)
        if k == 0:
            return False
        self.world.commit(times[:k], hands[:k], start)
        self.clock.advance_to(times[k - 1])
        self._robot_t = times[k - 1] + self.tick_us
        self.coasted_ticks += k
        return True

    def step(self, limit_us: int = 1 << 62) -> str:
        """Process the next event. Returns ``"robot"`` or ``"headset"``.

        When coasting is enabled several idle robot ticks (never past
        ``limit_us``) may be consumed in one call.
        """
        if self._robot_t <= self._next_frame:
            if self.coast and not self._robot_inbox_dirty and self._try_coast(limit_us):
                return "robot"
            now = self._robot_t
            self.clock.advance_to(now)
            hand = self.world.step(now, self.robot.plant.position)
            estop, reset = self._operator(now)
            self.robot.tick(now, hand, estop, reset)
            self._robot_t += self.tick_us
            self._robot_inbox_dirty = False
            return "robot"
        now = self._next_frame
        self.clock.advance_to(now)
        self.headset.frame(now)
        self._robot_inbox_dirty = True
        self._frame_k += 1
        self._next_frame = round(self._frame_k * US_PER_S / self.rate)
        return "headset"

    def run_until(self, t_us: int) -> None:
        while min(self._robot_t, self._next_frame) <= t_us:
            self.step()

    @property
    def now(self) -> int:
        return self.clock.now


def run_trial(sc: Scenario, trace: Optional[bool] = None, sim: Optional[Simulation] = None) -> TrialRecord:
    """Run one full interaction sequence on the virtual clock.

    Raises :class:`TrialTimeout` if contact (or the matching virtual collision)
    is not observed within the horizon, and :class:`SafetyAbort` if the
    emergency stop latches while ``run.abort_on_estop`` is set.
    """
    sim = sim or Simulation(sc, trace)
    robot, headset = sim.robot, sim.headset
    rec = TrialRecord(sc.seed, sc.interaction.kind, sc.interaction.strategy)
    horizon = round(sc.run.horizon_s * US_PER_S)
    grace = round(sc.run.virtual_grace_s * US_PER_S)
    complete_at = None

    def finish(status, message=""):
        rec.status = status
        rec.message = message
        rec.t_physical_us = robot.t_physical_us
        rec.t_virtual_us = headset.t_virtual_us
        rec.contact_point = robot.contact_point
        rec.end_us = sim.now
        rec.phases = robot.sequencer.visited
        return rec

    while True:
        who = sim.step(horizon)
        if who != "robot":
            continue
        now = sim.now
        if sc.run.abort_on_estop and robot.safety.state.mode is SafetyMode.ESTOP:
            raise SafetyAbort(f"emergency stop latched at {now} us", finish("safety_abort", "estop"))
        if robot.phase is Phase.COMPLETE:
            if complete_at is None:
                complete_at = now
            if headset.t_virtual_us is not None:
                return finish("ok")
            if now - complete_at >= grace:
                raise TrialTimeout("virtual collision never registered",
                                   finish("timeout", "no virtual collision"))
        if now >= horizon:
            raise TrialTimeout(f"no completed contact within {sc.run.horizon_s} s "
                               f"(phase {robot.phase.label})",
                               finish("timeout", f"stuck in {robot.phase.label}"))


def trial_seeds(seed: int, n: int, same_seed: bool = False, key: Sequence[int] = ()) -> List[int]:
    """Per-trial scenario seeds spawned from ``seed``.

    ``key`` separates streams, so conditions run with the same batch seed
    still get independent trials.
    """
    if same_seed:
        return [int(seed)] * n
    ss = np.random.SeedSequence([int(seed), *key])
    return [int(s.generate_state(1)[0]) for s in ss.spawn(n)]


def condition_key(kind: InteractionKind, strategy: Strategy) -> Tuple[int, int]:
    return list(InteractionKind).index(kind), list(Strategy).index(strategy)


@dataclass
class TrialBatchReport:
    kind: InteractionKind
    strategy: Strategy
    trials: List[TrialRecord]
    trial_count: int
    mean_latency_ms: float
    std_latency_ms: float
    degenerate: bool = False
    failed: int = 0
    colocation_error_mm: Optional[Tuple[float, float]] = None

    @property
    def latencies_ms(self) -> List[float]:
        return [t.latency_ms for t in self.trials if t.status == "ok"]


def summarize(latencies: Sequence[float]) -> Tuple[float, float, bool]:
    """Mean and sample (n-1) standard deviation; ``degenerate`` when n == 1."""
    if not latencies:
        return math.nan, math.nan, True
    mean = statistics.fmean(latencies)
    if len(latencies) == 1:
        return mean, 0.0, True
    return mean, statistics.stdev(latencies), False


def run_batch(kind, strategy, n_trials: int, seed: int, base: Optional[Scenario] = None,
              same_seed: bool = False) -> TrialBatchReport:
    """Run ``n_trials`` independently seeded trials of one interaction condition.

    Failed trials keep their status in ``trials`` and are excluded from the
    latency statistics.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    base = base or Scenario()
    sc0 = base.replace(interaction={"kind": InteractionKind(kind), "strategy": Strategy(strategy)})
    records = []
    key = condition_key(sc0.interaction.kind, sc0.interaction.strategy)
    for s in trial_seeds(seed, n_trials, same_seed, key):
        sc = dataclasses.replace(sc0, seed=s)
        try:
            records.append(run_trial(sc, trace=False))
        except TrialError as exc:
            logger.warning("trial seed=%d failed: %s", s, exc)
            records.append(exc.record)
    ok = [r.latency_ms for r in records if r.status == "ok"]
    mean, std, degenerate = summarize(ok)
    return TrialBatchReport(sc0.interaction.kind, sc0.interaction.strategy, records, len(ok),
                            mean, std, degenerate, len(records) - len(ok))


@dataclass
class ColocationReport:
    measurements_mm: List[float]
    rows: List[list]
    mean_mm: float
    std_mm: float

    @property
    def count(self) -> int:
        return len(self.measurements_mm)


DEFAULT_BOARD_POSE = Pose(Vec3(0.35, -0.40, 1.20), Quat.from_axis_angle((0.0, 0.0, 1.0), 0.6),
                          Frame.HEADSET)


def run_colocation_eval(n_registrations: int = 20, probes_per: int = 5,
                        noise: NoiseModel = NoiseModel(), seed: int = 0,
                        truth: Pose = DEFAULT_BOARD_POSE) -> ColocationReport:
    """Repeat registration ``n_registrations`` times and measure ``probes_per`` probe errors each."""
    if n_registrations < 1 or probes_per < 1:
        raise ValueError("need at least one registration and one probe")
    seeds = trial_seeds(seed, n_registrations)
    probe_rng = np.random.default_rng(seed)
    measurements, rows = [], []
    for s in seeds:
        anchor = register(generate_samples(truth, dataclasses.replace(noise, seed=s)))
        probes = [truth.position + Vec3.of(probe_rng.uniform(-0.5, 0.5, 3)) for _ in range(probes_per)]
        errs = [colocation_error(anchor, truth, [p]) * 1000.0 for p in probes]
        measurements.extend(errs)
        rows.append([s, anchor.sample_count, anchor.accepted_count,
                     f"{statistics.fmean(errs):.6f}", f"{anchor.residual_rms_m * 1000.0:.6f}"])
    mean, std, _ = summarize(measurements)
    return ColocationReport(measurements, rows, mean, std)
