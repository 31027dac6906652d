"""Two-process real-time mode over UDP.

The robot process owns the physical world (scripted head, reaching hand) and
runs the 1000 Hz loop; it streams ground truth to the headset process as
simulation-only SimTruth datagrams. The headset process runs the 90 Hz loop,
with its clock aligned to the first truth timestamp it receives.

Both loops stamp messages on the ideal schedule (tick ``k`` at ``k`` ms,
frame ``k`` at ``round(k * 1e6 / rate)`` us) and sleep until that instant on
the wall clock; a late loop catches up without skipping ticks.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

from ..geometry import US_PER_S
from ..safety import SafetyMode
from ..sequencer import Phase
from ..wireproto import HEADSET_PORT, ROBOT_PORT, MsgType, SequenceCounter, SimTruthMsg, UdpTransport, encode
from .nodes import HeadsetNode, RobotNode, TruthFeed, World, derive_params
from .scenario import Scenario

logger = logging.getLogger(__name__)

__all__ = [
    "Endpoints",
    "RobotRunResult",
    "HeadsetRunResult",
    "decision_log",
    "decisions_csv",
    "serve_robot",
    "serve_headset",
]


@dataclass(frozen=True)
class Endpoints:
    host: str = "127.0.0.1"
    robot_port: int = ROBOT_PORT
    headset_port: int = HEADSET_PORT


def decision_log(robot: RobotNode) -> List[Tuple[str, str]]:
    """Timestamp-free record of what the robot decided, in order.

    Phases visited, safety mode changes with their cause, and whether a
    physical contact was registered. Two runs of the same scenario agree on
    this even when message timing differs.
    """
    out = [("phase", p.label) for p in robot.sequencer.visited]
    out += [("safety", f"{t.to_mode.name}:{t.cause.value}") for t in robot.safety.transitions]
    out.append(("contact", "yes" if robot.t_physical_us is not None else "no"))
    return out


def decisions_csv(decisions: List[Tuple[str, str]]) -> str:
    buf = io.StringIO()
    buf.write("# decisions/v1\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "kind", "value"])
    for i, (k, v) in enumerate(decisions):
        w.writerow([i, k, v])
    return buf.getvalue()


@dataclass
class RobotRunResult:
    status: str
    end_us: int
    t_physical_us: Optional[int]
    decisions: List[Tuple[str, str]] = field(default_factory=list)
    late_ticks: int = 0


@dataclass
class HeadsetRunResult:
    status: str
    frames: int
    t_virtual_us: Optional[int]
    passthrough_log: List[tuple] = field(default_factory=list)


def _sleep_until(deadline: float) -> bool:
    """Sleep until ``deadline`` (perf_counter seconds); False if already late."""
    delay = deadline - time.perf_counter()
    if delay > 0:
        time.sleep(delay)
        return True
    return False


def serve_robot(sc: Scenario, ends: Endpoints = Endpoints(), out: Optional[Path] = None) -> RobotRunResult:
    """Run the robot loop against a headset process until the trial ends."""
    params = derive_params(sc)
    world = World(sc, params)
    link = UdpTransport((ends.host, ends.robot_port), (ends.host, ends.headset_port))
    robot = RobotNode(sc, link, link, on_avatar_cue=world.avatar_cue, trace=sc.run.trace)
    truth_seq = SequenceCounter()
    tick_us = robot.tick_us
    horizon = round(sc.run.horizon_s * US_PER_S)
    grace = round(sc.run.virtual_grace_s * US_PER_S)
    estop_us = None if sc.operator.estop_at_s is None else round(sc.operator.estop_at_s * US_PER_S)
    reset_us = None if sc.operator.reset_at_s is None else round(sc.operator.reset_at_s * US_PER_S)
    late = 0
    status = "timeout"
    complete_at = None
    now = 0
    t0 = time.perf_counter()
    logger.info("robot loop on %s:%d -> %s:%d", ends.host, ends.robot_port, ends.host, ends.headset_port)
    try:
        while now <= horizon:
            if not _sleep_until(t0 + now / US_PER_S):
                late += 1
            hand = world.step(now, robot.plant.position)
            head = world.head
            link.send(encode(SimTruthMsg(truth_seq.next(MsgType.SIM_TRUTH), now,
                                         (head.x, head.y, head.z), (hand.x, hand.y, hand.z))))
            robot.tick(now, hand, estop=estop_us is not None and now == estop_us,
                       reset=reset_us is not None and now == reset_us)
            if sc.run.abort_on_estop and robot.safety.state.mode is SafetyMode.ESTOP:
                status = "safety_abort"
                break
            if robot.phase is Phase.COMPLETE:
                if complete_at is None:
                    complete_at = now
                # keep streaming so the headset can register the virtual collision
                if now - complete_at >= grace:
                    status = "ok"
                    break
            now += tick_us
    finally:
        link.close()
    result = RobotRunResult(status, now, robot.t_physical_us, decision_log(robot), late)
    logger.info("robot loop finished: %s at %d us (%d late ticks)", status, now, late)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "decisions.csv").write_text(decisions_csv(result.decisions))
        (out / "safety_transitions.csv").write_text(robot.safety.to_csv())
        (out / "robot.csv").write_text(
            "# robot-run/v1\nstatus,end_us,t_physical_us,late_ticks\n"
            f"{status},{now},{'' if robot.t_physical_us is None else robot.t_physical_us},{late}\n")
        if sc.run.trace:
            (out / "trace.csv").write_text(robot.trace_csv())
    return result


def serve_headset(sc: Scenario, ends: Endpoints = Endpoints(), out: Optional[Path] = None,
                  start_timeout_s: float = 10.0, idle_timeout_s: float = 0.5) -> HeadsetRunResult:
    """Run the headset loop until the robot goes quiet or the horizon passes."""
    params = derive_params(sc)
    link = UdpTransport((ends.host, ends.headset_port), (ends.host, ends.robot_port))
    feed = TruthFeed()
    headset = HeadsetNode(sc, params, link, link, truth=feed)
    rate = sc.tracking.sample_rate_hz
    horizon = round((sc.run.horizon_s + sc.run.virtual_grace_s) * US_PER_S)
    status = "timeout"
    try:
        # align: robot time T corresponds to wall time epoch + T
        waited = time.perf_counter()
        while True:
            headset._ingest()
            if feed.times:
                break
            if time.perf_counter() - waited > start_timeout_s:
                status = "no_robot"
                return HeadsetRunResult(status, 0, None)
            time.sleep(0.001)
        epoch = time.perf_counter() - feed.times[0] / US_PER_S
        k = int(feed.times[0] * rate // US_PER_S)
        last_rx = time.perf_counter()
        last_count = len(feed.times)
        while True:
            now = round(k * US_PER_S / rate)
            if now > horizon:
                break
            _sleep_until(epoch + now / US_PER_S)
            headset.frame(now)
            k += 1
            wall = time.perf_counter()
            if len(feed.times) != last_count:
                last_count = len(feed.times)
                last_rx = wall
            elif wall - last_rx > idle_timeout_s:
                status = "ok"
                break
    finally:
        link.close()
    result = HeadsetRunResult(status, headset.frames, headset.t_virtual_us,
                              list(headset.passthrough_log))
    logger.info("headset loop finished: %s after %d frames", status, headset.frames)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        lines = ["# headset-run/v1", "status,frames,t_virtual_us",
                 f"{status},{headset.frames},{'' if headset.t_virtual_us is None else headset.t_virtual_us}"]
        lines += ["# passthrough_log", "timestamp_us,active"]
        lines += [f"{t},{int(on)}" for t, on in headset.passthrough_log]
        (out / "headset.csv").write_text("\n".join(lines) + "\n")
    return result
