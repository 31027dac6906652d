"""Robot-side and headset-side loops plus the simulated physical world.

The robot node runs at 1000 Hz: ingest datagrams, measure contact force,
safety, sequencer, controller, plant, publish. The headset node runs at ~90 Hz:
ingest robot state, observe the user, publish head/hand/flags, and register
the virtual collision. The two nodes only talk through datagram transports,
so the same classes run in-process on a virtual clock or in two processes
over UDP.
"""

from __future__ import annotations

import bisect
import csv
import io
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from ..controller import (
    ContactModel,
    EndEffectorPlant,
    InteractionConfig,
    InteractionController,
    Strategy,
    VolumeSpec,
    contact_force,
    detect_contact,
)
from ..geometry import US_PER_S, Frame, Pose, Quat, Vec3
from ..safety import SafetyConfig, SafetyMode, SafetyMonitor, check_safe_zone
from ..sequencer import (
    AvatarTimingModel,
    Phase,
    PlantMode,
    Sequencer,
    SequencerInputs,
    SequencerState,
)
from ..simuser import Aim, HeadScript, ReachProfile, SimulatedHand, TrackingPipeline
from ..wireproto import (
    EventDeduplicator,
    EventFlag,
    EventFlagsMsg,
    EventRepeater,
    HandPoseMsg,
    HeadPoseMsg,
    MsgType,
    RedundancyPolicy,
    SequenceCounter,
    SimTruthMsg,
    decode,
    encode,
    encode_end_effector,
    peek_end_effector,
)
from .scenario import Scenario

logger = logging.getLogger(__name__)

__all__ = ["World", "RobotNode", "HeadsetNode", "TrialParams", "derive_params", "virtual_radius"]


@dataclass(frozen=True)
class TrialParams:
    """Per-trial quantities drawn from the scenario seed."""

    hand_start: Vec3
    reaction_us: int
    peak_speed_mps: float
    hand_seed: int
    tracking_seed: int
    link_seeds: tuple


def derive_params(sc: Scenario) -> TrialParams:
    ss = np.random.SeedSequence(sc.seed)
    draw_ss, hand_ss, track_ss, l1, l2 = ss.spawn(5)
    rng = np.random.default_rng(draw_ss)
    u = sc.user
    ready = Vec3.of(sc.geometry.ready)
    spread = np.asarray(u.hand_start_spread)
    start = ready + Vec3.of(u.hand_start_offset) + Vec3.of(rng.uniform(-1.0, 1.0, 3) * spread)
    lo, hi = u.reaction_s
    reaction = float(rng.uniform(lo, hi))
    base = u.peak_speed_mps
    if base is None:
        base = 0.6 if sc.interaction.kind.value == "handover" else 1.0
    peak = base * (1.0 + float(rng.uniform(-1.0, 1.0)) * u.peak_speed_spread)
    as_int = lambda s: int(s.generate_state(1)[0])
    return TrialParams(start, round(reaction * US_PER_S), peak,
                       as_int(hand_ss), as_int(track_ss), (as_int(l1), as_int(l2)))


def default_head_script(sc: Scenario) -> HeadScript:
    u = sc.user
    mx, my = sc.geometry.mark
    if u.head_waypoints:
        return HeadScript(tuple((float(t), Vec3.of(p)) for t, p in u.head_waypoints))
    h = u.head_height_m
    return HeadScript(((0.0, Vec3(mx, my + 0.25, h)), (0.5, Vec3(mx, my, h))))


class World:
    """Ground-truth physical state of the user: head path and reaching hand."""

    def __init__(self, sc: Scenario, params: TrialParams):
        self.head_script = default_head_script(sc)
        aim = sc.user.aim
        if aim == "auto":
            aim = "fixed" if sc.interaction.strategy is Strategy.STATIC else "prop"
        ready = Vec3.of(sc.geometry.ready)
        profile = ReachProfile(
            start=params.hand_start,
            aim=Aim.FIXED_POINT if aim == "fixed" else Aim.PROP_POSITION,
            fixed_point=ready,
            peak_speed_mps=params.peak_speed_mps,
            jitter_sigma_m=sc.user.jitter_sigma_m,
            jitter_tau_s=sc.user.jitter_tau_s,
            seed=params.hand_seed,
        )
        self.hand = SimulatedHand(profile)
        self.reaction_us = params.reaction_us
        self.cue_seen_us: Optional[int] = None
        self.head = self.head_script.at(0)

    def avatar_cue(self, now_us: int) -> None:
        """The headset rendered the avatar's readiness; the user reacts after a delay."""
        if self.cue_seen_us is None:
            self.cue_seen_us = now_us

    def step(self, now_us: int, prop: Vec3) -> Vec3:
        if self.cue_seen_us is not None and self.hand.onset_us is None \
                and now_us >= self.cue_seen_us + self.reaction_us:
            self.hand.begin_reach(now_us, prop)
        self.head = self.head_script.at(now_us)
        return self.hand.step(now_us, prop)

    def preview(self, times, prop: Vec3) -> List[Vec3]:
        """Hand positions for upcoming ticks at a fixed prop position.

        Stops short of the tick on which a reach would begin, so the result
        may be shorter than ``times``.
        """
        if self.cue_seen_us is not None and self.hand.onset_us is None:
            onset = self.cue_seen_us + self.reaction_us
            times = [t for t in times if t < onset]
        return self.hand.preview(times, prop)

    def prop_independent(self) -> bool:
        """True while the hand's path does not depend on where the prop is."""
        h = self.hand
        return h.onset_us is None or h.profile.aim is Aim.FIXED_POINT or h.end_point is not None

    def commit(self, times, hands: List[Vec3], prop: Vec3) -> None:
        if times:
            self.hand.commit(times, hands, prop)
            self.head = self.head_script.at(times[-1])

    def hand_at(self, t_us: int) -> Vec3:
        return self.hand.at(t_us)

    def head_at(self, t_us: int) -> Vec3:
        return self.head_script.at(t_us)


_AVATAR_READY = int(EventFlag.AVATAR_READY)
_CONTACT = int(EventFlag.CONTACT_DETECTED)
_ESTOP = int(EventFlag.EMERGENCY_STOP)
_PASSTHROUGH = int(EventFlag.PASSTHROUGH_ACTIVE)
_ADVANCE = int(EventFlag.SEQUENCE_ADVANCE)


def _flag_bits(*pairs) -> int:
    v = 0
    for flag, on in pairs:
        if on:
            v |= flag
    return v


class RobotNode:
    """1000 Hz robot loop."""

    def __init__(self, sc: Scenario, outbox, inbox, on_avatar_cue: Callable[[int], None] = None,
                 trace: bool = False):
        self.sc = sc
        g = sc.geometry
        self.ready = Vec3.of(g.ready)
        self.home = Vec3.of(g.home)
        self.retreat_goal = Vec3.of(g.retreat) if g.retreat is not None else self.home
        self.config = InteractionConfig(
            kind=sc.interaction.kind,
            strategy=sc.interaction.strategy,
            force_threshold_N=sc.interaction.force_threshold_N,
            ready_pose=Pose(self.ready, Quat.identity(), Frame.BOARD),
            interaction_volume=VolumeSpec(sc.volume.extent_y_m, sc.volume.extent_z_m, sc.volume.depth_m),
        )
        self.contact_model = ContactModel(sc.contact.stiffness_N_per_m, sc.contact.contact_radius_m)
        self.plant = EndEffectorPlant(self.home, sc.plant.max_speed_mps, sc.plant.max_accel_mps2,
                                      sc.plant.tick_hz)
        self.tick_us = US_PER_S // sc.plant.tick_hz
        self.safety = SafetyMonitor(safety_config(sc))
        self.sequencer = Sequencer(AvatarTimingModel(sc.timing.approach_duration_s,
                                                     sc.timing.arm_raise_duration_s))
        self.controller = InteractionController(self.config)
        self.outbox = outbox
        self.inbox = inbox
        self.counter = SequenceCounter()
        self.repeater = EventRepeater(RedundancyPolicy(sc.transport.repeat_count), self.counter)
        self.dedup = EventDeduplicator()
        self.on_avatar_cue = on_avatar_cue

        self.tick_index = 0
        self.head: Optional[Vec3] = None
        self._head_ts = -1
        self.hand_estimate: Optional[Vec3] = None
        self._hand_ts = -1
        self.user_at_mark = False
        self.headset_flags = 0
        self.event_seq = 0
        self._flags = None
        self.force = 0.0
        self.t_physical_us: Optional[int] = None
        self.contact_point: Optional[Vec3] = None
        self.target = self.home
        self.freeze_ticks = 0
        self.trace_enabled = trace
        self.trace: List[tuple] = []

    # -- ingest ---------------------------------------------------------
    def _ingest(self, now_us: int):
        for data in self.inbox.receive():
            msg = decode(data)
            t = msg.msg_type
            if t is MsgType.HAND_POSE:
                # latest-value-wins mailbox, ordered by sample time
                if msg.timestamp_us >= self._hand_ts:
                    self._hand_ts = msg.timestamp_us
                    self.hand_estimate = Vec3.of(msg.position) if msg.tracked else None
            elif t is MsgType.HEAD_POSE:
                if msg.timestamp_us >= self._head_ts:
                    self._head_ts = msg.timestamp_us
                    self.head = Vec3.of(msg.position)
            elif t is MsgType.EVENT_FLAGS:
                if self.dedup.accept(msg):
                    self.headset_flags = msg.flags
                    if msg.flags & EventFlag.USER_AT_MARK:
                        self.user_at_mark = True
                    if msg.flags & EventFlag.AVATAR_READY and self.on_avatar_cue is not None:
                        self.on_avatar_cue(now_us)

    # -- main tick ------------------------------------------------------
    def tick(self, now_us: int, hand_truth: Vec3, estop: bool = False, reset: bool = False) -> None:
        self._ingest(now_us)
        plant = self.plant
        seq = self.sequencer
        phase = seq.state.phase

        self.force = force = contact_force(plant.position, hand_truth, self.contact_model)
        physical = detect_contact(force, self.config)
        if physical and phase is Phase.STRATEGY_ENGAGED and self.t_physical_us is None \
                and self.safety.state.nominal:
            self.t_physical_us = now_us
            self.contact_point = plant.position

        safety_cmds = self.safety.step(self.head, estop, now_us, reset)
        inputs = SequencerInputs(
            user_at_mark=self.user_at_mark,
            robot_at_ready=plant.position == self.ready and plant.at_rest,
            strategy_contact=physical,
            retreat_done=plant.position == self.retreat_goal and plant.at_rest,
        )
        cmds = seq.step(self.tick_index, now_us, inputs, self.safety.state, self.tick_us)

        mode = cmds.plant_mode
        if safety_cmds.freeze_plant or mode is PlantMode.FREEZE:
            plant.freeze()
            self.freeze_ticks += 1
        else:
            if mode is PlantMode.READY:
                target = self.ready
            elif mode is PlantMode.STRATEGY:
                target = self.controller.update(now_us, plant.position, self.hand_estimate)
            elif mode is PlantMode.RETREAT:
                target = self.retreat_goal
            else:
                target = plant.position
            self.target = target
            if target == plant.position and plant.at_rest:
                pass
            else:
                plant.step(target)

        self._publish(now_us, cmds, safety_cmds, hand_truth)
        if self.trace_enabled:
            p = plant.position
            x = self.target
            self.trace.append((self.tick_index, x.x, x.y, x.z, p.x, p.y, p.z,
                               self.controller.last_weight, force))
        self.tick_index += 1

    def _send_state(self, now_us: int, hand_truth: Vec3) -> None:
        p = self.plant.position
        v = self.plant.velocity
        f = self.force
        if f > 0.0:
            # force on the prop points away from the hand
            d = p - hand_truth
            n = d.norm() or 1.0
            fv = (d.x / n * f, d.y / n * f, d.z / n * f)
        else:
            fv = (0.0, 0.0, 0.0)
        self.outbox.send(encode_end_effector(self.counter.next(MsgType.END_EFFECTOR_STATE), now_us,
                                             (p.x, p.y, p.z), (v.x, v.y, v.z), fv))

    def _publish(self, now_us, cmds, safety_cmds, hand_truth):
        self._send_state(now_us, hand_truth)

        flags = 0
        if cmds.avatar_ready:
            flags |= _AVATAR_READY
        if cmds.contact:
            flags |= _CONTACT
        if safety_cmds.emergency_stop:
            flags |= _ESTOP
        if safety_cmds.passthrough:
            flags |= _PASSTHROUGH
        if flags != self._flags or cmds.entered is not None:
            self._flags = flags
            if cmds.entered is not None:
                flags |= _ADVANCE
            self.event_seq += 1
            self.repeater.redundant_send(EventFlagsMsg(0, now_us, flags, self.event_seq))
        if self.repeater.pending:
            self.repeater.on_frame(self.outbox, now_us)

    def coast_budget(self) -> Tuple[str, int]:
        """How the next ticks may be batched, assuming no datagram arrives.

        Returns ``("idle", n)`` when up to ``n`` ticks would only advance
        timers (plant parked on its target), ``("moving", n)`` when the plant
        is driving to a fixed goal with nothing else able to change, and
        ``("", 0)`` otherwise. Requires nominal safety, no queued event copies
        and tracing off.
        """
        if self.trace_enabled or self.repeater.pending or not self.safety.state.nominal:
            return "", 0
        plant = self.plant
        st = self.sequencer.state
        phase = st.phase
        if phase is Phase.ROBOT_TO_READY or phase is Phase.RETREAT:
            return "moving", 1 << 30
        if not plant.at_rest or plant.position != self.target:
            return "", 0
        if phase is Phase.AWAIT_USER_AT_MARK:
            return "idle", 1 << 30
        timing = self.sequencer.timing
        if phase is Phase.AVATAR_APPROACH:
            return "idle", (timing.approach_us - st.phase_elapsed_us - 1) // self.tick_us
        if phase is Phase.AVATAR_ARM_RAISE:
            return "idle", (timing.arm_raise_us - st.phase_elapsed_us - 1) // self.tick_us
        if phase is Phase.STRATEGY_ENGAGED and self.controller.trajectory is None:
            return "idle", 1 << 30
        return "", 0

    def _advance_timers(self, k: int) -> None:
        st = self.sequencer.state
        self.sequencer.state = SequencerState(st.phase, st.phase_entered_us,
                                              st.phase_elapsed_us + k * self.tick_us)
        self.tick_index += k

    def coast(self, times: List[int], hands: List[Vec3]) -> int:
        """Batch ticks that provably change nothing but timers.

        Only valid after :meth:`coast_budget` returned ``"idle"`` with at least
        ``len(times)``, and with an empty inbox. Stops before the first tick
        whose hand would touch the prop. Returns the number of ticks consumed;
        the caller runs the rest normally. The identical end-effector reports
        of the batch are coalesced into the last one.
        """
        p = self.plant.position
        v = self.plant.velocity
        r = self.contact_model.contact_radius_m
        k = 0
        for h in hands:
            if r - p.dist(h) > 0.0:
                break
            k += 1
        if k == 0:
            return 0
        self._advance_timers(k)
        self.force = 0.0
        self.counter.skip(MsgType.END_EFFECTOR_STATE, k - 1)
        self.outbox.send(encode_end_effector(self.counter.next(MsgType.END_EFFECTOR_STATE),
                                             times[k - 1], (p.x, p.y, p.z), (v.x, v.y, v.z),
                                             (0.0, 0.0, 0.0)))
        return k

    def coast_moving(self, times: List[int], hands: List[Vec3]) -> int:
        """Batch ticks of a plant driving to a fixed goal (to ready, or retreating).

        Only valid after :meth:`coast_budget` returned ``"moving"`` and with an
        empty inbox. Each tick still measures force, steps the plant and
        publishes its state; stops before the arrival tick, which the
        sequencer must see.
        """
        phase = self.sequencer.state.phase
        goal = self.ready if phase is Phase.ROBOT_TO_READY else self.retreat_goal
        plant = self.plant
        model = self.contact_model
        k = 0
        for t, h in zip(times, hands):
            if plant.position == goal and plant.at_rest:
                break
            self.force = contact_force(plant.position, h, model)
            self.target = goal
            plant.step(goal)
            self._send_state(t, h)
            k += 1
        self._advance_timers(k)
        return k

    @property
    def phase(self) -> Phase:
        return self.sequencer.state.phase

    def quiescent(self) -> bool:
        """True when ticking only advances timers: plant parked, nothing queued."""
        return (self.plant.at_rest and not self.repeater.pending
                and self.sequencer.state.phase in (Phase.AVATAR_APPROACH, Phase.AVATAR_ARM_RAISE,
                                                   Phase.AWAIT_USER_AT_MARK)
                and self.plant.position == self.target)

    def trace_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# controller-trace/v1\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tick", "target_x", "target_y", "target_z", "plant_x", "plant_y", "plant_z",
                    "w", "force_N"])
        for row in self.trace:
            w.writerow([row[0]] + [f"{v:.9f}" for v in row[1:]])
        return buf.getvalue()


def safety_config(sc: Scenario) -> SafetyConfig:
    s = sc.safety
    return SafetyConfig(
        workspace_center=Vec3.of(sc.geometry.robot_base),
        workspace_radius_m=s.workspace_radius_m,
        safe_zone_center=tuple(s.safe_zone_center) if s.safe_zone_center is not None
        else tuple(sc.geometry.mark),
        safe_zone_extents=tuple(s.safe_zone_extents),
    )


def virtual_radius(sc: Scenario) -> float:
    """Radius of the virtual prop; by default the distance at which the physical force trips."""
    if sc.contact.virtual_radius_m is not None:
        return sc.contact.virtual_radius_m
    th = sc.interaction.force_threshold_N
    if th is None:
        th = sc.interaction.kind.default_force_threshold
    model = ContactModel(sc.contact.stiffness_N_per_m, sc.contact.contact_radius_m)
    return model.threshold_distance(th)


class _PropHistory:
    """Robot-reported prop positions keyed by robot timestamp."""

    def __init__(self, keep_us: int = 1_000_000):
        self.keep_us = keep_us
        self.times: deque = deque()
        self.pos: deque = deque()

    def add(self, t_us: int, p: Vec3):
        if self.times and t_us <= self.times[-1]:
            if t_us == self.times[-1]:
                self.pos[-1] = p
            return
        self.times.append(t_us)
        self.pos.append(p)
        while self.times[0] < t_us - self.keep_us:
            self.times.popleft()
            self.pos.popleft()

    def latest(self) -> Optional[Vec3]:
        return self.pos[-1] if self.pos else None

    def at(self, t_us: int) -> Optional[Vec3]:
        times = self.times
        if not times:
            return None
        if t_us <= times[0]:
            return self.pos[0]
        if t_us >= times[-1]:
            return self.pos[-1]
        i = bisect.bisect_right(times, t_us) - 1
        t0 = times[i]
        if t0 == t_us:
            return self.pos[i]
        return self.pos[i].lerp(self.pos[i + 1], (t_us - t0) / (times[i + 1] - t0))


class TruthFeed:
    """Headset-side buffer of ground-truth body samples received as SimTruth datagrams."""

    def __init__(self):
        self.times: List[int] = []
        self.heads: List[Vec3] = []
        self.hands: List[Vec3] = []

    def add(self, msg: SimTruthMsg):
        if self.times and msg.timestamp_us <= self.times[-1]:
            return
        self.times.append(msg.timestamp_us)
        self.heads.append(Vec3.of(msg.head))
        self.hands.append(Vec3.of(msg.hand))

    def _at(self, series, t_us):
        times = self.times
        if not times:
            return None
        i = bisect.bisect_right(times, t_us) - 1
        return series[max(i, 0)]

    def hand_at(self, t_us: int) -> Vec3:
        return self._at(self.hands, t_us) or Vec3.zero()

    def head_at(self, t_us: int) -> Optional[Vec3]:
        return self._at(self.heads, t_us)


class HeadsetNode:
    """~90 Hz headset loop."""

    def __init__(self, sc: Scenario, params: TrialParams, outbox, inbox, truth):
        self.sc = sc
        self.outbox = outbox
        self.inbox = inbox
        self.truth = truth
        self.safety_cfg = safety_config(sc)
        mx, my = sc.geometry.mark
        self.mark = Vec3(mx, my, 0.0)
        t = sc.tracking
        self.pipeline = TrackingPipeline(t.sample_rate_hz, t.latency_ms, t.noise_sigma_m,
                                         t.dropout_rate, seed=params.tracking_seed)
        self.head_latency_us = round(t.head_latency_ms * 1000)
        self.counter = SequenceCounter()
        self.repeater = EventRepeater(RedundancyPolicy(sc.transport.repeat_count), self.counter)
        self.dedup = EventDeduplicator()
        self.props = _PropHistory()
        self.robot_flags = 0
        self.avatar_seen_us: Optional[int] = None
        self.event_seq = 0
        self._flags = None
        self.virtual_radius = virtual_radius(sc)
        self.capture_timing = sc.contact.virtual_prop_timing == "capture"
        self.t_virtual_us: Optional[int] = None
        self.virtual_hand: Optional[Vec3] = None
        self.passthrough_active = False
        self.passthrough_log: List[tuple] = []
        self.frames = 0

    def _ingest(self):
        for data in self.inbox.receive():
            ee = peek_end_effector(data)
            if ee is not None:
                self.props.add(ee[0], Vec3.of(ee[1]))
                continue
            msg = decode(data)
            t = msg.msg_type
            if t is MsgType.END_EFFECTOR_STATE:
                self.props.add(msg.timestamp_us, Vec3.of(msg.position))
            elif t is MsgType.EVENT_FLAGS:
                if self.dedup.accept(msg):
                    self.robot_flags = msg.flags
            elif t is MsgType.SIM_TRUTH:
                self.truth.add(msg)

    def frame(self, now_us: int) -> None:
        self._ingest()
        head = self.truth.head_at(now_us)
        if head is not None:
            at_mark = Vec3(head.x, head.y, 0.0).dist(self.mark) <= self.sc.user.mark_tolerance_m
            passthrough = not check_safe_zone(Vec3(head.x, head.y, 0.0), self.safety_cfg)
        else:
            at_mark = passthrough = False
        if passthrough != self.passthrough_active:
            self.passthrough_active = passthrough
            self.passthrough_log.append((now_us, passthrough))
        if self.robot_flags & EventFlag.AVATAR_READY and self.avatar_seen_us is None:
            self.avatar_seen_us = now_us

        head_obs = self.truth.head_at(now_us - self.head_latency_us) if self.head_latency_us else head
        if head_obs is not None:
            self.outbox.send(encode(HeadPoseMsg(self.counter.next(MsgType.HEAD_POSE), now_us,
                                                (head_obs.x, head_obs.y, head_obs.z))))
        hand_msg = self.pipeline.sample(now_us, self.truth.hand_at,
                                        self.counter.next(MsgType.HAND_POSE))
        self.outbox.send(encode(hand_msg))

        if self.avatar_seen_us is not None and self.t_virtual_us is None and hand_msg.tracked:
            if self.capture_timing:
                prop = self.props.at(self.pipeline.capture_time(now_us))
            else:
                prop = self.props.latest()
            if prop is not None:
                hp = Vec3.of(hand_msg.position)
                if hp.dist(prop) <= self.virtual_radius:
                    self.t_virtual_us = now_us
                    self.virtual_hand = hp

        flags = _flag_bits(
            (EventFlag.USER_AT_MARK, at_mark),
            (EventFlag.AVATAR_READY, self.avatar_seen_us is not None),
            (EventFlag.PASSTHROUGH_ACTIVE, passthrough),
        )
        if flags != self._flags:
            self._flags = flags
            self.event_seq += 1
            self.repeater.redundant_send(EventFlagsMsg(0, now_us, flags, self.event_seq))
        self.repeater.on_frame(self.outbox, now_us)
        self.frames += 1
