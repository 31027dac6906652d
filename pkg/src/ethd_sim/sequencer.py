"""Interaction sequencing state machine.

The phases run strictly in order::

    AwaitUserAtMark -> RobotToReady -> AvatarApproach -> AvatarArmRaise
    -> StrategyEngaged -> ContactDetected -> Retreat -> Complete

A non-nominal safety state pauses the sequence (no transitions, timers
frozen, plant held); it never skips or reorders phases.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Iterable, List, NamedTuple, Optional, Tuple

from .safety import SafetyState

__all__ = [
    "Phase",
    "PlantMode",
    "Guidance",
    "AvatarTimingModel",
    "SequencerState",
    "SequencerInputs",
    "SequencerCommands",
    "Sequencer",
    "step_sequencer",
    "emit_guidance",
    "replay",
]


class Phase(IntEnum):
    AWAIT_USER_AT_MARK = 0
    ROBOT_TO_READY = 1
    AVATAR_APPROACH = 2
    AVATAR_ARM_RAISE = 3
    STRATEGY_ENGAGED = 4
    CONTACT_DETECTED = 5
    RETREAT = 6
    COMPLETE = 7

    @property
    def label(self) -> str:
        return "".join(part.capitalize() for part in self.name.split("_"))


class PlantMode(str, Enum):
    HOLD = "hold"
    READY = "ready"
    STRATEGY = "strategy"
    RETREAT = "retreat"
    FREEZE = "freeze"


class Guidance(str, Enum):
    GO_TO_MARK = "go_to_mark"
    STAND_BY = "stand_by"
    AVATAR_APPROACHING = "avatar_approaching"
    AVATAR_READY = "avatar_ready"
    INTERACT = "interact"
    CONTACT_CONFIRMED = "contact_confirmed"
    AVATAR_EXIT = "avatar_exit"
    SESSION_END = "session_end"


_GUIDANCE = {
    Phase.AWAIT_USER_AT_MARK: Guidance.GO_TO_MARK,
    Phase.ROBOT_TO_READY: Guidance.STAND_BY,
    Phase.AVATAR_APPROACH: Guidance.AVATAR_APPROACHING,
    Phase.AVATAR_ARM_RAISE: Guidance.AVATAR_READY,
    Phase.STRATEGY_ENGAGED: Guidance.INTERACT,
    Phase.CONTACT_DETECTED: Guidance.CONTACT_CONFIRMED,
    Phase.RETREAT: Guidance.AVATAR_EXIT,
    Phase.COMPLETE: Guidance.SESSION_END,
}

_PLANT_MODE = {
    Phase.AWAIT_USER_AT_MARK: PlantMode.HOLD,
    Phase.ROBOT_TO_READY: PlantMode.READY,
    Phase.AVATAR_APPROACH: PlantMode.READY,
    Phase.AVATAR_ARM_RAISE: PlantMode.READY,
    Phase.STRATEGY_ENGAGED: PlantMode.STRATEGY,
    Phase.CONTACT_DETECTED: PlantMode.HOLD,
    Phase.RETREAT: PlantMode.RETREAT,
    Phase.COMPLETE: PlantMode.HOLD,
}


@dataclass(frozen=True)
class AvatarTimingModel:
    approach_duration_s: float = 3.0
    arm_raise_duration_s: float = 1.2

    def __post_init__(self):
        if self.approach_duration_s <= 0.0 or self.arm_raise_duration_s <= 0.0:
            raise ValueError("avatar durations must be positive")

    @property
    def approach_us(self) -> int:
        return round(self.approach_duration_s * 1e6)

    @property
    def arm_raise_us(self) -> int:
        return round(self.arm_raise_duration_s * 1e6)


@dataclass(frozen=True)
class SequencerState:
    phase: Phase = Phase.AWAIT_USER_AT_MARK
    phase_entered_us: int = 0
    # time spent in the phase while safety was nominal; drives avatar timers
    phase_elapsed_us: int = 0


class SequencerInputs(NamedTuple):
    user_at_mark: bool = False
    robot_at_ready: bool = False
    strategy_contact: bool = False
    retreat_done: bool = False


class SequencerCommands(NamedTuple):
    plant_mode: PlantMode
    avatar_ready: bool
    contact: bool
    entered: Optional[Phase]
    cause: Optional[str]


def _next(state: SequencerState, inputs: SequencerInputs,
          timing: AvatarTimingModel) -> Tuple[Optional[Phase], Optional[str]]:
    phase = state.phase
    if phase is Phase.AWAIT_USER_AT_MARK:
        if inputs.user_at_mark:
            return Phase.ROBOT_TO_READY, "user_at_mark"
    elif phase is Phase.ROBOT_TO_READY:
        if inputs.robot_at_ready:
            return Phase.AVATAR_APPROACH, "robot_at_ready"
    elif phase is Phase.AVATAR_APPROACH:
        if state.phase_elapsed_us >= timing.approach_us:
            return Phase.AVATAR_ARM_RAISE, "approach_timer"
    elif phase is Phase.AVATAR_ARM_RAISE:
        if state.phase_elapsed_us >= timing.arm_raise_us:
            return Phase.STRATEGY_ENGAGED, "raise_timer"
    elif phase is Phase.STRATEGY_ENGAGED:
        if inputs.strategy_contact:
            return Phase.CONTACT_DETECTED, "force_contact"
    elif phase is Phase.CONTACT_DETECTED:
        return Phase.RETREAT, "immediate"
    elif phase is Phase.RETREAT:
        if inputs.retreat_done:
            return Phase.COMPLETE, "retreat_done"
    return None, None


def step_sequencer(state: SequencerState, inputs: SequencerInputs, safety: SafetyState,
                   now_us: int, timing: AvatarTimingModel = AvatarTimingModel(),
                   dt_us: int = 1000) -> Tuple[SequencerState, SequencerCommands]:
    """Advance one robot tick. Pure: output depends only on the arguments."""
    if not safety.nominal:
        return state, SequencerCommands(PlantMode.FREEZE, state.phase >= Phase.STRATEGY_ENGAGED,
                                        False, None, None)
    ticked = SequencerState(state.phase, state.phase_entered_us, state.phase_elapsed_us + dt_us)
    nxt, cause = _next(ticked, inputs, timing)
    if nxt is None:
        return ticked, _STEADY[ticked.phase]
    return SequencerState(nxt, now_us, 0), _commands(nxt, nxt, cause)


def _commands(phase: Phase, entered: Optional[Phase], cause: Optional[str]) -> SequencerCommands:
    return SequencerCommands(
        plant_mode=_PLANT_MODE[phase],
        avatar_ready=phase >= Phase.STRATEGY_ENGAGED,
        contact=phase >= Phase.CONTACT_DETECTED,
        entered=entered,
        cause=cause,
    )


_STEADY = {p: _commands(p, None, None) for p in Phase}


def emit_guidance(state: SequencerState, safety: Optional[SafetyState] = None) -> Tuple[Guidance, ...]:
    """Guidance prompt for the current phase; nothing while safety is not nominal."""
    if safety is not None and not safety.nominal:
        return ()
    return (_GUIDANCE[state.phase],)


@dataclass
class Sequencer:
    timing: AvatarTimingModel = field(default_factory=AvatarTimingModel)
    state: SequencerState = field(default_factory=SequencerState)
    log: List[Tuple[int, Phase, str]] = field(default_factory=list)
    guidance: List[Tuple[int, Guidance]] = field(default_factory=list)

    def __post_init__(self):
        if not self.log:
            self.log.append((0, self.state.phase, "start"))
            self.guidance.extend((0, g) for g in emit_guidance(self.state))

    def step(self, tick: int, now_us: int, inputs: SequencerInputs, safety: SafetyState,
             dt_us: int = 1000) -> SequencerCommands:
        self.state, cmds = step_sequencer(self.state, inputs, safety, now_us, self.timing, dt_us)
        if cmds.entered is not None:
            self.log.append((tick, cmds.entered, cmds.cause))
            self.guidance.extend((tick, g) for g in emit_guidance(self.state, safety))
        return cmds

    @property
    def visited(self) -> List[Phase]:
        return [p for _, p, _ in self.log]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# sequencer-transitions/v1\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tick", "phase", "cause"])
        for tick, phase, cause in self.log:
            w.writerow([tick, phase.label, cause])
        return buf.getvalue()


def replay(script: Iterable[Tuple[SequencerInputs, SafetyState]],
           timing: AvatarTimingModel = AvatarTimingModel(), dt_us: int = 1000) -> Sequencer:
    """Run a logged per-tick input script through a fresh sequencer."""
    seq = Sequencer(timing)
    for tick, (inputs, safety) in enumerate(script):
        seq.step(tick, tick * dt_us, inputs, safety, dt_us)
    return seq
