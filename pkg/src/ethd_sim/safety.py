"""Online safety gating for the robot loop.

Priority, highest first: emergency stop (latched until an operator reset),
halt on head intrusion into the robot workspace, passthrough when the user
leaves the safe zone, nominal. Every non-nominal mode freezes the plant; the
monitor never advances the interaction sequence.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import List, NamedTuple, Optional, Tuple

from .geometry import Vec3

__all__ = [
    "SafetyConfig",
    "SafetyMode",
    "SafetyCause",
    "SafetyState",
    "SafetyCommands",
    "SafetyTransition",
    "SafetyMonitor",
    "check_head",
    "check_safe_zone",
    "step_safety",
]


@dataclass(frozen=True)
class SafetyConfig:
    workspace_center: Vec3 = Vec3(0.0, 0.0, 1.0)
    workspace_radius_m: float = 0.8
    safe_zone_center: Tuple[float, float] = (1.40, 0.0)
    safe_zone_extents: Tuple[float, float] = (0.6, 0.6)

    def __post_init__(self):
        if not self.workspace_radius_m > 0.0:
            raise ValueError("workspace radius must be positive")
        if min(self.safe_zone_extents) <= 0.0:
            raise ValueError("safe zone extents must be positive")


class SafetyMode(IntEnum):
    # value order is the domination order
    NOMINAL = 0
    PASSTHROUGH = 1
    HALTED = 2
    ESTOP = 3


class SafetyCause(str, Enum):
    NONE = "none"
    HEAD_IN_WORKSPACE = "head_in_workspace"
    OUTSIDE_SAFE_ZONE = "outside_safe_zone"
    NO_HEAD_POSE = "no_head_pose"
    EMERGENCY_STOP = "emergency_stop"
    CLEARED = "cleared"
    OPERATOR_RESET = "operator_reset"


@dataclass(frozen=True)
class SafetyState:
    mode: SafetyMode = SafetyMode.NOMINAL
    cause: SafetyCause = SafetyCause.NONE
    entered_at_us: int = 0

    @property
    def nominal(self) -> bool:
        return self.mode is SafetyMode.NOMINAL


class SafetyCommands(NamedTuple):
    freeze_plant: bool
    passthrough: bool
    emergency_stop: bool


class SafetyTransition(NamedTuple):
    timestamp_us: int
    from_mode: SafetyMode
    to_mode: SafetyMode
    cause: SafetyCause


def check_head(head: Vec3, cfg: SafetyConfig) -> bool:
    """True if the head is strictly inside the workspace sphere."""
    return head.dist(cfg.workspace_center) < cfg.workspace_radius_m


def check_safe_zone(head_ground_projection: Vec3, cfg: SafetyConfig) -> bool:
    """True if the floor projection lies in the closed safe-zone rectangle."""
    cx, cy = cfg.safe_zone_center
    hx, hy = cfg.safe_zone_extents[0] / 2.0, cfg.safe_zone_extents[1] / 2.0
    return abs(head_ground_projection.x - cx) <= hx and abs(head_ground_projection.y - cy) <= hy


def step_safety(state: SafetyState, head: Optional[Vec3], estop_flag: bool, cfg: SafetyConfig,
                now_us: int = 0, reset: bool = False) -> Tuple[SafetyState, SafetyCommands]:
    """Advance the safety overlay by one robot tick.

    ``head`` is the freshest delivered head position (board frame) or ``None``
    if none has arrived yet, which is treated as a halt.
    """
    if head is None:
        outside = False
    else:
        cx, cy = cfg.safe_zone_center
        ex, ey = cfg.safe_zone_extents
        outside = not (abs(head.x - cx) <= ex / 2.0 and abs(head.y - cy) <= ey / 2.0)

    if estop_flag or (state.mode is SafetyMode.ESTOP and not reset):
        mode, cause = SafetyMode.ESTOP, SafetyCause.EMERGENCY_STOP
    elif head is None:
        mode, cause = SafetyMode.HALTED, SafetyCause.NO_HEAD_POSE
    elif check_head(head, cfg):
        mode, cause = SafetyMode.HALTED, SafetyCause.HEAD_IN_WORKSPACE
    elif outside:
        mode, cause = SafetyMode.PASSTHROUGH, SafetyCause.OUTSIDE_SAFE_ZONE
    else:
        mode = SafetyMode.NOMINAL
        cause = SafetyCause.OPERATOR_RESET if state.mode is SafetyMode.ESTOP else SafetyCause.CLEARED

    if mode is state.mode and (mode is SafetyMode.NOMINAL or cause is state.cause):
        new = state
    else:
        new = SafetyState(mode, cause, now_us)
    return new, _COMMANDS[mode, outside]


_COMMANDS = {
    (m, out): SafetyCommands(m is not SafetyMode.NOMINAL, out, m is SafetyMode.ESTOP)
    for m in SafetyMode for out in (False, True)
}


@dataclass
class SafetyMonitor:
    """Stateful wrapper around :func:`step_safety` that logs transitions."""

    config: SafetyConfig = field(default_factory=SafetyConfig)
    state: SafetyState = field(default_factory=SafetyState)
    transitions: List[SafetyTransition] = field(default_factory=list)

    def step(self, head: Optional[Vec3], estop_flag: bool, now_us: int,
             reset: bool = False) -> SafetyCommands:
        prev = self.state
        self.state, cmds = step_safety(prev, head, estop_flag, self.config, now_us, reset)
        if self.state is not prev:
            self.transitions.append(
                SafetyTransition(now_us, prev.mode, self.state.mode, self.state.cause))
        return cmds

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# safety-transitions/v1\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["timestamp_us", "from", "to", "cause"])
        for t in self.transitions:
            w.writerow([t.timestamp_us, t.from_mode.name, t.to_mode.name, t.cause.value])
        return buf.getvalue()
