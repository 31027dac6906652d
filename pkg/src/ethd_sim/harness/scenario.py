"""Scenario configuration and its YAML file format.

A scenario file is a YAML mapping whose top-level sections mirror the
dataclasses below; every key is optional and falls back to the defaults shown
in ``scenarios/default.yaml`` at the repository root. Vectors are 3-element
lists in metres, board frame, z up.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import yaml

from ..controller import InteractionKind, Strategy

__all__ = [
    "ConfigError",
    "InteractionSection",
    "GeometrySection",
    "PlantSection",
    "ContactSection",
    "VolumeSection",
    "TimingSection",
    "UserSection",
    "TrackingSection",
    "LinkSection",
    "TransportSection",
    "SafetySection",
    "OperatorSection",
    "RunSection",
    "Scenario",
    "load_scenario",
    "scenario_from_dict",
    "scenario_to_dict",
]


class ConfigError(ValueError):
    """Invalid or unreadable scenario configuration."""


@dataclass(frozen=True)
class InteractionSection:
    kind: InteractionKind = InteractionKind.FIST_BUMP
    strategy: Strategy = Strategy.DYNAMIC
    force_threshold_N: Optional[float] = None


@dataclass(frozen=True)
class GeometrySection:
    robot_base: Tuple[float, float, float] = (0.0, 0.0, 1.0)
    home: Tuple[float, float, float] = (0.30, 0.0, 1.30)
    ready: Tuple[float, float, float] = (0.55, 0.0, 1.10)
    retreat: Optional[Tuple[float, float, float]] = None
    # floor-plane position of the standing mark
    mark: Tuple[float, float] = (1.40, 0.0)


@dataclass(frozen=True)
class PlantSection:
    max_speed_mps: float = 1.0
    max_accel_mps2: float = 5.0
    tick_hz: int = 1000


@dataclass(frozen=True)
class ContactSection:
    stiffness_N_per_m: float = 2000.0
    contact_radius_m: float = 0.05
    # radius of the virtual prop; null matches the hand-to-prop distance at
    # which the spring force reaches the interaction's force threshold
    virtual_radius_m: Optional[float] = None
    # "capture": test the tracked hand against the prop pose at the hand
    # sample's capture time; "latest": against the newest reported prop pose
    virtual_prop_timing: str = "capture"


@dataclass(frozen=True)
class VolumeSection:
    extent_y_m: float = 0.10
    extent_z_m: float = 0.30
    depth_m: float = 0.30


@dataclass(frozen=True)
class TimingSection:
    approach_duration_s: float = 3.0
    arm_raise_duration_s: float = 1.2


@dataclass(frozen=True)
class UserSection:
    # hand rest position relative to the ready pose, before per-trial jitter
    hand_start_offset: Tuple[float, float, float] = (0.45, 0.0, -0.05)
    # uniform +/- per-axis spread of the rest position across trials
    hand_start_spread: Tuple[float, float, float] = (0.03, 0.03, 0.05)
    # reaction delay after the avatar-ready cue is rendered, uniform range
    reaction_s: Tuple[float, float] = (0.2, 0.4)
    # null selects 0.6 m/s for handovers and 1.0 m/s otherwise
    peak_speed_mps: Optional[float] = None
    peak_speed_spread: float = 0.10
    jitter_sigma_m: float = 0.002
    jitter_tau_s: float = 0.1
    # "auto": fixed point for static trials, live prop for dynamic trials
    aim: str = "auto"
    head_height_m: float = 1.65
    # head path as [t_s, [x, y, z]]; null walks in from 0.25 m beside the mark
    head_waypoints: Optional[List[Any]] = None
    mark_tolerance_m: float = 0.15


@dataclass(frozen=True)
class TrackingSection:
    sample_rate_hz: float = 90.0
    latency_ms: float = 30.0
    noise_sigma_m: float = 0.002
    dropout_rate: float = 0.0
    head_latency_ms: float = 0.0


@dataclass(frozen=True)
class LinkSection:
    loss: float = 0.0
    latency_us: int = 0
    jitter_us: int = 0


@dataclass(frozen=True)
class TransportSection:
    robot_to_headset: LinkSection = LinkSection()
    headset_to_robot: LinkSection = LinkSection()
    repeat_count: int = 5


@dataclass(frozen=True)
class SafetySection:
    workspace_radius_m: float = 0.8
    # null centres the safe zone on the standing mark
    safe_zone_center: Optional[Tuple[float, float]] = None
    safe_zone_extents: Tuple[float, float] = (0.6, 0.6)


@dataclass(frozen=True)
class OperatorSection:
    estop_at_s: Optional[float] = None
    reset_at_s: Optional[float] = None


@dataclass(frozen=True)
class RunSection:
    horizon_s: float = 20.0
    # extra time allowed after Complete for the virtual collision to register
    virtual_grace_s: float = 0.5
    trace: bool = False
    abort_on_estop: bool = True
    # batch idle robot ticks between headset frames (virtual clock, perfect links only)
    coast_idle: bool = True


@dataclass(frozen=True)
class Scenario:
    seed: int = 0
    interaction: InteractionSection = InteractionSection()
    geometry: GeometrySection = GeometrySection()
    plant: PlantSection = PlantSection()
    contact: ContactSection = ContactSection()
    volume: VolumeSection = VolumeSection()
    timing: TimingSection = TimingSection()
    user: UserSection = UserSection()
    tracking: TrackingSection = TrackingSection()
    transport: TransportSection = TransportSection()
    safety: SafetySection = SafetySection()
    operator: OperatorSection = OperatorSection()
    run: RunSection = RunSection()

    def replace(self, **sections) -> "Scenario":
        """Shallow update: ``replace(seed=3, tracking={"latency_ms": 60})``."""
        updates = {}
        for name, value in sections.items():
            current = getattr(self, name)
            if isinstance(value, dict) and dataclasses.is_dataclass(current):
                value = _build(type(current), {**scenario_to_dict(current), **value}, name)
            updates[name] = value
        return dataclasses.replace(self, **updates)


def _coerce(tp, value, path):
    if value is None:
        return None
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a mapping")
        return _build(tp, value, path)
    return value


_SECTION_TYPES = {f.name: f.type for f in fields(Scenario)}


def _build(cls, data: Dict[str, Any], path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{path or 'scenario'}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = getattr(cls(), name) if name in known else None
        sub = f"{path}.{name}" if path else name
        if dataclasses.is_dataclass(default):
            kwargs[name] = _coerce(type(default), value, sub)
        elif isinstance(default, tuple) and isinstance(value, list):
            kwargs[name] = tuple(value)
        elif isinstance(value, list) and name != "head_waypoints":
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        obj = cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'scenario'}: {exc}") from exc
    _validate(obj, path)
    return obj


def _validate(obj, path):
    if isinstance(obj, InteractionSection):
        try:
            object.__setattr__(obj, "kind", InteractionKind(obj.kind))
            object.__setattr__(obj, "strategy", Strategy(obj.strategy))
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    if isinstance(obj, ContactSection) and obj.virtual_prop_timing not in ("capture", "latest"):
        raise ConfigError(f"{path}.virtual_prop_timing must be 'capture' or 'latest'")
    if isinstance(obj, UserSection) and obj.aim not in ("auto", "prop", "fixed"):
        raise ConfigError(f"{path}.aim must be 'auto', 'prop' or 'fixed'")
    if isinstance(obj, TrackingSection) and (obj.sample_rate_hz <= 0 or obj.latency_ms < 0):
        raise ConfigError(f"{path}: sample rate must be positive and latency non-negative")
    if isinstance(obj, TransportSection) and obj.repeat_count < 1:
        raise ConfigError(f"{path}.repeat_count must be >= 1")
    if isinstance(obj, LinkSection):
        if not 0.0 <= obj.loss <= 1.0 or obj.latency_us < 0 or not 0 <= obj.jitter_us <= obj.latency_us:
            raise ConfigError(f"{path}: need 0 <= loss <= 1 and 0 <= jitter_us <= latency_us")
    if isinstance(obj, RunSection) and obj.horizon_s <= 0:
        raise ConfigError(f"{path}.horizon_s must be positive")


def scenario_from_dict(data: Optional[Dict[str, Any]]) -> Scenario:
    return _build(Scenario, data or {}, "")


def scenario_to_dict(obj) -> Dict[str, Any]:
    def conv(v):
        if dataclasses.is_dataclass(v):
            return {f.name: conv(getattr(v, f.name)) for f in fields(v)}
        if isinstance(v, tuple):
            return [conv(x) for x in v]
        if hasattr(v, "value") and not isinstance(v, (int, float)):
            return v.value
        if isinstance(v, (InteractionKind, Strategy)):
            return v.value
        return v
    return conv(obj)


def load_scenario(path) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    return scenario_from_dict(data)
