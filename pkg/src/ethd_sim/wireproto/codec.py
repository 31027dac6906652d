"""Fixed-layout little-endian datagram codec.

Every datagram is a 16-byte header followed by a type-specific payload with no
padding::

    magic u16 | version u8 | msg_type u8 | seq u32 | timestamp_us u64

Float fields are narrowed to IEEE-754 single precision when a message is
constructed, so ``decode(encode(m)) == m`` holds bit-exactly.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, fields
from enum import IntEnum, IntFlag
from typing import ClassVar, Optional, Union

MAGIC = 0x4554
VERSION = 1

HEADER = struct.Struct("<HBBIQ")
HEADER_SIZE = HEADER.size  # 16

_F32 = struct.Struct("<f")
_F32N = {n: struct.Struct(f"<{n}f") for n in (3, 4)}


def f32(value: float) -> float:
    """Round a double to the nearest single-precision value."""
    return _F32.unpack(_F32.pack(value))[0]


def _f32_tuple(values, n: int) -> tuple:
    vals = tuple(values)
    if len(vals) != n:
        raise ValueError(f"expected {n} components, got {len(vals)}")
    s = _F32N[n]
    return s.unpack(s.pack(*vals))


class MsgType(IntEnum):
    HEAD_POSE = 0x01
    HAND_POSE = 0x02
    EVENT_FLAGS = 0x03
    END_EFFECTOR_STATE = 0x04
    # simulation-only: ground-truth body state fed from the physical-world
    # simulator to a headset process in two-process mode
    SIM_TRUTH = 0x10


class EventFlag(IntFlag):
    USER_AT_MARK = 1 << 0
    AVATAR_READY = 1 << 1
    CONTACT_DETECTED = 1 << 2
    PASSTHROUGH_ACTIVE = 1 << 3
    EMERGENCY_STOP = 1 << 4
    SEQUENCE_ADVANCE = 1 << 5


DEFINED_FLAG_BITS = 0x3F


class DecodeError(ValueError):
    """Base class for datagram decoding failures.

    ``code`` is a stable machine-readable identifier.
    """

    code = "decode_error"


class BadMagic(DecodeError):
    code = "bad_magic"


class BadVersion(DecodeError):
    code = "bad_version"


class Truncated(DecodeError):
    code = "truncated"


class UnknownType(DecodeError):
    code = "unknown_type"


class Malformed(DecodeError):
    """Structurally complete datagram whose length or field values are invalid."""

    code = "malformed"


@dataclass(frozen=True)
class _Message:
    seq: int = 0
    timestamp_us: int = 0

    msg_type: ClassVar[MsgType]
    payload: ClassVar[struct.Struct]

    def _check_header(self):
        if not 0 <= self.seq < 2**32:
            raise ValueError(f"seq out of u32 range: {self.seq}")
        if not 0 <= self.timestamp_us < 2**64:
            raise ValueError(f"timestamp out of u64 range: {self.timestamp_us}")

    @classmethod
    def _trusted(cls, *values):
        # decode path: header fields and f32 payload values are in range by
        # construction, so skip __post_init__
        obj = object.__new__(cls)
        obj.__dict__.update(zip(cls._FIELDS, values))
        return obj


@dataclass(frozen=True)
class HeadPoseMsg(_Message):
    position: tuple = (0.0, 0.0, 0.0)
    orientation: tuple = (1.0, 0.0, 0.0, 0.0)

    msg_type: ClassVar[MsgType] = MsgType.HEAD_POSE
    payload: ClassVar[struct.Struct] = struct.Struct("<3f4f")

    def __post_init__(self):
        self._check_header()
        object.__setattr__(self, "position", _f32_tuple(self.position, 3))
        object.__setattr__(self, "orientation", _f32_tuple(self.orientation, 4))

    def validate(self):
        if not all(math.isfinite(v) for v in self.position + self.orientation):
            raise ValueError("non-finite head pose")
        if abs(math.sqrt(sum(q * q for q in self.orientation)) - 1.0) > 1e-3:
            raise ValueError("head orientation is not a unit quaternion")

    def _pack(self) -> bytes:
        return self.payload.pack(*self.position, *self.orientation)

    @classmethod
    def _unpack(cls, seq, ts, body):
        v = cls.payload.unpack(body)
        return cls._trusted(seq, ts, v[0:3], v[3:7])


@dataclass(frozen=True)
class HandPoseMsg(_Message):
    hand_id: int = 1
    tracked: int = 1
    position: tuple = (0.0, 0.0, 0.0)
    orientation: tuple = (1.0, 0.0, 0.0, 0.0)

    msg_type: ClassVar[MsgType] = MsgType.HAND_POSE
    payload: ClassVar[struct.Struct] = struct.Struct("<BB3f4f")

    LEFT: ClassVar[int] = 0
    RIGHT: ClassVar[int] = 1

    def __post_init__(self):
        self._check_header()
        if self.hand_id not in (0, 1):
            raise ValueError(f"hand_id must be 0 or 1, got {self.hand_id}")
        if self.tracked not in (0, 1):
            raise ValueError(f"tracked must be 0 or 1, got {self.tracked}")
        object.__setattr__(self, "position", _f32_tuple(self.position, 3))
        object.__setattr__(self, "orientation", _f32_tuple(self.orientation, 4))

    def _pack(self) -> bytes:
        return self.payload.pack(self.hand_id, self.tracked, *self.position, *self.orientation)

    @classmethod
    def _unpack(cls, seq, ts, body):
        v = cls.payload.unpack(body)
        if v[0] not in (0, 1) or v[1] not in (0, 1):
            raise ValueError(f"hand_id/tracked must be 0 or 1, got {v[0]}/{v[1]}")
        return cls._trusted(seq, ts, v[0], v[1], v[2:5], v[5:9])


@dataclass(frozen=True)
class EventFlagsMsg(_Message):
    flags: int = 0
    event_seq: int = 0

    msg_type: ClassVar[MsgType] = MsgType.EVENT_FLAGS
    payload: ClassVar[struct.Struct] = struct.Struct("<HI")

    def __post_init__(self):
        self._check_header()
        flags = int(self.flags)
        if flags & ~DEFINED_FLAG_BITS:
            raise ValueError(f"undefined event flag bits set: {flags:#06x}")
        if not 0 <= self.event_seq < 2**32:
            raise ValueError(f"event_seq out of u32 range: {self.event_seq}")
        object.__setattr__(self, "flags", flags)

    def has(self, flag: EventFlag) -> bool:
        return bool(self.flags & flag)

    def _pack(self) -> bytes:
        return self.payload.pack(self.flags, self.event_seq)

    @classmethod
    def _unpack(cls, seq, ts, body):
        flags, event_seq = cls.payload.unpack(body)
        return cls(seq, ts, flags, event_seq)


@dataclass(frozen=True)
class EndEffectorStateMsg(_Message):
    position: tuple = (0.0, 0.0, 0.0)
    velocity: tuple = (0.0, 0.0, 0.0)
    force: tuple = (0.0, 0.0, 0.0)

    msg_type: ClassVar[MsgType] = MsgType.END_EFFECTOR_STATE
    payload: ClassVar[struct.Struct] = struct.Struct("<9f")

    def __post_init__(self):
        self._check_header()
        object.__setattr__(self, "position", _f32_tuple(self.position, 3))
        object.__setattr__(self, "velocity", _f32_tuple(self.velocity, 3))
        object.__setattr__(self, "force", _f32_tuple(self.force, 3))

    def _pack(self) -> bytes:
        return self.payload.pack(*self.position, *self.velocity, *self.force)

    @classmethod
    def _unpack(cls, seq, ts, body):
        v = cls.payload.unpack(body)
        return cls._trusted(seq, ts, v[0:3], v[3:6], v[6:9])


@dataclass(frozen=True)
class SimTruthMsg(_Message):
    """Ground-truth head and hand positions (simulation transport only)."""

    head: tuple = (0.0, 0.0, 0.0)
    hand: tuple = (0.0, 0.0, 0.0)

    msg_type: ClassVar[MsgType] = MsgType.SIM_TRUTH
    payload: ClassVar[struct.Struct] = struct.Struct("<3d3d")

    def __post_init__(self):
        self._check_header()
        object.__setattr__(self, "head", tuple(float(v) for v in self.head))
        object.__setattr__(self, "hand", tuple(float(v) for v in self.hand))

    def _pack(self) -> bytes:
        return self.payload.pack(*self.head, *self.hand)

    @classmethod
    def _unpack(cls, seq, ts, body):
        v = cls.payload.unpack(body)
        return cls._trusted(seq, ts, v[0:3], v[3:6])


TelemetryMessage = Union[HeadPoseMsg, HandPoseMsg, EventFlagsMsg, EndEffectorStateMsg, SimTruthMsg]

for _cls in (HeadPoseMsg, HandPoseMsg, EventFlagsMsg, EndEffectorStateMsg, SimTruthMsg):
    _cls._FIELDS = tuple(f.name for f in fields(_cls))

_BY_TYPE = {
    cls.msg_type: cls
    for cls in (HeadPoseMsg, HandPoseMsg, EventFlagsMsg, EndEffectorStateMsg, SimTruthMsg)
}


def payload_size(msg_type: int) -> int:
    return _BY_TYPE[MsgType(msg_type)].payload.size


def encode(msg: TelemetryMessage) -> bytes:
    return HEADER.pack(MAGIC, VERSION, msg.msg_type, msg.seq, msg.timestamp_us) + msg._pack()


def decode(data: bytes) -> TelemetryMessage:
    if len(data) < HEADER_SIZE:
        raise Truncated(f"datagram of {len(data)} bytes is shorter than the {HEADER_SIZE}-byte header")
    magic, version, msg_type, seq, ts = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic(f"magic {magic:#06x} != {MAGIC:#06x}")
    if version != VERSION:
        raise BadVersion(f"version {version} != {VERSION}")
    cls = _BY_TYPE.get(msg_type)
    if cls is None:
        raise UnknownType(f"unknown msg_type {msg_type:#04x}")
    need = HEADER_SIZE + cls.payload.size
    if len(data) < need:
        raise Truncated(f"{cls.__name__} needs {need} bytes, got {len(data)}")
    if len(data) > need:
        raise Malformed(f"{cls.__name__} expects {need} bytes, got {len(data)}")
    try:
        return cls._unpack(seq, ts, memoryview(data)[HEADER_SIZE:])
    except ValueError as exc:
        raise Malformed(str(exc)) from exc


_EE_WIRE = struct.Struct("<HBBIQ9f")


def encode_end_effector(seq: int, timestamp_us: int, position, velocity, force) -> bytes:
    """Byte-identical to ``encode(EndEffectorStateMsg(...))`` without building the message.

    The robot emits one of these per tick, so it skips the dataclass.
    """
    return _EE_WIRE.pack(MAGIC, VERSION, MsgType.END_EFFECTOR_STATE, seq, timestamp_us,
                         *position, *velocity, *force)


def peek_end_effector(data: bytes) -> Optional[tuple]:
    """``(timestamp_us, position)`` if ``data`` is a valid end-effector datagram, else None.

    Callers fall back to :func:`decode` on None to get the specific error.
    """
    if len(data) != _EE_WIRE.size:
        return None
    v = _EE_WIRE.unpack(data)
    if v[0] != MAGIC or v[1] != VERSION or v[2] != MsgType.END_EFFECTOR_STATE:
        return None
    return v[4], v[5:8]


@dataclass
class SequenceCounter:
    """Per-sender, per-message-type header sequence numbers."""

    _next: dict = field(default_factory=dict)

    def next(self, msg_type: MsgType) -> int:
        n = self._next.get(msg_type, 0)
        self._next[msg_type] = (n + 1) % 2**32
        return n

    def skip(self, msg_type: MsgType, count: int) -> None:
        """Consume ``count`` numbers without sending."""
        self._next[msg_type] = (self._next.get(msg_type, 0) + count) % 2**32
