"""Telemetry datagrams exchanged between the robot loop and the headset loop."""

from .codec import (
    DEFINED_FLAG_BITS,
    HEADER_SIZE,
    MAGIC,
    VERSION,
    BadMagic,
    BadVersion,
    DecodeError,
    EndEffectorStateMsg,
    EventFlag,
    EventFlagsMsg,
    HandPoseMsg,
    HeadPoseMsg,
    Malformed,
    MsgType,
    SequenceCounter,
    SimTruthMsg,
    TelemetryMessage,
    Truncated,
    UnknownType,
    decode,
    encode,
    encode_end_effector,
    f32,
    payload_size,
    peek_end_effector,
)
from .redundancy import (
    EventDeduplicator,
    EventRepeater,
    RedundancyPolicy,
    SinkClosed,
    dedup_receive,
    redundant_send,
)
from .transport import HEADSET_PORT, ROBOT_PORT, LinkConfig, LoopbackChannel, UdpTransport

__all__ = [name for name in dir() if not name.startswith("_")]
