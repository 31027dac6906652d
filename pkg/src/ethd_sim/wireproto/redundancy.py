"""Redundant event transmission and receiver-side duplicate suppression.

Events are full flag snapshots keyed by ``event_seq``. A new snapshot is
repeated on ``K`` consecutive sender frames, each copy with a fresh header
``seq`` but the same ``event_seq``. Submitting a newer snapshot supersedes the
remaining repeats of an older one: the newer snapshot carries the complete
flag state, so nothing is lost by dropping the stale copies.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Iterator, Optional

from .codec import EventFlagsMsg, MsgType, SequenceCounter, encode


class SinkClosed(RuntimeError):
    """Raised when sending on a closed datagram sink."""


@dataclass(frozen=True)
class RedundancyPolicy:
    repeat_count: int = 5

    def __post_init__(self):
        if int(self.repeat_count) < 1:
            raise ValueError(f"repeat_count must be >= 1, got {self.repeat_count}")


class EventRepeater:
    """Sender half: queues an event snapshot and emits it on K frames."""

    def __init__(self, policy: RedundancyPolicy = RedundancyPolicy(),
                 counter: Optional[SequenceCounter] = None):
        self.policy = policy
        self.counter = counter if counter is not None else SequenceCounter()
        self._pending: Optional[EventFlagsMsg] = None
        self._remaining = 0
        self._last_event_seq: Optional[int] = None

    @property
    def pending(self) -> bool:
        return self._remaining > 0

    def redundant_send(self, event: EventFlagsMsg) -> None:
        """Queue ``event`` for transmission on the next K sender frames."""
        last = self._last_event_seq
        if last is not None and event.event_seq < last:
            raise ValueError(f"event_seq {event.event_seq} already superseded by {last}")
        self._pending = event
        self._remaining = self.policy.repeat_count
        self._last_event_seq = event.event_seq

    def on_frame(self, sink, timestamp_us: int) -> Optional[EventFlagsMsg]:
        """Emit one copy of the pending event, if any. Call once per sender frame."""
        if self._remaining <= 0:
            return None
        if getattr(sink, "closed", False):
            raise SinkClosed("datagram sink is closed")
        msg = replace(self._pending, seq=self.counter.next(MsgType.EVENT_FLAGS),
                      timestamp_us=timestamp_us)
        sink.send(encode(msg))
        self._remaining -= 1
        return msg


def redundant_send(event: EventFlagsMsg, policy: RedundancyPolicy, sink,
                   repeater: Optional[EventRepeater] = None) -> EventRepeater:
    """Enqueue ``event`` for K-fold transmission and emit the first copy.

    Returns the repeater; call its ``on_frame`` on each later sender frame to
    emit the remaining copies.
    """
    if repeater is None:
        repeater = EventRepeater(policy)
    repeater.redundant_send(event)
    repeater.on_frame(sink, event.timestamp_us)
    return repeater


class EventDeduplicator:
    """Receiver half: delivers the first arrival of each ``event_seq``.

    Anything at or below the highest delivered ``event_seq`` is a duplicate or
    a stale snapshot and is dropped, so state is one integer.
    """

    def __init__(self):
        self.highest: Optional[int] = None
        self.dropped = 0

    def accept(self, event: EventFlagsMsg) -> bool:
        if self.highest is not None and event.event_seq <= self.highest:
            self.dropped += 1
            return False
        self.highest = event.event_seq
        return True


def dedup_receive(stream: Iterable[EventFlagsMsg]) -> Iterator[EventFlagsMsg]:
    dedup = EventDeduplicator()
    for ev in stream:
        if dedup.accept(ev):
            yield ev
