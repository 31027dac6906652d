"""Datagram transports: a seeded in-process loopback and connectionless UDP."""

from __future__ import annotations

import heapq
import logging
import socket
import threading
from collections import deque
from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np

from .redundancy import SinkClosed

logger = logging.getLogger(__name__)

ROBOT_PORT = 47810
HEADSET_PORT = 47811


class DatagramSink(Protocol):
    closed: bool

    def send(self, payload: bytes) -> None: ...


@dataclass(frozen=True)
class LinkConfig:
    """Impairments for one direction of the loopback link."""

    loss: float = 0.0
    latency_us: int = 0
    jitter_us: int = 0

    def __post_init__(self):
        if not 0.0 <= self.loss <= 1.0:
            raise ValueError(f"loss probability must be in [0, 1], got {self.loss}")
        if self.latency_us < 0 or self.jitter_us < 0:
            raise ValueError("latency and jitter must be non-negative")
        if self.jitter_us > self.latency_us:
            raise ValueError("jitter bound larger than latency would deliver before send")


class LoopbackChannel:
    """One direction of an in-process datagram link driven by a shared clock.

    Each datagram is independently dropped with probability ``loss``; survivors
    are delivered ``latency_us`` plus uniform integer jitter in
    ``[-jitter_us, +jitter_us]`` after the send time. Ties in delivery time keep
    send order.
    """

    def __init__(self, clock, link: LinkConfig = LinkConfig(), seed=None):
        self.clock = clock
        self.link = link
        self.rng = np.random.default_rng(seed)
        self.closed = False
        self._heap: list = []
        self._n = 0
        self.sent = 0
        self.lost = 0
        self._perfect = link.loss == 0.0 and link.latency_us == 0 and link.jitter_us == 0
        self._fifo: deque = deque()

    @property
    def perfect(self) -> bool:
        """No loss, latency or jitter: datagrams are readable as soon as sent."""
        return self._perfect

    def send(self, payload: bytes) -> None:
        if self.closed:
            raise SinkClosed("loopback channel closed")
        self.sent += 1
        if self._perfect:
            self._fifo.append(payload)
            return
        link = self.link
        if link.loss > 0.0 and self.rng.random() < link.loss:
            self.lost += 1
            return
        delay = link.latency_us
        if link.jitter_us:
            delay += int(self.rng.integers(-link.jitter_us, link.jitter_us + 1))
        heapq.heappush(self._heap, (self.clock.now + delay, self._n, payload))
        self._n += 1

    def receive(self) -> list:
        if self._perfect:
            out = list(self._fifo)
            self._fifo.clear()
            return out
        now = self.clock.now
        out = []
        heap = self._heap
        while heap and heap[0][0] <= now:
            out.append(heapq.heappop(heap)[2])
        return out

    def close(self) -> None:
        self.closed = True


class UdpTransport:
    """Connectionless unicast endpoint with a background receive thread.

    Incoming datagrams are appended to a deque by the receive thread and
    drained by the owning control loop via :meth:`receive`; this keeps the
    single-producer single-consumer contract per direction.
    """

    def __init__(self, bind: tuple, remote: tuple, max_datagram: int = 2048):
        self.remote = remote
        self.max_datagram = max_datagram
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.sock.bind(bind)
        self.sock.settimeout(0.05)
        self.closed = False
        self.sent = 0
        self._inbox: deque = deque()
        self._thread = threading.Thread(target=self._recv_loop, daemon=True, name="udp-recv")
        self._thread.start()

    @property
    def local_address(self) -> tuple:
        return self.sock.getsockname()

    def _recv_loop(self):
        while not self.closed:
            try:
                data, _ = self.sock.recvfrom(self.max_datagram)
            except socket.timeout:
                continue
            except OSError:
                break
            self._inbox.append(data)

    def send(self, payload: bytes) -> None:
        if self.closed:
            raise SinkClosed("udp transport closed")
        try:
            self.sock.sendto(payload, self.remote)
            self.sent += 1
        except OSError as exc:
            # connectionless: a missing peer is packet loss, not a failure
            logger.debug("udp send to %s failed: %s", self.remote, exc)

    def receive(self) -> list:
        out = []
        inbox = self._inbox
        while inbox:
            out.append(inbox.popleft())
        return out

    def close(self, timeout: Optional[float] = 1.0) -> None:
        self.closed = True
        self._thread.join(timeout)
        self.sock.close()
