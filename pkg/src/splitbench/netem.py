"""In-process network emulation: fixed one-way delay plus a token-bucket rate cap.

Shaping is applied at the sender. A write is stamped with its transmit-complete
time (token-bucket serialization plus delay) and handed to a delivery thread
that puts the bytes on the socket at that instant. The writer is never blocked
by delay, so several messages can be in flight on one link.
"""

from __future__ import annotations

import heapq
import itertools
import socket
import threading
import time
from dataclasses import dataclass
from typing import Callable, Optional

from .profiles import NetworkModel, ProfileError, parse_bandwidth, parse_duration

DEFAULT_BUCKET_DEPTH = 1500  # bytes, one Ethernet MTU


@dataclass(frozen=True)
class ShapingConfig:
    one_way_delay: float = 0.0
    bandwidth: Optional[float] = None  # bits/s
    bucket_depth: int = DEFAULT_BUCKET_DEPTH  # bytes

    def __post_init__(self):
        if self.one_way_delay < 0:
            raise ProfileError("delay must be >= 0")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ProfileError("bandwidth must be > 0")
        if self.bandwidth is not None and not self.bucket_depth > 0:
            raise ProfileError("bucket_depth must be > 0 when bandwidth is set")

    @property
    def is_identity(self) -> bool:
        return self.one_way_delay == 0 and self.bandwidth is None

    @classmethod
    def from_network_model(cls, net: NetworkModel, bucket_depth: int = DEFAULT_BUCKET_DEPTH) -> "ShapingConfig":
        return cls(net.one_way_delay, net.bandwidth, bucket_depth)

    @classmethod
    def from_flags(cls, delay_ms: Optional[str] = None, bandwidth_bps: Optional[str] = None,
                   bucket_bytes: Optional[int] = None) -> "ShapingConfig":
        """Build from CLI flag values; a bare delay number is milliseconds."""
        delay = 0.0
        if delay_ms:
            try:
                delay = float(delay_ms) / 1000.0
            except ValueError:
                delay = parse_duration(delay_ms)
        bw = parse_bandwidth(bandwidth_bps) if bandwidth_bps else None
        return cls(delay, bw, DEFAULT_BUCKET_DEPTH if bucket_bytes is None else bucket_bytes)

    def to_dict(self) -> dict:
        return {"delay": self.one_way_delay, "bandwidth": self.bandwidth, "bucket_depth": self.bucket_depth}


class Shaper:
    """Token-bucket scheduler for one link.

    Tokens are bits. The bucket may go into debt: a send always takes its full
    payload worth of tokens and completes once the debt has been refilled.
    """

    def __init__(self, config: ShapingConfig, clock: Callable[[], float] = time.monotonic,
                 initial_tokens: float = 0.0):
        self.config = config
        self.clock = clock
        self._tokens = float(initial_tokens)
        self._stamp: Optional[float] = None

    def shape_send(self, payload_size: int, now: Optional[float] = None) -> float:
        """Reserve capacity for ``payload_size`` bytes; return the transmit-complete time."""
        if now is None:
            now = self.clock()
        return now + self.serialization(payload_size, now) + self.config.one_way_delay

    def serialization(self, payload_size: int, now: float) -> float:
        cfg = self.config
        if cfg.bandwidth is None:
            return 0.0
        depth = cfg.bucket_depth * 8
        if self._stamp is not None:
            self._tokens = min(depth, self._tokens + (now - self._stamp) * cfg.bandwidth)
        self._stamp = now
        self._tokens -= payload_size * 8
        return max(0.0, -self._tokens / cfg.bandwidth)


def shape_send(config: ShapingConfig, payload_size: int, now: float) -> float:
    """One-shot helper: completion time of a send on an idle link with an empty bucket."""
    return Shaper(config).shape_send(payload_size, now)


class ShapedConnection:
    """Sender-side shaping wrapper around a connected stream socket.

    ``sendall`` returns once the data is queued; ``flush`` waits until
    everything queued has reached the socket. Reads go straight to the socket.
    """

    def __init__(self, sock: socket.socket, config: Optional[ShapingConfig] = None,
                 clock: Callable[[], float] = time.monotonic):
        self.sock = sock
        self.config = config or ShapingConfig()
        self.clock = clock
        self._shaper = Shaper(self.config, clock)
        self._lock = threading.Lock()
        self._cv = threading.Condition(self._lock)
        self._heap: list = []
        self._seq = itertools.count()
        self._pending = 0
        self._closed = False
        self._error: Optional[BaseException] = None
        self._thread: Optional[threading.Thread] = None
        self.bytes_sent = 0
        self.messages_sent = 0
        if not self.config.is_identity:
            self._thread = threading.Thread(target=self._deliver, name="netem-deliver", daemon=True)
            self._thread.start()

    def sendall(self, data: bytes) -> float:
        """Queue ``data``; return the link time this message alone occupies (bits / rate)."""
        if self._error is not None:
            raise self._error
        self.messages_sent += 1
        self.bytes_sent += len(data)
        if self._thread is None:
            with self._lock:
                self.sock.sendall(data)
            return 0.0
        with self._cv:
            now = self.clock()
            due = now + self._shaper.serialization(len(data), now) + self.config.one_way_delay
            heapq.heappush(self._heap, (due, next(self._seq), data))
            self._pending += 1
            self._cv.notify_all()
        return len(data) * 8 / self.config.bandwidth if self.config.bandwidth else 0.0

    def _deliver(self) -> None:
        while True:
            with self._cv:
                while not self._heap and not self._closed:
                    self._cv.wait()
                if not self._heap:
                    return
                due, _, data = self._heap[0]
                wait = due - self.clock()
                if wait > 0:
                    self._cv.wait(wait)
                    continue
                heapq.heappop(self._heap)
            try:
                self.sock.sendall(data)
            except OSError as exc:
                self._error = exc
            with self._cv:
                self._pending -= 1
                self._cv.notify_all()

    def flush(self, timeout: Optional[float] = None) -> bool:
        if self._thread is None:
            return True
        with self._cv:
            return self._cv.wait_for(lambda: self._pending == 0 or self._error is not None, timeout)

    def recv(self, n: int) -> bytes:
        return self.sock.recv(n)

    def makefile(self, mode: str = "rb"):
        return self.sock.makefile(mode)

    def close(self, flush_timeout: float = 30.0) -> None:
        self.flush(flush_timeout)
        with self._cv:
            self._closed = True
            self._cv.notify_all()
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def wrap_connection(conn: socket.socket, config: Optional[ShapingConfig] = None) -> ShapedConnection:
    return ShapedConnection(conn, config)
