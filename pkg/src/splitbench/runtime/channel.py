"""Frame-level connection: shaped writes, buffered reads, per-batch traffic counters."""

from __future__ import annotations

import socket
import threading
import time
from collections import defaultdict
from typing import Optional

from ..netem import ShapedConnection, ShapingConfig
from .protocol import Frame, decode_frame, encode_frame


def parse_address(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"bad address {text!r}, expected host:port")
    return host, int(port)


def format_address(addr) -> str:
    return f"{addr[0]}:{addr[1]}"


class Channel:
    def __init__(self, sock: socket.socket, shaping: Optional[ShapingConfig] = None, name: str = ""):
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.name = name
        self.sock = sock
        self.conn = ShapedConnection(sock, shaping)
        self._rfile = sock.makefile("rb")
        self._wlock = threading.Lock()
        self.tx = defaultdict(lambda: [0, 0])  # batch id -> [messages, bytes]
        self.closed = False

    @classmethod
    def connect(cls, address: str, shaping: Optional[ShapingConfig] = None, timeout: float = 5.0,
                name: str = "") -> "Channel":
        host, port = parse_address(address)
        deadline = time.monotonic() + timeout
        while True:
            try:
                sock = socket.create_connection((host, port), timeout=max(0.05, deadline - time.monotonic()))
                break
            except OSError:
                if time.monotonic() >= deadline:
                    raise
                time.sleep(0.05)
        sock.settimeout(None)
        return cls(sock, shaping, name or address)

    def send(self, frame: Frame, batch_id: Optional[int] = None) -> tuple[float, float]:
        """Send one frame; return (encode seconds, link occupancy seconds)."""
        t0 = time.perf_counter()
        data = encode_frame(frame)
        enc = time.perf_counter() - t0
        with self._wlock:
            link = self.conn.sendall(data)
            if batch_id is not None:
                c = self.tx[batch_id]
                c[0] += 1
                c[1] += len(data)
        return enc, link

    def recv(self) -> Frame:
        return decode_frame(self._rfile)

    def flush(self, timeout: float = 30.0) -> bool:
        return self.conn.flush(timeout)

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        try:
            self.conn.close()
        except OSError:
            pass
        try:
            self._rfile.close()
        except OSError:
            pass
