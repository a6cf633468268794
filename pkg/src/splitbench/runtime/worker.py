"""Pipeline worker: runs one stage, forwards activations or results."""

from __future__ import annotations

import logging
import queue
import resource
import socket
import threading
import time
from dataclasses import dataclass
from typing import Optional

from ..netem import ShapingConfig
from .channel import Channel, format_address, parse_address
from .kernel import burn, resolve_kernel
from .protocol import (
    FLAG_ACK,
    FLAG_VERBOSE,
    FLAG_WARMUP,
    AssignPayload,
    ConnectionClosed,
    DataPayload,
    Frame,
    MsgType,
    ProtocolError,
    json_payload,
    make_body,
    parse_json,
)

log = logging.getLogger(__name__)

_STOP = object()


@dataclass
class _Item:
    data: DataPayload
    flags: int
    recv_ts: float
    carry_in: int


def _peak_rss() -> int:
    # ru_maxrss is KiB on Linux
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024


class Session:
    """State for one orchestrated run."""

    def __init__(self, shaping: Optional[ShapingConfig], connect_timeout: float):
        self.shaping = shaping
        self.connect_timeout = connect_timeout
        self.assign: Optional[AssignPayload] = None
        self.orch: Optional[Channel] = None
        self.upstream: Optional[Channel] = None
        self.downstream: Optional[Channel] = None
        self.work: "queue.Queue" = queue.Queue()
        self.acks: dict[int, "queue.Queue"] = {}
        self.done = threading.Event()
        self.error: Optional[str] = None
        self.kernel = "busy"
        self.prev_busy = 0.0

    def ack_queue(self, ch: Channel) -> "queue.Queue":
        return self.acks.setdefault(id(ch), queue.Queue())

    # -- readers ----------------------------------------------------------

    def handle_connection(self, ch: Channel) -> None:
        try:
            hello = ch.recv()
            if hello.msg_type != MsgType.HELLO:
                raise ProtocolError(f"expected HELLO, got {hello.msg_type.name}")
            role = parse_json(hello.payload).get("role")
            if role == "orchestrator":
                self.orch = ch
            elif role == "upstream":
                self.upstream = ch
            else:
                raise ProtocolError(f"unknown role {role!r}")
            ch.send(Frame(MsgType.ACK, json_payload({"ok": True})))
            self._read_loop(ch, role)
        except ConnectionClosed:
            if ch is self.orch or ch is self.upstream:
                self.work.put(_STOP)
        except (ProtocolError, OSError) as exc:
            if not self.done.is_set():
                self.fail(f"{ch.name}: {exc}")

    def _read_loop(self, ch: Channel, role: str) -> None:
        while True:
            frame = ch.recv()
            mt = frame.msg_type
            if mt == MsgType.ASSIGN and role == "orchestrator":
                self.on_assign(AssignPayload.decode(frame.payload))
            elif mt in (MsgType.BATCH, MsgType.ACTIVATION):
                recv_ts = time.monotonic()
                data = DataPayload.decode(frame.payload, verbose=bool(frame.flags & FLAG_VERBOSE))
                if frame.flags & FLAG_ACK:
                    ch.send(Frame(MsgType.ACK, json_payload({"batch": data.batch_id})), data.batch_id)
                self.work.put(_Item(data, frame.flags, recv_ts, len(frame.payload) + 12))
            elif mt == MsgType.HELLO:
                # per-batch control round trip used by the chatty backend
                ctl = parse_json(frame.payload)
                ch.send(Frame(MsgType.ACK, json_payload({"ok": True, **ctl})), ctl.get("batch"))
            elif mt == MsgType.ACK:
                self.ack_queue(ch).put(frame)
            elif mt == MsgType.SHUTDOWN:
                self.work.put(_STOP)
                return
            elif mt == MsgType.ERROR:
                self.fail(f"peer error: {frame.payload.decode(errors='replace')}")
                return
            else:
                raise ProtocolError(f"unexpected {mt.name} from {role}")

    def _downstream_reader(self, ch: Channel) -> None:
        try:
            while True:
                frame = ch.recv()
                if frame.msg_type == MsgType.ACK:
                    self.ack_queue(ch).put(frame)
                elif frame.msg_type == MsgType.ERROR:
                    self.fail(f"downstream error: {frame.payload.decode(errors='replace')}")
                    return
        except (ConnectionClosed, ProtocolError, OSError):
            return

    def on_assign(self, a: AssignPayload) -> None:
        self.assign = a
        self.kernel = resolve_kernel(a.kernel)
        if a.kernel == "busy":
            from .kernel import calibrate

            calibrate()
        try:
            if a.next_hop != "orchestrator":
                ch = Channel.connect(a.next_hop, self.shaping, self.connect_timeout, name="downstream")
                ch.send(Frame(MsgType.HELLO, json_payload({"role": "upstream", "stage": a.stage})))
                reply = ch.recv()
                if reply.msg_type != MsgType.ACK:
                    raise ProtocolError(f"downstream answered HELLO with {reply.msg_type.name}")
                self.downstream = ch
                threading.Thread(target=self._downstream_reader, args=(ch,), daemon=True).start()
        except (OSError, ProtocolError) as exc:
            self.report_error(f"stage {a.stage}: cannot reach next hop {a.next_hop}: {exc}")
            self.work.put(_STOP)
            return
        self.orch.send(Frame(MsgType.ACK, json_payload({"stage": a.stage, "ok": True})))

    # -- errors -----------------------------------------------------------

    def report_error(self, message: str) -> None:
        log.error(message)
        self.error = message
        if self.orch is not None and not self.orch.closed:
            try:
                self.orch.send(Frame(MsgType.ERROR, json_payload({"error": message})))
                self.orch.flush(2.0)
            except OSError:
                pass

    def fail(self, message: str) -> None:
        self.report_error(message)
        self.work.put(_STOP)

    # -- compute loop -----------------------------------------------------

    def run(self, timeout: float) -> None:
        while True:
            try:
                item = self.work.get(timeout=timeout)
            except queue.Empty:
                self.fail("timed out waiting for work")
                item = _STOP
            if item is _STOP:
                break
            if self.assign is None:
                self.fail("received data before ASSIGN")
                break
            try:
                self.process(item)
            except (OSError, ProtocolError) as exc:
                self.fail(f"stage {self.assign.stage}: {exc}")
                break
        self.shutdown()

    def process(self, item: _Item) -> None:
        a = self.assign
        chatty = a.backend == "chatty"
        start = time.monotonic()
        exec_s = burn(a.stage_seconds, self.kernel)
        bid = item.data.batch_id
        last = a.next_hop == "orchestrator"
        target = self.orch if last else self.downstream
        if chatty and not last:
            # RPC-style hand-off: announce the batch and wait for the peer before shipping it
            target.send(Frame(MsgType.HELLO, json_payload({"op": "prepare", "batch": bid})), bid)
            self._wait_ack(target, bid)
        t_ser = time.perf_counter()
        body = make_body(a.seed, bid, a.stage, a.output_bytes)
        # traffic this stage already sent on behalf of the batch (ACKs); the
        # frame carrying the report is counted by whoever receives it
        sent = [0, 0]
        for ch in {id(c): c for c in (self.orch, self.upstream, self.downstream) if c}.values():
            c = ch.tx.get(bid)
            if c:
                sent[0] += c[0]
                sent[1] += c[1]
        mt = MsgType.RESULT if last else MsgType.ACTIVATION
        entry = {
            "stage": a.stage,
            "recv": item.recv_ts,
            "exec": exec_s,
            "carry_in": item.carry_in,
            "tx": sent,
            "prev_busy": self.prev_busy,
            "cpu": time.process_time(),
            "rss": _peak_rss(),
        }
        out = DataPayload(bid, a.stage, body, item.data.report + [entry])
        entry["ser"] = time.perf_counter() - t_ser
        entry["sent"] = time.monotonic()
        entry["link"] = self._link_seconds(len(body) + 512)
        payload = out.encode(verbose=chatty, msg_type=mt)
        flags = item.flags & FLAG_WARMUP
        if chatty:
            flags |= FLAG_VERBOSE | FLAG_ACK
        target.send(Frame(mt, payload, flags), bid)
        if chatty:
            self._wait_ack(target, bid)
        self.prev_busy = time.monotonic() - start

    def _link_seconds(self, nbytes: int) -> float:
        if self.shaping is None or self.shaping.bandwidth is None:
            return 0.0
        return nbytes * 8 / self.shaping.bandwidth

    def _wait_ack(self, ch: Channel, bid: int) -> None:
        try:
            self.ack_queue(ch).get(timeout=60.0)
        except queue.Empty:
            raise ProtocolError(f"no ACK for batch {bid}") from None

    def shutdown(self) -> None:
        self.done.set()
        if self.downstream is not None:
            try:
                self.downstream.send(Frame(MsgType.SHUTDOWN))
                self.downstream.flush(10.0)
            except OSError:
                pass
        for ch in (self.downstream, self.upstream, self.orch):
            if ch is not None:
                if ch is self.orch:
                    ch.flush(10.0)
                ch.close()


class Worker:
    """Listening worker process; serves ``sessions`` orchestrated runs then exits."""

    def __init__(self, listen: str = "127.0.0.1:0", shaping: Optional[ShapingConfig] = None,
                 sessions: int = 1, idle_timeout: float = 120.0, connect_timeout: float = 5.0):
        self.shaping = shaping
        self.sessions = sessions
        self.idle_timeout = idle_timeout
        self.connect_timeout = connect_timeout
        host, port = parse_address(listen)
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.sock.bind((host, port))
        self.sock.listen(8)
        self.sock.settimeout(0.1)

    @property
    def address(self) -> str:
        return format_address(self.sock.getsockname())

    def _accept_loop(self, session: Session) -> None:
        while not session.done.is_set():
            try:
                conn, _ = self.sock.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            conn.settimeout(None)
            ch = Channel(conn, self.shaping, name="peer")
            if session.done.is_set():
                # arrived while this session was winding down: it belongs to the next one
                self._carry.append(ch)
                return
            threading.Thread(target=session.handle_connection, args=(ch,), daemon=True).start()

    def serve(self) -> int:
        status = 0
        self._carry: list[Channel] = []
        try:
            for _ in range(self.sessions):
                session = Session(self.shaping, self.connect_timeout)
                carried, self._carry = self._carry, []
                for ch in carried:
                    threading.Thread(target=session.handle_connection, args=(ch,), daemon=True).start()
                acceptor = threading.Thread(target=self._accept_loop, args=(session,), daemon=True)
                acceptor.start()
                session.run(self.idle_timeout)
                acceptor.join()
                if session.error:
                    status = 1
        finally:
            self.sock.close()
            for ch in self._carry:
                ch.close()
        return status


def run_worker(listen: str = "127.0.0.1:0", shaping: Optional[ShapingConfig] = None,
               sessions: int = 1, announce=None, idle_timeout: float = 120.0) -> int:
    """Serve pipeline sessions on ``listen``; return the process exit status.

    ``announce`` is called with the bound address once the socket is listening.
    """
    worker = Worker(listen, shaping, sessions, idle_timeout)
    if announce is not None:
        announce(worker.address)
    return worker.serve()
