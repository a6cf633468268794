"""Orchestrator: assigns stages, streams batches, collects results, measures."""

from __future__ import annotations

import logging
import socket
import statistics
import threading
import time
from typing import Optional, Sequence

from ..netem import ShapingConfig
from ..planner import PartitionPlan
from ..records import MeasurementRecord
from .channel import Channel
from .protocol import (
    FLAG_ACK,
    FLAG_VERBOSE,
    FLAG_WARMUP,
    HEADER_LEN,
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

PACING = ("bottleneck", "none")
PACING_MARGIN = 1.03
SHUTDOWN_GRACE = 5.0


class RunError(RuntimeError):
    """A run aborted; ``record`` carries whatever was measured."""

    def __init__(self, message: str, record: Optional[MeasurementRecord] = None):
        super().__init__(message)
        self.record = record


class RunTimeout(RunError):
    pass


def default_window(n_stages: int) -> int:
    return n_stages + 1


class _Run:
    def __init__(self, plan: PartitionPlan, workers: Sequence[str], n_batches: int, window: int,
                 backend: str, kernel: str, pacing: str, warmup: int, timeout: float,
                 connect_timeout: float, seed: int, shaping: Optional[ShapingConfig]):
        if len(workers) != plan.n_stages:
            raise ValueError(f"plan has {plan.n_stages} stages but {len(workers)} workers given")
        if window < 1:
            raise ValueError("window must be >= 1")
        if n_batches < 1:
            raise ValueError("n_batches must be >= 1")
        if backend not in ("framed", "chatty"):
            raise ValueError(f"unknown backend {backend!r}")
        if pacing not in PACING:
            raise ValueError(f"unknown pacing {pacing!r}")
        self.plan = plan
        self.workers = list(workers)
        self.n_batches = n_batches
        self.window = window
        self.backend = backend
        self.chatty = backend == "chatty"
        self.kernel = kernel
        self.pacing = pacing
        self.warmup = warmup
        self.timeout = timeout
        self.connect_timeout = connect_timeout
        self.seed = seed
        self.shaping = shaping
        self.chans: list[Channel] = []
        self.cv = threading.Condition()
        self.dispatched: dict[int, float] = {}
        self.results: dict[int, tuple[float, DataPayload, int]] = {}
        self.acks: list[list] = []
        self.error: Optional[str] = None
        self.finished = False
        self.own_busy: dict[int, float] = {}
        self.own_ser: dict[int, float] = {}
        self.cycles: list[float] = []
        self.readers: list[threading.Thread] = []

    # -- setup ------------------------------------------------------------

    def _expect_ack(self, ch: Channel, what: str) -> None:
        ch.sock.settimeout(self.timeout)
        try:
            reply = ch.recv()
        except socket.timeout:
            raise RunTimeout(f"{ch.name}: no reply to {what} within {self.timeout:.1f}s") from None
        except (ConnectionClosed, OSError) as exc:
            raise RunError(f"{ch.name}: no reply to {what}: {exc!r}") from None
        finally:
            ch.sock.settimeout(None)
        if reply.msg_type == MsgType.ERROR:
            raise RunError(f"{ch.name}: {what} rejected: {parse_json(reply.payload).get('error')}")
        if reply.msg_type != MsgType.ACK:
            raise RunError(f"{ch.name}: expected ACK to {what}, got {reply.msg_type.name}")

    def connect(self) -> None:
        plan = self.plan
        payloads = plan.link_payloads()
        for i, addr in enumerate(self.workers):
            try:
                ch = Channel.connect(addr, self.shaping, self.connect_timeout, name=f"worker{i + 1}@{addr}")
            except OSError as exc:
                raise RunError(f"cannot connect to worker {i + 1} at {addr}: {exc}") from None
            self.chans.append(ch)
            self.acks.append([])
        # every request goes out before any reply is awaited so that, on delayed
        # links, the handshakes of different workers overlap
        for ch in self.chans:
            ch.send(Frame(MsgType.HELLO, json_payload({"role": "orchestrator"})))
        for ch in self.chans:
            self._expect_ack(ch, "HELLO")
        for i, ch in enumerate(self.chans):
            first, last = plan.stage_ranges()[i]
            assign = AssignPayload(
                model=plan.model.name, stage=i + 1, first=first, last=last,
                next_hop=self.workers[i + 1] if i + 1 < len(self.workers) else "orchestrator",
                window=self.window, backend=self.backend,
                stage_seconds=plan.stage_seconds(i), output_bytes=payloads[i],
                kernel=self.kernel, seed=self.seed,
            )
            ch.send(Frame(MsgType.ASSIGN, assign.encode()))
        for ch in self.chans:
            self._expect_ack(ch, "ASSIGN")
        for i, ch in enumerate(self.chans):
            t = threading.Thread(target=self._reader, args=(i, ch), daemon=True)
            t.start()
            self.readers.append(t)

    # -- receive ----------------------------------------------------------

    def _fail(self, message: str) -> None:
        with self.cv:
            if self.error is None:
                self.error = message
            self.cv.notify_all()

    def _reader(self, i: int, ch: Channel) -> None:
        try:
            while True:
                frame = ch.recv()
                mt = frame.msg_type
                if mt == MsgType.RESULT and i == len(self.chans) - 1:
                    self._on_result(ch, frame)
                elif mt == MsgType.ACK:
                    with self.cv:
                        self.acks[i].append(frame)
                        self.cv.notify_all()
                elif mt == MsgType.ERROR:
                    self._fail(f"worker {i + 1}: {parse_json(frame.payload).get('error')}")
                    return
                else:
                    raise ProtocolError(f"unexpected {mt.name}")
        except ConnectionClosed:
            if not self.finished:
                self._fail(f"worker {i + 1} closed the connection")
        except (ProtocolError, OSError) as exc:
            if not self.finished:
                self._fail(f"worker {i + 1}: {exc}")

    def _on_result(self, ch: Channel, frame: Frame) -> None:
        t = time.monotonic()
        data = DataPayload.decode(frame.payload, verbose=bool(frame.flags & FLAG_VERBOSE))
        bid = data.batch_id
        if frame.flags & FLAG_ACK:
            ch.send(Frame(MsgType.ACK, json_payload({"batch": bid})), bid)
        with self.cv:
            if bid not in self.dispatched:
                self.error = f"result for batch {bid}, which was never dispatched"
            elif bid in self.results:
                self.error = f"duplicate result for batch {bid}"
            else:
                self.results[bid] = (t, data, len(frame.payload) + HEADER_LEN)
                self.cycles.append(self._cycle(data.report, bid))
            self.cv.notify_all()

    def _cycle(self, report: list, bid: int) -> float:
        """Busiest component seen by this batch, used to pace dispatch."""
        comps = [self.own_busy.get(bid, 0.0)]
        for e in report:
            comps += [e["exec"] + e.get("ser", 0.0), e.get("prev_busy", 0.0), e.get("link", 0.0)]
        if self.shaping is not None and self.shaping.bandwidth:
            comps.append((self.plan.model.input_bytes + 512) * 8 / self.shaping.bandwidth)
        return max(comps)

    # -- send -------------------------------------------------------------

    def _wait(self, pred, what: str) -> None:
        """Wait on the condition with a no-progress timeout. Caller holds ``cv``."""
        while True:
            if self.error:
                raise RunError(self.error)
            if pred():
                return
            progress = len(self.results)
            if not self.cv.wait(self.timeout) and len(self.results) == progress and not pred():
                raise RunTimeout(f"timed out after {self.timeout:.1f}s waiting for {what}")

    def _await_ack(self, i: int, what: str) -> None:
        with self.cv:
            self._wait(lambda: bool(self.acks[i]), what)
            self.acks[i].pop(0)

    def dispatch(self, bid: int, warm: bool) -> None:
        head = self.chans[0]
        t0 = time.monotonic()
        with self.cv:
            self.dispatched[bid] = t0
        flags = FLAG_WARMUP if warm else 0
        if self.chatty:
            head.send(Frame(MsgType.HELLO, json_payload({"op": "prepare", "batch": bid})), bid)
            self._await_ack(0, f"prepare ACK for batch {bid}")
            flags |= FLAG_ACK | FLAG_VERBOSE
        ts = time.perf_counter()
        body = make_body(self.seed, bid, 0, self.plan.model.input_bytes)
        payload = DataPayload(bid, 0, body).encode(verbose=self.chatty, msg_type=MsgType.BATCH)
        self.own_ser[bid] = time.perf_counter() - ts
        head.send(Frame(MsgType.BATCH, payload, flags), bid)
        if self.chatty:
            self._await_ack(0, f"ACK for batch {bid}")
        self.own_busy[bid] = time.monotonic() - t0

    def period(self) -> float:
        recent = self.cycles[-5:]
        return PACING_MARGIN * statistics.median(recent) if recent else 0.0

    def stream(self) -> None:
        total = self.warmup + self.n_batches
        next_at = 0.0
        for bid in range(total):
            warm = bid < self.warmup
            with self.cv:
                self._wait(lambda: len(self.dispatched) - len(self.results) < self.window,
                           f"window slot for batch {bid}")
            if not warm and self.pacing == "bottleneck":
                delay = next_at - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
            self.dispatch(bid, warm)
            next_at = self.dispatched[bid] + self.period()
            if warm and bid == self.warmup - 1:
                with self.cv:
                    self._wait(lambda: len(self.results) == self.warmup, "warm-up result")
        with self.cv:
            self._wait(lambda: len(self.results) == total, "results")

    def shutdown(self) -> None:
        self.finished = True
        if self.chans:
            try:
                self.chans[0].send(Frame(MsgType.SHUTDOWN))
                self.chans[0].flush(10.0)
            except OSError:
                pass
        # workers close their end once their session is over; waiting for that
        # keeps a follow-up run from reaching a worker that is still winding down
        deadline = time.monotonic() + SHUTDOWN_GRACE
        for t in self.readers:
            t.join(max(0.0, deadline - time.monotonic()))
        for ch in self.chans:
            ch.close()

    # -- measurement ------------------------------------------------------

    def record(self, failed: bool = False, error: Optional[str] = None) -> MeasurementRecord:
        plan = self.plan
        bs = plan.model.batch_size
        ids = sorted(b for b in self.results if b >= self.warmup)
        k = plan.n_stages
        rec = MeasurementRecord(
            model=plan.model.name, split=plan.label, stage_exec=[0.0] * k,
            serialization_time=0.0, wire_time=0.0, latency=0.0, throughput=0.0,
            backend=self.backend, window=self.window, n_batches=len(ids),
            batch_ids=ids, failed=failed, error=error,
        )
        if not ids:
            return rec
        lat, ser, execs, msgs, nbytes = [], [], [[] for _ in range(k)], [], []
        for bid in ids:
            t_recv, data, res_len = self.results[bid]
            lat.append(t_recv - self.dispatched[bid])
            report = data.report
            ser.append(self.own_ser.get(bid, 0.0) + sum(e.get("ser", 0.0) for e in report))
            for s, e in enumerate(report[:k]):
                execs[s].append(e["exec"])
            m = sum(ch.tx.get(bid, [0, 0])[0] for ch in self.chans) + 1
            b = sum(ch.tx.get(bid, [0, 0])[1] for ch in self.chans) + res_len
            for s, e in enumerate(report):
                m += e["tx"][0] + (1 if s > 0 else 0)
                b += e["tx"][1] + (e["carry_in"] if s > 0 else 0)
            msgs.append(m)
            nbytes.append(b)
        rec.latencies = lat
        rec.latency = statistics.fmean(lat)
        rec.stage_exec = [statistics.fmean(x) if x else 0.0 for x in execs]
        rec.serialization_time = statistics.fmean(ser)
        rec.wire_time = max(0.0, rec.latency - sum(rec.stage_exec) - rec.serialization_time)
        recv = sorted(self.results[b][0] for b in ids)
        first_dispatch = min(self.dispatched[b] for b in ids)
        rec.throughput_span = len(ids) * bs / (recv[-1] - first_dispatch)
        if len(ids) >= 2 and recv[-1] > recv[0]:
            rec.throughput = (len(ids) - 1) * bs / (recv[-1] - recv[0])
        else:
            rec.throughput = rec.throughput_span
        rec.messages_per_batch = statistics.fmean(msgs)
        rec.bytes_per_batch = statistics.fmean(nbytes)
        first_rep, last_rep = self.results[ids[0]][1].report, self.results[ids[-1]][1].report
        rec.stage_cpu = [last_rep[s]["cpu"] - first_rep[s]["cpu"] for s in range(min(k, len(last_rep)))]
        rec.stage_peak_rss = [last_rep[s].get("rss") for s in range(min(k, len(last_rep)))]
        rec.raw = [{"latency": rec.latency, "throughput": rec.throughput,
                    "throughput_span": rec.throughput_span}]
        return rec


def run_orchestrator(plan: PartitionPlan, workers: Sequence[str], n_batches: int,
                     window: Optional[int] = None, backend: str = "framed", *,
                     kernel: str = "busy", pacing: str = "bottleneck", warmup: int = 1,
                     timeout: float = 60.0, connect_timeout: float = 5.0, seed: int = 0,
                     shaping: Optional[ShapingConfig] = None) -> MeasurementRecord:
    """Drive one measured run of ``plan`` across ``workers`` (one address per stage).

    Throughput is the steady-state result rate, ``(n - 1) * batch / (last - first result)``;
    the whole-run figure ``n * batch / (last result - first dispatch)`` is kept as
    ``throughput_span``. Raises ``RunError`` (or ``RunTimeout``) with a diagnostic record.
    """
    run = _Run(plan, workers, n_batches, window or default_window(plan.n_stages), backend,
               kernel, pacing, warmup, timeout, connect_timeout, seed, shaping)
    try:
        run.connect()
        run.stream()
    except RunError as exc:
        run.shutdown()
        raise type(exc)(str(exc), run.record(failed=True, error=str(exc))) from None
    except OSError as exc:
        run.shutdown()
        raise RunError(str(exc), run.record(failed=True, error=str(exc))) from None
    run.shutdown()
    rec = run.record()
    dispatched = set(run.dispatched)
    if dispatched != set(run.results):
        raise RunError("result ids do not match dispatched ids", rec)
    return rec.validate()
