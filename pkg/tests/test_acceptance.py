"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (with its runtime) that is printed in the
"acceptance criteria" section of the pytest terminal summary.
"""

import random
import socket
import statistics
import threading
import time

import pytest

from splitbench.harness import SweepConfig, Topology, compare_model_vs_measured, run_sweep
from splitbench.netem import ShapingConfig, wrap_connection
from splitbench.planner import MetricPoint, best_split, pareto_front, points_from_predictions, sweep_predict
from splitbench.profiles import BUILTIN_DEVICES, DeviceProfile, NetworkModel, synth_profile
from splitbench.runtime.protocol import BadMagic, Frame, MsgType, decode_bytes, decode_frame, encode_frame

pytestmark = pytest.mark.slow

PI = BUILTIN_DEVICES["pi"]
FREE = NetworkModel()
SHAPED = NetworkModel(0.1, 5e6)

# every sweep run by this module, for the completeness and lifecycle check
_REPORTS = []


def sweep(model, topology, config):
    report = run_sweep(model, topology, config)
    _REPORTS.append((report, config))
    return report


# -- 1: Pareto oracle -------------------------------------------------------------

def brute_force_front(points):
    def dominated(p):
        return any(q.latency <= p.latency and q.throughput >= p.throughput
                   and (q.latency < p.latency or q.throughput > p.throughput) for q in points)

    keep = [p for p in points if not dominated(p)]
    return sorted(keep, key=lambda p: (p.latency, -p.throughput))


def random_point_set(rng, n):
    kind = rng.choice(["uniform", "grid", "line_up", "line_down", "mixed"])
    pts = []
    for i in range(n):
        if kind == "uniform":
            lat, thr = rng.uniform(0, 10), rng.uniform(0, 10)
        elif kind == "grid":
            lat, thr = rng.randint(0, 9) * 0.5, rng.randint(0, 9) * 0.25
        elif kind == "line_up":
            # collinear, increasing trade-off: every point is non-dominated
            x = rng.randint(0, n)
            lat, thr = 1.0 + 0.5 * x, 2.0 + 0.25 * x
        elif kind == "line_down":
            x = rng.randint(0, n)
            lat, thr = 1.0 + 0.5 * x, 100.0 - 0.25 * x
        else:
            lat, thr = rng.choice([(1.0, 1.0), (2.0, 3.0), (rng.uniform(0, 5), rng.uniform(0, 5))])
        pts.append(MetricPoint(f"p{i}", lat, thr))
    if pts and rng.random() < 0.5:
        pts += rng.sample(pts, max(1, n // 10))  # exact duplicates
    rng.shuffle(pts)
    return pts


def test_c1_pareto_matches_brute_force(criterion):
    with criterion(1, "Pareto front equals brute-force dominance filter", limit=10) as c:
        rng = random.Random(20240601)
        sizes = [1000] * 10 + [rng.randint(0, 1000) for _ in range(190)]
        for n in sizes:
            pts = random_point_set(rng, n)
            assert pareto_front(pts) == brute_force_front(pts)
        c.detail = f"{len(sizes)} sets, sizes 0..{max(sizes)}"


# -- 2: codec -------------------------------------------------------------------

def random_frame(rng):
    return Frame(rng.choice(list(MsgType)), rng.randbytes(rng.randint(0, 512)), rng.randint(0, 0xFFFF))


def test_c2_codec_golden_and_round_trip(criterion):
    with criterion(2, "frame codec golden bytes, round trip, magic check", limit=5) as c:
        assert encode_frame(Frame(MsgType.SHUTDOWN)) == bytes.fromhex("50 50 49 50 01 07 00 00 00 00 00 00")
        rng = random.Random(7)
        for _ in range(10_000):
            f = random_frame(rng)
            raw = encode_frame(f)
            assert decode_bytes(raw) == f
            bad = bytearray(raw)
            bad[rng.randrange(4)] ^= rng.randint(1, 255)
            with pytest.raises(BadMagic):
                decode_bytes(bytes(bad))
        c.detail = "10000 frames round-tripped, 10000 corrupted magics rejected"


# -- 3: shaping accuracy --------------------------------------------------------------

def test_c3_shaping_accuracy(criterion):
    with criterion(3, "shaped goodput and added delay on loopback", limit=60) as c:
        bw = 5e6
        total = int(bw / 8 * 10.5)
        a, b = socket.socketpair()
        conn = wrap_connection(a, ShapingConfig(0.0, bw))
        done = []

        def drain():
            n = 0
            while n < total:
                n += len(b.recv(1 << 16))
            done.append(time.monotonic())

        reader = threading.Thread(target=drain)
        reader.start()
        chunk = bytes(64 * 1024)
        t0 = time.monotonic()
        sent = 0
        while sent < total:
            piece = chunk[: total - sent]
            conn.sendall(piece)
            sent += len(piece)
        reader.join(30)
        conn.close()
        b.close()
        duration = done[0] - t0
        goodput = total * 8 / duration
        assert duration >= 10
        assert goodput == pytest.approx(bw, rel=0.10)

        def frame_delays(shaping, count=20):
            a, b = socket.socketpair()
            conn = wrap_connection(a, shaping)
            stream = b.makefile("rb")
            raw = encode_frame(Frame(MsgType.SHUTDOWN))
            assert len(raw) == 12
            out = []
            for _ in range(count):
                t = time.monotonic()
                conn.sendall(raw)
                decode_frame(stream)
                out.append(time.monotonic() - t)
            conn.close()
            stream.close()
            b.close()
            return out

        base = statistics.fmean(frame_delays(None))
        added = [d - base for d in frame_delays(ShapingConfig(0.1, bw))]
        assert all(abs(x - 0.1) <= 0.010 for x in added), added
        c.detail = (f"goodput {goodput / 1e6:.3f} Mbit/s over {duration:.1f}s; "
                    f"added delay {min(added) * 1000:.1f}..{max(added) * 1000:.1f} ms")


# -- 4 and 6: model vs measurement on a 20-block synthetic model ----------------------------

SYNTH20 = dict(n_blocks=20, shape="uniform", total_time=0.4, activation_decay=0.95, input_bytes=230_000)
SYNTH20_CONFIG = SweepConfig(repetitions=5, n_batches=4, kernel="auto")


@pytest.fixture(scope="module")
def synthetic_sweeps():
    model = synth_profile(**SYNTH20)
    out = {}
    t0 = time.monotonic()
    for name, net in (("unshaped", FREE), ("shaped", SHAPED)):
        report = sweep(model, Topology((PI, PI), (net, net)), SYNTH20_CONFIG)
        preds = sweep_predict(model, [PI, PI], [net, net])
        out[name] = (report, compare_model_vs_measured(report, preds, threshold=0.15))
    return out, time.monotonic() - t0


def test_c4_model_matches_measurement(criterion, synthetic_sweeps):
    sweeps, elapsed = synthetic_sweeps
    with criterion(4, "planner vs measured within 15% on >= 90% of splits", limit=600,
                   elapsed_before=elapsed) as c:
        parts = []
        for name, (report, cmp) in sweeps.items():
            assert not any(r.failed for r in report.records)
            assert len(cmp.rows) == 19
            worst = max(cmp.rows, key=lambda r: max(r.latency_error, r.throughput_error))
            parts.append(f"{name} {cmp.fraction_within('both'):.0%} within "
                         f"(worst {worst.split}: latency {worst.latency_error:.1%}, "
                         f"throughput {worst.throughput_error:.1%})")
        c.detail = "; ".join(parts)
        for name, (report, cmp) in sweeps.items():
            assert cmp.fraction_within("throughput") >= 0.9, name
            assert cmp.fraction_within("latency") >= 0.9, name
            assert cmp.fraction_within("both") >= 0.9, name


def test_c6_shaping_degrades_the_frontier(criterion, synthetic_sweeps):
    sweeps, _ = synthetic_sweeps
    with criterion(6, "shaping raises every latency and lowers best throughput") as c:
        free, shaped = sweeps["unshaped"][0], sweeps["shaped"][0]
        slower = [r.split for r in free.records if shaped.record(r.split).latency > r.latency]
        best_free = max(r.throughput for r in free.records)
        best_shaped = max(r.throughput for r in shaped.records)
        c.detail = (f"{len(slower)}/{len(free.records)} splits slower when shaped; "
                    f"best throughput {best_free:.2f} -> {best_shaped:.2f} img/s")
        assert len(slower) == len(free.records)
        assert best_shaped < best_free


# -- 5: the best split moves toward the first device under a slow link -----------------------

def test_c5_network_shift(criterion):
    with criterion(5, "throughput-optimal split does not move earlier when shaped", limit=300) as c:
        model = synth_profile(8, "front_heavy", 0.6, 0.6, input_bytes=400_000)
        fast = DeviceProfile("fast", "cpu", 0.05)
        cfg = SweepConfig(repetitions=3, n_batches=5, kernel="auto")
        found = {}
        for name, net in (("unshaped", FREE), ("shaped", NetworkModel(0.0, 5e6))):
            preds = sweep_predict(model, [PI, fast], [net, net])
            planned = best_split(points_from_predictions(preds)).label
            report = sweep(model, Topology((PI, fast), (net, net)), cfg)
            measured = best_split(report.points()).label
            found[name] = (int(planned[1:]), int(measured[1:]))
        c.detail = (f"planner argmax P{found['unshaped'][0]} -> P{found['shaped'][0]}, "
                    f"measured argmax P{found['unshaped'][1]} -> P{found['shaped'][1]}")
        assert found["shaped"][0] >= found["unshaped"][0]
        assert found["shaped"][1] >= found["unshaped"][1]


# -- 7: chatty vs framed backend ---------------------------------------------------------

def test_c7_backend_overhead(criterion):
    with criterion(7, "chatty backend is slower than framed", limit=120) as c:
        model = synth_profile(2, "uniform", 0.1, 1.0, input_bytes=2000)
        net = NetworkModel(0.01)
        topo = Topology((PI, PI), (net, net))
        got = {}
        for backend in ("framed", "chatty"):
            cfg = SweepConfig(repetitions=5, n_batches=6, backend=backend, kernel="auto")
            got[backend] = sweep(model, topo, cfg).records[0]
        extra = got["chatty"].latency - got["framed"].latency
        c.detail = (f"latency +{extra * 1000:.1f} ms, throughput "
                    f"{got['framed'].throughput:.1f} vs {got['chatty'].throughput:.1f} img/s")
        assert extra >= 0.020
        assert got["framed"].throughput >= got["chatty"].throughput


# -- 8: pipelining law ---------------------------------------------------------------------

def test_c8_pipelining_law(criterion):
    with criterion(8, "window 1 obeys throughput x latency = batch; deeper window pipelines",
                   limit=120) as c:
        model = synth_profile(2, "uniform", 0.2, 1.0, input_bytes=4000)
        topo = Topology((PI, PI), (FREE, FREE))
        serial = sweep(model, topo, SweepConfig(repetitions=3, n_batches=6, window=1)).records[0]
        piped = sweep(model, topo, SweepConfig(repetitions=3, n_batches=8, window=3)).records[0]
        product = serial.throughput * serial.latency
        c.detail = (f"window 1: throughput x latency = {product:.3f} (batch {model.batch_size}); "
                    f"window 3 speed-up {piped.throughput / serial.throughput:.2f}x")
        assert product == pytest.approx(model.batch_size, rel=0.05)
        assert piped.throughput >= 1.5 * serial.throughput


# -- 9: completeness and worker lifecycle -----------------------------------------------------

def test_c9_completeness_and_lifecycle(criterion):
    with criterion(9, "every batch returned once, workers exit within 5 s") as c:
        if not _REPORTS:
            model = synth_profile(4, "uniform", 0.08, 0.7, input_bytes=8000)
            for net in (FREE, NetworkModel(0.01, 2e7)):
                sweep(model, Topology((PI, PI), (net, net)), SweepConfig(repetitions=2, n_batches=4))
        runs = 0
        slowest_exit = 0.0
        for report, config in _REPORTS:
            expected = list(range(config.warmup, config.warmup + config.n_batches))
            for rec in report.records:
                assert not rec.failed, rec.error
                for raw in rec.raw:
                    assert raw["batch_ids"] == expected, (rec.split, raw["batch_ids"])
                    runs += 1
            exit_s = report.environment["worker_exit_seconds_max"]
            assert exit_s is not None and exit_s < 5
            slowest_exit = max(slowest_exit, exit_s)
        c.detail = f"{runs} runs complete, slowest worker exit {slowest_exit:.2f}s after SHUTDOWN"
