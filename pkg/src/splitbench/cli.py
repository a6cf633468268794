"""Command-line entry point: ``splitbench <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .netem import DEFAULT_BUCKET_DEPTH, ShapingConfig
from .planner import MetricPoint, PartitionPlan, PlanError, pareto_front, predict, sweep_predict
from .profiles import (
    NetworkModel,
    ProfileError,
    load_model_profile,
    microprofile_blocks,
    parse_device_spec,
    parse_net_spec,
    shipped_profiles,
    synth_profile,
    dumps_model_profile,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_RUNTIME = 4
EXIT_TIMEOUT = 5

LOG_ENV = "SPLITBENCH_LOG"

log = logging.getLogger("splitbench")


class UsageError(Exception):
    pass


# -- shared parsing helpers -------------------------------------------------

def _devices(text: str) -> list:
    return [parse_device_spec(t) for t in text.split(",") if t.strip()]


def _links(text: Optional[str], k: int) -> list[NetworkModel]:
    """One net spec for every link, or ``;``-separated specs, one per link."""
    if not text:
        return [NetworkModel()] * k
    specs = [s for s in text.split(";") if s.strip()]
    if len(specs) == 1:
        return [parse_net_spec(specs[0])] * k
    if len(specs) != k:
        raise UsageError(f"--net lists {len(specs)} links but there are {k} stages")
    return [parse_net_spec(s) for s in specs]


def _splits(text: str) -> tuple[int, ...]:
    text = text.strip().lstrip("Pp")
    try:
        return tuple(int(t) for t in text.replace("-", ",").split(",") if t)
    except ValueError:
        raise UsageError(f"bad split {text!r}") from None


def _write(args, text: str) -> None:
    if getattr(args, "out", None):
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _fmt_num(x: float) -> str:
    return f"{x:.4f}" if x < 1e6 else f"{x:.4g}"


def _table(headers: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows]
    return "\n".join(line.rstrip() for line in lines) + "\n"


# -- subcommands --------------------------------------------------------------

def cmd_profile(args) -> int:
    if args.action == "list":
        _write(args, "".join(name.removesuffix(".profile") + "\n" for name in shipped_profiles()))
    elif args.action == "show":
        m = load_model_profile(args.model)
        rows = [[str(i), b.name, str(b.output_bytes),
                 " ".join(f"{c}={t * 1000:.3f}ms" for c, t in sorted(b.exec_time.items()))]
                for i, b in enumerate(m.blocks, 1)]
        head = f"{m.name}: {m.n_blocks} blocks, batch {m.batch_size}, input {m.input_bytes} bytes\n"
        _write(args, head + _table(["#", "block", "out_bytes", "time"], rows))
    elif args.action == "synth":
        m = synth_profile(args.blocks, args.shape, args.total, args.decay, input_bytes=args.input_bytes,
                          batch_size=args.batch, device_classes=args.classes.split(","), name=args.name)
        _write(args, dumps_model_profile(m))
    elif args.action == "micro":
        m = load_model_profile(args.model)
        dev = parse_device_spec(args.device)
        times = microprofile_blocks(m, dev, args.repetitions, args.kernel)
        rows = [[b.name, f"{b.time_on(dev.device_class) * dev.compute_scale * 1000:.3f}", f"{t * 1000:.3f}"]
                for b, t in zip(m.blocks, times)]
        _write(args, _table(["block", "profiled_ms", "measured_ms"], rows))
    return EXIT_OK


def cmd_plan(args) -> int:
    model = load_model_profile(args.model)
    devices = _devices(args.devices)
    links = _links(args.net, len(devices))
    input_link = parse_net_spec(args.input_net) if args.input_net else None
    results = sweep_predict(model, devices, links, args.window, input_link)
    front = {p.label for p in pareto_front(MetricPoint(pl.label, m.latency, m.throughput) for pl, m in results)}
    if args.json:
        doc = [{"split": pl.label, "splits": list(pl.splits), "latency": m.latency,
                "throughput": m.throughput, "bottleneck": m.bottleneck,
                "stage_times": list(m.stage_times), "transfer_times": list(m.transfer_times),
                "pareto": pl.label in front} for pl, m in results]
        _write(args, json.dumps(doc, indent=2) + "\n")
        return EXIT_OK
    rows = [[pl.label, _fmt_num(m.latency), _fmt_num(m.throughput), _fmt_num(m.bottleneck),
             "*" if pl.label in front else ""] for pl, m in results]
    _write(args, _table(["split", "latency_s", "throughput_img_s", "bottleneck_s", "pareto"], rows))
    return EXIT_OK


def _shaping_from_args(args) -> Optional[ShapingConfig]:
    if args.net:
        net = parse_net_spec(args.net)
        cfg = ShapingConfig.from_network_model(net, args.bucket_bytes)
    else:
        cfg = ShapingConfig.from_flags(args.delay_ms, args.bandwidth_bps, args.bucket_bytes)
    return None if cfg.is_identity else cfg


def cmd_worker(args) -> int:
    from .runtime.worker import run_worker

    shaping = _shaping_from_args(args)

    def announce(address: str) -> None:
        print(f"listening {address}", flush=True)

    status = run_worker(args.listen, shaping, args.sessions, announce, args.idle_timeout)
    return EXIT_RUNTIME if status else EXIT_OK


def cmd_orchestrate(args) -> int:
    from .runtime.orchestrator import run_orchestrator

    model = load_model_profile(args.model)
    workers = [w for w in args.workers.split(",") if w]
    devices = _devices(args.devices) if args.devices else [parse_device_spec("pi")] * len(workers)
    if len(devices) != len(workers):
        raise UsageError(f"{len(workers)} workers but {len(devices)} devices")
    plan = PartitionPlan(model, _splits(args.split), devices, _links(args.net, len(workers)))
    shaping = None
    if args.delay_ms or args.bandwidth_bps:
        shaping = ShapingConfig.from_flags(args.delay_ms, args.bandwidth_bps)
    rec = run_orchestrator(plan, workers, args.batches, args.window, args.backend, kernel=args.kernel,
                           pacing=args.pacing, warmup=args.warmup, timeout=args.timeout,
                           connect_timeout=args.connect_timeout, seed=args.seed, shaping=shaping)
    doc = rec.to_dict()
    doc["predicted"] = {"latency": (p := predict(plan, args.window)).latency, "throughput": p.throughput}
    _write(args, json.dumps(doc, indent=2) + "\n")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .harness import SweepConfig, Topology, render_report, run_sweep

    model = load_model_profile(args.model)
    devices = _devices(args.devices)
    links = _links(args.net, len(devices))
    addresses = tuple(w for w in args.workers.split(",") if w) if args.workers else None
    if addresses is not None and len(addresses) != len(devices):
        raise UsageError(f"{len(addresses)} workers but {len(devices)} devices")
    topo = Topology(tuple(devices), tuple(links), addresses=addresses)
    cfg = SweepConfig(repetitions=args.repetitions, n_batches=args.batches, window=args.window,
                      backend=args.backend, kernel=args.kernel, pacing=args.pacing,
                      timeout=args.timeout, seed=args.seed)

    def progress(rec):
        status = f"FAILED ({rec.error})" if rec.failed else \
            f"latency={rec.latency:.4f}s throughput={rec.throughput:.3f}img/s"
        log.info("%s %s", rec.split, status)

    report = run_sweep(model, topo, cfg, progress)
    _write(args, render_report(report, args.format))
    return EXIT_OK


def _read_points(path: str) -> tuple[list[MetricPoint], Optional[list[str]]]:
    with open(path, newline="", encoding="utf-8") as f:
        rows = [r for r in csv.reader(f) if r and not r[0].startswith("#")]
    header = None
    if rows:
        try:
            float(rows[0][1])
        except (ValueError, IndexError):
            header, rows = rows[0], rows[1:]
    pts = []
    for n, r in enumerate(rows, 1):
        if len(r) < 3:
            raise ProfileError(f"{path}: row {n}: expected label,latency,throughput")
        try:
            pts.append(MetricPoint(r[0], float(r[1]), float(r[2])))
        except ValueError:
            raise ProfileError(f"{path}: row {n}: non-numeric latency/throughput") from None
    return pts, header


def cmd_pareto(args) -> int:
    pts, header = _read_points(args.input)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(header[:3])
    for p in pareto_front(pts):
        w.writerow([p.label, repr(p.latency), repr(p.throughput)])
    _write(args, buf.getvalue())
    return EXIT_OK


def cmd_report(args) -> int:
    from .harness import compare_model_vs_measured, emit_report, load_report

    report = load_report(args.input)
    if args.format:
        if not args.out:
            raise UsageError("--format needs --out")
        emit_report(report, args.format, args.out)
        return EXIT_OK
    front = set(report.pareto)
    rows = []
    for r in report.records:
        if r.failed:
            rows.append([r.split, "failed", "", "", ""])
        else:
            rows.append([r.split, _fmt_num(r.latency), _fmt_num(r.throughput),
                         _fmt_num(r.network_time), "*" if r.split in front else ""])
    text = _table(["split", "latency_s", "throughput_img_s", "network_s", "pareto"], rows)
    if args.model:
        model = load_model_profile(args.model)
        devices = _devices(args.devices)
        preds = sweep_predict(model, devices, _links(args.net, len(devices)), args.window)
        cmp = compare_model_vs_measured(report, preds, args.threshold)
        text += json.dumps(cmp.summary(), indent=2) + "\n"
    sys.stdout.write(text)
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def _add_shaping_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--delay-ms", help="one-way delay added to sent messages (ms, or with a unit: 100ms)")
    p.add_argument("--bandwidth-bps", help="egress rate limit (bits/s, or with a unit: 5Mbit)")
    p.add_argument("--bucket-bytes", type=int, default=DEFAULT_BUCKET_DEPTH, help="token bucket depth")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--window", type=int, help="max batches in flight (default: stages + 1)")
    p.add_argument("--backend", choices=("framed", "chatty"), default="framed")
    p.add_argument("--kernel", choices=("busy", "sleep", "auto"), default="auto")
    p.add_argument("--pacing", choices=("bottleneck", "none"), default="bottleneck")
    p.add_argument("--timeout", type=float, default=60.0, help="seconds without progress before giving up")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="splitbench", description="Pipeline split benchmarking for chain models.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("profile", help="inspect, synthesize or micro-benchmark model profiles")
    psub = p.add_subparsers(dest="action", required=True)
    q = psub.add_parser("list", help="names of bundled profiles")
    q.add_argument("--out")
    q = psub.add_parser("show", help="print a profile's blocks")
    q.add_argument("model")
    q.add_argument("--out")
    q = psub.add_parser("synth", help="write a synthetic profile")
    q.add_argument("--blocks", type=int, required=True)
    q.add_argument("--shape", choices=("uniform", "front_heavy", "back_heavy"), default="uniform")
    q.add_argument("--total", type=float, required=True, help="total compute seconds per batch")
    q.add_argument("--decay", type=float, default=1.0, help="activation size ratio per block")
    q.add_argument("--input-bytes", type=int, default=1024)
    q.add_argument("--batch", type=int, default=8)
    q.add_argument("--classes", default="cpu")
    q.add_argument("--name")
    q.add_argument("--out")
    q = psub.add_parser("micro", help="run each block's synthetic kernel and compare with the profile")
    q.add_argument("model")
    q.add_argument("--device", default="pi")
    q.add_argument("--repetitions", type=int, default=5)
    q.add_argument("--kernel", choices=("busy", "sleep"), default="busy")
    q.add_argument("--out")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("plan", help="predict latency/throughput for every split")
    p.add_argument("--model", required=True, help="profile path or bundled name")
    p.add_argument("--devices", default="pi,pi", help="comma-separated device specs, one per stage")
    p.add_argument("--net", help="link spec such as delay=100ms,bw=5Mbit; ';' separates per-link specs")
    p.add_argument("--input-net", help="link spec for sending the input batch to stage 1")
    p.add_argument("--window", type=int)
    p.add_argument("--json", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("worker", help="serve one pipeline stage")
    p.add_argument("--listen", default="127.0.0.1:0")
    p.add_argument("--sessions", type=int, default=1, help="runs to serve before exiting")
    p.add_argument("--idle-timeout", type=float, default=120.0)
    p.add_argument("--net", help="shaping as a link spec (overrides --delay-ms/--bandwidth-bps)")
    _add_shaping_flags(p)
    p.set_defaults(func=cmd_worker)

    p = sub.add_parser("orchestrate", help="run one split against running workers")
    p.add_argument("--model", required=True)
    p.add_argument("--split", required=True, help="split index, e.g. 3 or 3,7 for three stages")
    p.add_argument("--workers", required=True, help="comma-separated host:port, one per stage")
    p.add_argument("--devices")
    p.add_argument("--net", help="link specs used for the prediction printed alongside")
    p.add_argument("--batches", type=int, default=10)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--connect-timeout", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    _add_run_flags(p)
    p.add_argument("--delay-ms", help="shaping for the orchestrator's own sends")
    p.add_argument("--bandwidth-bps")
    p.set_defaults(func=cmd_orchestrate)

    p = sub.add_parser("sweep", help="measure every split with repetitions")
    p.add_argument("--model", required=True)
    p.add_argument("--devices", default="pi,pi")
    p.add_argument("--net", help="link specs; local workers shape their sends accordingly")
    p.add_argument("--workers", help="use running workers instead of spawning local ones")
    p.add_argument("--repetitions", type=int, default=5)
    p.add_argument("--batches", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out")
    _add_run_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("pareto", help="non-dominated rows of a label,latency,throughput CSV")
    p.add_argument("input")
    p.add_argument("--out")
    p.set_defaults(func=cmd_pareto)

    p = sub.add_parser("report", help="summarize or convert a sweep report")
    p.add_argument("input", help="report .csv or .json")
    p.add_argument("--format", choices=("csv", "json"), help="convert to this format (with --out)")
    p.add_argument("--out")
    p.add_argument("--model", help="compare against planner predictions for this profile")
    p.add_argument("--devices", default="pi,pi")
    p.add_argument("--net")
    p.add_argument("--window", type=int)
    p.add_argument("--threshold", type=float, default=0.15)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=os.environ.get(LOG_ENV, "WARNING").upper(), stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    from .harness import SweepError
    from .runtime.orchestrator import RunError, RunTimeout
    from .runtime.protocol import ProtocolError

    try:
        return args.func(args)
    except UsageError as exc:
        print(f"splitbench: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ProfileError, PlanError, ValueError, FileNotFoundError) as exc:
        print(f"splitbench: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except RunTimeout as exc:
        print(f"splitbench: timed out: {exc}", file=sys.stderr)
        return EXIT_TIMEOUT
    except (RunError, SweepError, ProtocolError, OSError) as exc:
        print(f"splitbench: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
