"""Benchmark driver: split sweeps x repetitions, aggregation, Pareto annotation, reports."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import platform
import statistics
import subprocess
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

from .netem import ShapingConfig
from .planner import (MetricPoint, PartitionPlan, PredictedMetrics, enumerate_splits, pareto_front,
                      saturating_window)
from .profiles import DeviceProfile, ModelProfile, NetworkModel
from .records import MeasurementRecord
from .runtime.kernel import resolve_kernel
from .runtime.orchestrator import RunError, run_orchestrator

log = logging.getLogger(__name__)

WORKER_EXIT_TIMEOUT = 5.0


class SweepError(RuntimeError):
    pass


@dataclass(frozen=True)
class Topology:
    """Stage devices plus the links between them.

    ``links`` feed the planner; ``shaping[i]`` is applied by worker i to
    everything it sends. By default each worker shapes with its outgoing link.
    """

    stage_devices: tuple[DeviceProfile, ...]
    links: tuple[NetworkModel, ...]
    shaping: tuple[Optional[ShapingConfig], ...] = ()
    addresses: Optional[tuple[str, ...]] = None
    input_link: Optional[NetworkModel] = None

    def __post_init__(self):
        object.__setattr__(self, "stage_devices", tuple(self.stage_devices))
        object.__setattr__(self, "links", tuple(self.links))
        if not self.shaping:
            object.__setattr__(self, "shaping", tuple(_shaping_for(l) for l in self.links))
        if len(self.links) != len(self.stage_devices) or len(self.shaping) != len(self.stage_devices):
            raise ValueError("need one link and one shaping entry per stage")

    @property
    def n_stages(self) -> int:
        return len(self.stage_devices)

    def plan(self, model: ModelProfile, splits: tuple[int, ...]) -> PartitionPlan:
        return PartitionPlan(model, splits, self.stage_devices, self.links, self.input_link)


def _shaping_for(link: NetworkModel) -> Optional[ShapingConfig]:
    if link.one_way_delay == 0 and link.bandwidth is None:
        return None
    return ShapingConfig.from_network_model(link)


@dataclass
class SweepConfig:
    repetitions: int = 5
    n_batches: int = 10
    window: Optional[int] = None  # None: per split, deep enough to keep the bottleneck busy
    backend: str = "framed"
    kernel: str = "auto"
    pacing: str = "bottleneck"
    warmup: int = 1
    timeout: float = 60.0
    seed: int = 0
    splits: Optional[list[tuple[int, ...]]] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["splits"] is not None:
            d["splits"] = [list(s) for s in d["splits"]]
        return d


@dataclass
class SweepReport:
    records: list[MeasurementRecord]
    pareto: list[str]
    config: dict = field(default_factory=dict)
    environment: dict = field(default_factory=dict)

    def points(self) -> list[MetricPoint]:
        return [MetricPoint(r.split, r.latency, r.throughput) for r in self.records if not r.failed]

    def record(self, label: str) -> MeasurementRecord:
        for r in self.records:
            if r.split == label:
                return r
        raise KeyError(label)

    def to_dict(self) -> dict:
        return {
            "records": [r.to_dict() for r in self.records],
            "pareto": list(self.pareto),
            "config": self.config,
            "environment": self.environment,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SweepReport":
        return cls([MeasurementRecord.from_dict(r) for r in d["records"]], list(d["pareto"]),
                   d.get("config", {}), d.get("environment", {}))


def annotate_pareto(records: Sequence[MeasurementRecord]) -> list[str]:
    pts = [MetricPoint(r.split, r.latency, r.throughput) for r in records if not r.failed]
    return [p.label for p in pareto_front(pts)]


# -- local worker processes -----------------------------------------------

class LocalWorkers:
    """Spawn one worker subprocess per stage on loopback."""

    def __init__(self, shaping: Sequence[Optional[ShapingConfig]], sessions: int = 1):
        self.shaping = list(shaping)
        self.sessions = sessions
        self.procs: list[subprocess.Popen] = []
        self.addresses: list[str] = []
        self.exit_times: list[Optional[float]] = []

    def __enter__(self) -> "LocalWorkers":
        try:
            for cfg in self.shaping:
                cmd = [sys.executable, "-m", "splitbench", "worker", "--listen", "127.0.0.1:0",
                       "--sessions", str(self.sessions)]
                if cfg is not None:
                    cmd += ["--delay-ms", repr(cfg.one_way_delay * 1000)]
                    if cfg.bandwidth is not None:
                        cmd += ["--bandwidth-bps", repr(cfg.bandwidth)]
                    cmd += ["--bucket-bytes", str(cfg.bucket_depth)]
                proc = subprocess.Popen(cmd, stdout=subprocess.PIPE, text=True)
                self.procs.append(proc)
                line = proc.stdout.readline().split()
                if len(line) != 2 or line[0] != "listening":
                    raise SweepError(f"worker failed to start: {line}")
                self.addresses.append(line[1])
        except BaseException:
            self.kill()
            raise
        return self

    def wait(self, timeout: float = WORKER_EXIT_TIMEOUT) -> list[Optional[float]]:
        """Wait for every worker to exit; return seconds each took (None if killed)."""
        t0 = time.monotonic()
        out = []
        for p in self.procs:
            try:
                p.wait(max(0.0, timeout - (time.monotonic() - t0)))
                out.append(time.monotonic() - t0)
            except subprocess.TimeoutExpired:
                p.kill()
                p.wait()
                out.append(None)
        self.exit_times = out
        return out

    def kill(self) -> None:
        for p in self.procs:
            if p.poll() is None:
                p.kill()
                p.wait()

    def __exit__(self, *exc) -> None:
        self.kill()
        for p in self.procs:
            if p.stdout:
                p.stdout.close()


# -- sweep ------------------------------------------------------------------

def aggregate(runs: Sequence[MeasurementRecord]) -> MeasurementRecord:
    """Arithmetic mean over repetitions; per-repetition values kept in ``raw``."""
    first = runs[0]
    k = len(first.stage_exec)

    def mean(attr):
        vals = [getattr(r, attr) for r in runs]
        if any(v is None for v in vals):
            return None
        return statistics.fmean(vals)

    def mean_list(attr):
        rows = [getattr(r, attr) for r in runs]
        if any(row is None for row in rows):
            return None
        return [None if any(row[i] is None for row in rows) else statistics.fmean(row[i] for row in rows)
                for i in range(len(rows[0]))]

    return MeasurementRecord(
        model=first.model, split=first.split,
        stage_exec=[statistics.fmean(r.stage_exec[i] for r in runs) for i in range(k)],
        serialization_time=mean("serialization_time"), wire_time=mean("wire_time"),
        latency=mean("latency"), throughput=mean("throughput"), repetitions=len(runs),
        throughput_span=mean("throughput_span"), backend=first.backend, window=first.window,
        n_batches=first.n_batches, messages_per_batch=mean("messages_per_batch"),
        bytes_per_batch=mean("bytes_per_batch"), stage_cpu=mean_list("stage_cpu"),
        stage_peak_rss=[int(v) if v is not None else None for v in (mean_list("stage_peak_rss") or [])] or None,
        batch_ids=first.batch_ids,
        raw=[{"latency": r.latency, "throughput": r.throughput, "throughput_span": r.throughput_span,
              "stage_exec": r.stage_exec, "batch_ids": r.batch_ids,
              "messages_per_batch": r.messages_per_batch, "bytes_per_batch": r.bytes_per_batch}
             for r in runs],
    )


def _run_split(model: ModelProfile, topology: Topology, config: SweepConfig,
               splits: tuple[int, ...], kernel: str) -> tuple[list[MeasurementRecord], list]:
    plan = topology.plan(model, splits)
    window = config.window or saturating_window(plan)
    runs: list[MeasurementRecord] = []

    def once(addresses):
        return run_orchestrator(plan, addresses, config.n_batches, window, config.backend,
                                kernel=kernel, pacing=config.pacing, warmup=config.warmup,
                                timeout=config.timeout, seed=config.seed,
                                shaping=_shaping_for(topology.input_link) if topology.input_link else None)

    if topology.addresses is not None:
        for _ in range(config.repetitions):
            runs.append(once(list(topology.addresses)))
        return runs, []
    with LocalWorkers(topology.shaping, sessions=config.repetitions) as workers:
        for _ in range(config.repetitions):
            runs.append(once(workers.addresses))
        exits = workers.wait()
    if any(t is None for t in exits):
        raise SweepError(f"{plan.label}: worker did not exit within {WORKER_EXIT_TIMEOUT}s of SHUTDOWN")
    return runs, exits


def run_sweep(model: ModelProfile, topology: Topology, config: Optional[SweepConfig] = None,
              progress=None) -> SweepReport:
    """Measure every valid split ``config.repetitions`` times and aggregate."""
    config = config or SweepConfig()
    k = topology.n_stages
    kernel = resolve_kernel(config.kernel, k + 1) if topology.addresses is None else config.kernel
    if kernel == "auto":
        kernel = "busy"
    all_splits = config.splits if config.splits is not None else enumerate_splits(model.n_blocks, k)
    records = []
    exit_times = []
    for splits in all_splits:
        label = topology.plan(model, tuple(splits)).label
        try:
            runs, exits = _run_split(model, topology, config, tuple(splits), kernel)
            rec = aggregate(runs)
            exit_times += exits
        except (RunError, SweepError, OSError) as exc:
            log.warning("split %s failed: %s", label, exc)
            rec = MeasurementRecord(model=model.name, split=label, stage_exec=[0.0] * k,
                                    serialization_time=0.0, wire_time=0.0, latency=0.0, throughput=0.0,
                                    repetitions=config.repetitions, backend=config.backend,
                                    failed=True, error=str(exc))
        records.append(rec)
        if progress is not None:
            progress(rec)
    if records and all(r.failed for r in records):
        raise SweepError(f"every split failed; first error: {records[0].error}")
    env = {
        "platform": platform.platform(),
        "python": platform.python_version(),
        "cpu_count": os.cpu_count(),
        "kernel": kernel,
        "mode": "distributed" if topology.addresses is not None else "local",
        "worker_exit_seconds_max": max((t for t in exit_times if t is not None), default=None),
    }
    cfg = config.to_dict()
    cfg["window"] = config.window or "auto"
    cfg["shaping"] = [s.to_dict() if s else None for s in topology.shaping]
    return SweepReport(records, annotate_pareto(records), cfg, env)


# -- model vs measurement ---------------------------------------------------

@dataclass
class ComparisonRow:
    split: str
    latency_predicted: float
    latency_measured: float
    latency_error: float
    throughput_predicted: float
    throughput_measured: float
    throughput_error: float


@dataclass
class Comparison:
    rows: list[ComparisonRow]
    threshold: float
    pareto_predicted: list[str]
    pareto_measured: list[str]

    def fraction_within(self, metric: str = "both", threshold: Optional[float] = None) -> float:
        th = self.threshold if threshold is None else threshold
        if not self.rows:
            return 0.0

        def ok(r):
            lat, thr = r.latency_error <= th, r.throughput_error <= th
            return {"latency": lat, "throughput": thr, "both": lat and thr}[metric]

        return sum(ok(r) for r in self.rows) / len(self.rows)

    def summary(self) -> dict:
        return {
            "threshold": self.threshold,
            "latency_within": self.fraction_within("latency"),
            "throughput_within": self.fraction_within("throughput"),
            "both_within": self.fraction_within("both"),
            "pareto_predicted": self.pareto_predicted,
            "pareto_measured": self.pareto_measured,
        }


def relative_error(measured: float, predicted: float) -> float:
    return abs(measured - predicted) / predicted


def compare_model_vs_measured(report: SweepReport, predictions, threshold: float = 0.15) -> Comparison:
    """Per-split relative error of measurements against planner predictions.

    ``predictions`` is the output of ``sweep_predict`` or a mapping of split
    label to ``PredictedMetrics``.
    """
    if not isinstance(predictions, dict):
        predictions = {plan.label: m for plan, m in predictions}
    measured = {r.split: r for r in report.records if not r.failed}
    if set(measured) != set(predictions):
        raise ValueError(f"split mismatch: measured {sorted(set(measured) - set(predictions))} "
                         f"vs predicted {sorted(set(predictions) - set(measured))}")
    rows = []
    for label in [r.split for r in report.records if not r.failed]:
        m: PredictedMetrics = predictions[label]
        r = measured[label]
        rows.append(ComparisonRow(label, m.latency, r.latency, relative_error(r.latency, m.latency),
                                  m.throughput, r.throughput, relative_error(r.throughput, m.throughput)))
    pred_front = [p.label for p in pareto_front(MetricPoint(l, m.latency, m.throughput)
                                                for l, m in predictions.items())]
    return Comparison(rows, threshold, pred_front, list(report.pareto))


# -- reports ------------------------------------------------------------------

_LIST_FIELDS = ("stage_exec", "stage_cpu", "stage_peak_rss", "batch_ids", "latencies", "raw")


def render_report(report: SweepReport, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown report format {fmt!r}")
    pareto = set(report.pareto)
    names = list(MeasurementRecord.__dataclass_fields__) + ["network_time", "pareto"]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=names, lineterminator="\n")
    w.writeheader()
    for r in report.records:
        row = r.to_dict()
        for k in _LIST_FIELDS:
            row[k] = json.dumps(row[k])
        for k, v in row.items():
            if isinstance(v, float):
                row[k] = repr(v)
            elif v is None:
                row[k] = ""
        row["pareto"] = "true" if r.split in pareto else "false"
        w.writerow(row)
    return buf.getvalue()


def emit_report(report: SweepReport, fmt: str, path: Union[str, Path]) -> Path:
    """Write ``report`` as CSV (one row per split plus a ``pareto`` column) or JSON."""
    path = Path(path)
    path.write_text(render_report(report, fmt), encoding="utf-8")
    return path


def _csv_value(name: str, text: str):
    if name in _LIST_FIELDS:
        return json.loads(text)
    if text == "":
        return None
    ftype = MeasurementRecord.__dataclass_fields__[name].type
    if "bool" in str(ftype):
        return text == "True"
    if "int" in str(ftype) and "float" not in str(ftype):
        return int(text)
    if "float" in str(ftype):
        return float(text)
    return text


def load_report(path: Union[str, Path]) -> SweepReport:
    path = Path(path)
    if path.suffix == ".json":
        return SweepReport.from_dict(json.loads(path.read_text(encoding="utf-8")))
    records, pareto = [], []
    with path.open(newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            flag = row.pop("pareto")
            row.pop("network_time", None)
            rec = MeasurementRecord(**{k: _csv_value(k, v) for k, v in row.items()})
            records.append(rec)
            if flag == "true":
                pareto.append(rec.split)
    # report order of the Pareto set is ascending latency
    order = {p.label: i for i, p in enumerate(pareto_front(
        MetricPoint(r.split, r.latency, r.throughput) for r in records if not r.failed))}
    pareto.sort(key=lambda s: order.get(s, len(order)))
    return SweepReport(records, pareto)
