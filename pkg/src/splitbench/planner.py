"""Analytic pipeline model over partition plans, and Pareto front extraction."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .profiles import DeviceProfile, ModelProfile, NetworkModel, ProfileError


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class PartitionPlan:
    """Split a chain model into ``len(stage_devices)`` contiguous stages.

    ``splits`` holds the block index after which each stage ends (1-based),
    so ``splits == (3,)`` is the two-stage plan "P3". ``links[i]`` carries
    stage i's output to stage i+1; the last link returns the result.
    """

    model: ModelProfile
    splits: tuple[int, ...]
    stage_devices: tuple[DeviceProfile, ...]
    links: tuple[NetworkModel, ...]
    input_link: Optional[NetworkModel] = None

    def __post_init__(self):
        object.__setattr__(self, "splits", tuple(self.splits))
        object.__setattr__(self, "stage_devices", tuple(self.stage_devices))
        object.__setattr__(self, "links", tuple(self.links))
        n = self.model.n_blocks
        k = len(self.splits) + 1
        if any(b <= a for a, b in zip(self.splits, self.splits[1:])):
            raise PlanError(f"split indices must be strictly increasing: {self.splits}")
        if self.splits and (self.splits[0] < 1 or self.splits[-1] > n - 1):
            raise PlanError(f"split indices must lie in [1, {n - 1}]: {self.splits}")
        if len(self.stage_devices) != k:
            raise PlanError(f"{k} stages need {k} devices, got {len(self.stage_devices)}")
        if len(self.links) != k:
            raise PlanError(f"{k} stages need {k} links, got {len(self.links)}")

    @property
    def n_stages(self) -> int:
        return len(self.stage_devices)

    @property
    def split_index(self) -> int:
        if len(self.splits) != 1:
            raise PlanError("split_index is only defined for two-stage plans")
        return self.splits[0]

    @property
    def label(self) -> str:
        if not self.splits:
            return "P0"
        return "P" + "-".join(str(s) for s in self.splits)

    def stage_ranges(self) -> list[tuple[int, int]]:
        """Inclusive 1-based block ranges per stage."""
        bounds = (0,) + self.splits + (self.model.n_blocks,)
        return [(bounds[i] + 1, bounds[i + 1]) for i in range(self.n_stages)]

    def stage_blocks(self, stage: int):
        first, last = self.stage_ranges()[stage]
        return self.model.blocks[first - 1:last]

    def stage_seconds(self, stage: int) -> float:
        dev = self.stage_devices[stage]
        try:
            return dev.compute_scale * sum(b.time_on(dev.device_class) for b in self.stage_blocks(stage))
        except ProfileError as exc:
            raise PlanError(str(exc)) from None

    def link_payloads(self) -> list[int]:
        """Bytes carried by each link: the activation at each split, then the result."""
        return [self.model.activation_bytes(s) for s in self.splits] + [self.model.blocks[-1].output_bytes]


@dataclass(frozen=True)
class PredictedMetrics:
    stage_times: tuple[float, ...]
    transfer_times: tuple[float, ...]
    latency: float
    throughput: float
    bottleneck: float
    input_time: float = 0.0


@dataclass(frozen=True)
class MetricPoint:
    label: str
    latency: float
    throughput: float


def predict(plan: PartitionPlan, window: Optional[int] = None) -> PredictedMetrics:
    """Latency of one batch and steady-state throughput of the pipeline.

    Latency is one traversal of every stage and link. Throughput is limited by
    the busiest component: a stage's compute time, or a link's serialization
    plus per-message overhead. Propagation delay adds latency but does not
    occupy the link, since successive messages overlap in flight. With a
    finite ``window`` at most that many batches are in flight, which caps
    throughput at ``window / latency`` batches per second.
    """
    stages = tuple(plan.stage_seconds(i) for i in range(plan.n_stages))
    payloads = plan.link_payloads()
    transfers = tuple(link.transfer_time(nb) for link, nb in zip(plan.links, payloads))
    busy = list(stages) + [link.per_message_overhead + link.serialization_time(nb)
                           for link, nb in zip(plan.links, payloads)]
    input_time = 0.0
    if plan.input_link is not None:
        input_time = plan.input_link.transfer_time(plan.model.input_bytes)
        busy.append(plan.input_link.per_message_overhead
                    + plan.input_link.serialization_time(plan.model.input_bytes))
    latency = math.fsum(stages) + math.fsum(transfers) + input_time
    bottleneck = max(busy)
    period = bottleneck
    if window is not None:
        if window < 1:
            raise PlanError("window must be >= 1")
        period = max(period, latency / window)
    throughput = plan.model.batch_size / period if period > 0 else math.inf
    return PredictedMetrics(stages, transfers, latency, throughput, bottleneck, input_time)


def saturating_window(plan: PartitionPlan) -> int:
    """Smallest in-flight depth (at least stages + 1) that keeps the bottleneck busy.

    Batches in flight times the bottleneck period must cover one traversal,
    otherwise the window rather than the busiest component limits throughput.
    """
    m = predict(plan)
    if m.bottleneck <= 0:
        return plan.n_stages + 1
    return max(plan.n_stages + 1, math.ceil(m.latency / m.bottleneck) + 1)


def enumerate_splits(n_blocks: int, n_stages: int) -> list[tuple[int, ...]]:
    return list(itertools.combinations(range(1, n_blocks), n_stages - 1))


def sweep_predict(model: ModelProfile, stage_devices: Sequence[DeviceProfile],
                  links: Sequence[NetworkModel], window: Optional[int] = None,
                  input_link: Optional[NetworkModel] = None) -> list[tuple[PartitionPlan, PredictedMetrics]]:
    """Evaluate every valid split (ascending) for the given stage devices and links."""
    k = len(stage_devices)
    if k >= 2 and model.n_blocks < k:
        raise PlanError(f"{model.n_blocks} blocks cannot fill {k} stages")
    out = []
    for splits in enumerate_splits(model.n_blocks, k):
        plan = PartitionPlan(model, splits, tuple(stage_devices), tuple(links), input_link)
        out.append((plan, predict(plan, window)))
    return out


def best_split(points: Sequence[MetricPoint], objective: str = "throughput") -> MetricPoint:
    """Best point by one objective; the earliest entry wins ties."""
    if objective == "throughput":
        return max(points, key=lambda p: p.throughput)  # max keeps the first maximal
    if objective == "latency":
        return min(points, key=lambda p: p.latency)
    raise ValueError(f"unknown objective {objective!r}")


def dominates(a: MetricPoint, b: MetricPoint) -> bool:
    return (a.latency <= b.latency and a.throughput >= b.throughput
            and (a.latency < b.latency or a.throughput > b.throughput))


def pareto_front(points: Iterable[MetricPoint]) -> list[MetricPoint]:
    """Non-dominated points (lower latency, higher throughput), by ascending latency.

    Exact duplicates of a non-dominated point are all kept.
    """
    pts = sorted(points, key=lambda p: (p.latency, -p.throughput))
    front: list[MetricPoint] = []
    best = -math.inf  # highest throughput among strictly lower latencies
    i = 0
    while i < len(pts):
        j = i
        while j < len(pts) and pts[j].latency == pts[i].latency:
            j += 1
        top = pts[i].throughput
        if top > best:
            front.extend(p for p in pts[i:j] if p.throughput == top)
            best = top
        i = j
    return front


def points_from_predictions(results) -> list[MetricPoint]:
    return [MetricPoint(plan.label, m.latency, m.throughput) for plan, m in results]
