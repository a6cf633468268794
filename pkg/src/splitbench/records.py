"""Measurement records shared by the runtime and the benchmark harness."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Optional


@dataclass
class MeasurementRecord:
    """One split, one or more repetitions. Times in seconds, throughput in images/s."""

    model: str
    split: str
    stage_exec: list[float]
    serialization_time: float
    wire_time: float
    latency: float
    throughput: float
    repetitions: int = 1
    throughput_span: Optional[float] = None
    backend: str = "framed"
    window: int = 1
    n_batches: int = 0
    messages_per_batch: Optional[float] = None
    bytes_per_batch: Optional[float] = None
    stage_cpu: Optional[list[Optional[float]]] = None
    stage_peak_rss: Optional[list[Optional[int]]] = None
    batch_ids: list[int] = field(default_factory=list)
    latencies: list[float] = field(default_factory=list)
    raw: list[dict] = field(default_factory=list)  # per-repetition summaries
    failed: bool = False
    error: Optional[str] = None

    @property
    def network_time(self) -> float:
        return self.serialization_time + self.wire_time

    def to_dict(self) -> dict:
        d = asdict(self)
        d["network_time"] = self.network_time
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MeasurementRecord":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def validate(self) -> "MeasurementRecord":
        if not self.failed:
            if not self.latency > 0:
                raise ValueError(f"{self.split}: latency must be > 0")
            if not self.throughput > 0:
                raise ValueError(f"{self.split}: throughput must be > 0")
        if self.repetitions < 1:
            raise ValueError(f"{self.split}: repetitions must be >= 1")
        return self
