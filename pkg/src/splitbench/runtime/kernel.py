"""Synthetic stage compute.

The busy kernel burns CPU computing a running CRC over a scratch buffer until
the target duration has elapsed, so CPU contention shows up in timings the way
it would for real inference. The sleep kernel waits instead; it exists for
hosts with fewer cores than co-located workers, where several busy workers
would time-slice one core and stop behaving like separate devices.
"""

from __future__ import annotations

import os
import time
import zlib
from typing import Sequence

from ..profiles import BlockProfile, DeviceProfile

KERNELS = ("busy", "sleep", "auto")

_SCRATCH = os.urandom(4096)
_chunk_seconds: float | None = None


def calibrate(samples: int = 200) -> float:
    """Measure the cost of one kernel chunk; cached for the process."""
    global _chunk_seconds
    if _chunk_seconds is None:
        acc = 0
        t0 = time.perf_counter()
        for _ in range(samples):
            acc = zlib.crc32(_SCRATCH, acc)
        _chunk_seconds = max((time.perf_counter() - t0) / samples, 1e-9)
    return _chunk_seconds


def resolve_kernel(kernel: str, concurrent_workers: int = 1) -> str:
    if kernel not in KERNELS:
        raise ValueError(f"unknown kernel {kernel!r}")
    if kernel != "auto":
        return kernel
    # orchestrator counts as one more runnable process
    return "busy" if (os.cpu_count() or 1) > concurrent_workers else "sleep"


def burn(seconds: float, kernel: str = "busy") -> float:
    """Occupy the caller for ``seconds``; return the measured elapsed time."""
    t0 = time.perf_counter()
    if seconds <= 0:
        return time.perf_counter() - t0
    deadline = t0 + seconds
    if kernel == "sleep":
        while True:
            left = deadline - time.perf_counter()
            if left <= 0:
                break
            time.sleep(left)
    else:
        # check the clock about every 100 us
        step = max(1, int(1e-4 / calibrate()))
        acc = 0
        while time.perf_counter() < deadline:
            for _ in range(step):
                acc = zlib.crc32(_SCRATCH, acc)
    return time.perf_counter() - t0


def stage_seconds(blocks: Sequence[BlockProfile], device: DeviceProfile) -> float:
    return device.compute_scale * sum(b.time_on(device.device_class) for b in blocks)


def execute_stage(blocks: Sequence[BlockProfile], device: DeviceProfile, kernel: str = "busy") -> float:
    """Run the synthetic kernel for a block slice on ``device``; return elapsed seconds."""
    return burn(stage_seconds(blocks, device), resolve_kernel(kernel))
