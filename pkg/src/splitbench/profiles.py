"""Model, device and network profiles.

Profiles are plain line-oriented text so fixtures stay diff-able::

    # comment
    model mobilenetv2
    batch 8
    input_bytes 98304
    meta params=2236682 size_mb=8.8 blocks=21
    block features_0 out=131072 cpu=0.12478 gpu=0.00006
    ...

A device record is ``device <name> class=<device_class> scale=<x>`` and a
network record is ``net delay=<duration> bw=<rate> overhead=<duration>``,
where durations and rates accept human units (``100ms``, ``5Mbit``).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

SHAPES = ("uniform", "front_heavy", "back_heavy")


class ProfileError(ValueError):
    """Malformed or invalid profile data."""


@dataclass(frozen=True)
class BlockProfile:
    name: str
    exec_time: Mapping[str, float]
    output_bytes: int

    def time_on(self, device_class: str) -> float:
        try:
            return self.exec_time[device_class]
        except KeyError:
            raise ProfileError(
                f"block {self.name!r} has no exec_time for device class {device_class!r}"
            ) from None


@dataclass(frozen=True)
class ModelMeta:
    params: Optional[int] = None
    size_mb: Optional[float] = None
    blocks: Optional[int] = None


@dataclass(frozen=True)
class ModelProfile:
    name: str
    batch_size: int
    input_bytes: int
    blocks: tuple[BlockProfile, ...]
    meta: Optional[ModelMeta] = None

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def device_classes(self) -> frozenset[str]:
        return frozenset(self.blocks[0].exec_time) if self.blocks else frozenset()

    def activation_bytes(self, split: int) -> int:
        """Payload crossing the boundary after block ``split`` (1-based); 0 is the input."""
        if split == 0:
            return self.input_bytes
        return self.blocks[split - 1].output_bytes

    def validate(self) -> "ModelProfile":
        if self.batch_size < 1:
            raise ProfileError(f"model {self.name!r}: batch must be positive, got {self.batch_size}")
        if self.input_bytes < 0:
            raise ProfileError(f"model {self.name!r}: input_bytes must be >= 0")
        if not self.blocks:
            raise ProfileError(f"model {self.name!r}: blocks must be non-empty")
        classes = set(self.blocks[0].exec_time)
        if not classes:
            raise ProfileError(f"block {self.blocks[0].name!r}: no exec_time entries")
        for b in self.blocks:
            if set(b.exec_time) != classes:
                raise ProfileError(
                    f"block {b.name!r}: device classes {sorted(b.exec_time)} "
                    f"do not match {sorted(classes)}"
                )
            for cls, t in b.exec_time.items():
                if not (t >= 0 and math.isfinite(t)):
                    raise ProfileError(f"block {b.name!r}: exec_time {cls}={t} must be >= 0")
            if b.output_bytes < 0:
                raise ProfileError(f"block {b.name!r}: out={b.output_bytes} must be >= 0")
        if self.meta is not None and self.meta.blocks is not None and self.meta.blocks != len(self.blocks):
            raise ProfileError(
                f"model {self.name!r}: meta blocks={self.meta.blocks} but {len(self.blocks)} block lines"
            )
        return self


@dataclass(frozen=True)
class DeviceProfile:
    name: str
    device_class: str
    compute_scale: float = 1.0

    def __post_init__(self):
        if not self.compute_scale > 0:
            raise ProfileError(f"device {self.name!r}: scale must be > 0, got {self.compute_scale}")


@dataclass(frozen=True)
class NetworkModel:
    one_way_delay: float = 0.0
    bandwidth: Optional[float] = None  # bits/s, None = unlimited
    per_message_overhead: float = 0.0

    def __post_init__(self):
        if self.one_way_delay < 0:
            raise ProfileError(f"net: delay must be >= 0, got {self.one_way_delay}")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ProfileError(f"net: bandwidth must be > 0, got {self.bandwidth}")
        if self.per_message_overhead < 0:
            raise ProfileError(f"net: overhead must be >= 0, got {self.per_message_overhead}")

    def serialization_time(self, payload_bytes: int) -> float:
        if self.bandwidth is None:
            return 0.0
        return payload_bytes * 8 / self.bandwidth

    def transfer_time(self, payload_bytes: int) -> float:
        return self.one_way_delay + self.per_message_overhead + self.serialization_time(payload_bytes)


BUILTIN_DEVICES = {
    "pi": DeviceProfile("pi", "cpu", 1.0),
    "gpu": DeviceProfile("gpu", "gpu", 1.0),
}


# -- human units ---------------------------------------------------------

_NUM = r"([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)"
_DURATION_UNITS = {"": 1.0, "s": 1.0, "ms": 1e-3, "us": 1e-6}
_RATE_UNITS = {
    "": 1.0, "bps": 1.0, "bit": 1.0,
    "k": 1e3, "kbit": 1e3, "kbps": 1e3,
    "m": 1e6, "mbit": 1e6, "mbps": 1e6,
    "g": 1e9, "gbit": 1e9, "gbps": 1e9,
}


def parse_duration(text: str) -> float:
    """``"100ms"`` -> 0.1. A bare number is seconds."""
    m = re.fullmatch(_NUM + r"\s*([a-zA-Z]*)", text.strip())
    if not m or m.group(2).lower() not in _DURATION_UNITS:
        raise ProfileError(f"bad duration {text!r}")
    return float(m.group(1)) * _DURATION_UNITS[m.group(2).lower()]


def parse_bandwidth(text: str) -> Optional[float]:
    """``"5Mbit"`` -> 5e6 bits/s. ``"inf"``/``"none"`` mean unlimited."""
    if text.strip().lower() in ("inf", "none", "unlimited", ""):
        return None
    m = re.fullmatch(_NUM + r"\s*([a-zA-Z/]*)", text.strip())
    unit = m.group(2).lower().replace("/s", "") if m else None
    if not m or unit not in _RATE_UNITS:
        raise ProfileError(f"bad bandwidth {text!r}")
    return float(m.group(1)) * _RATE_UNITS[unit]


def _kv(tokens: Iterable[str], where: str) -> dict[str, str]:
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ProfileError(f"{where}: expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        out[k] = v
    return out


def parse_net_spec(text: str) -> NetworkModel:
    """Parse ``delay=100ms,bw=5Mbit`` (comma or space separated)."""
    kv = _kv([t for t in re.split(r"[,\s]+", text.strip()) if t], "net")
    unknown = set(kv) - {"delay", "bw", "bandwidth", "overhead"}
    if unknown:
        raise ProfileError(f"net: unknown keys {sorted(unknown)}")
    bw = kv.get("bw", kv.get("bandwidth"))
    return NetworkModel(
        one_way_delay=parse_duration(kv.get("delay", "0")),
        bandwidth=parse_bandwidth(bw) if bw is not None else None,
        per_message_overhead=parse_duration(kv.get("overhead", "0")),
    )


def parse_device_spec(text: str) -> DeviceProfile:
    """Accept a built-in name (``pi``), ``name:class[:scale]`` or a ``device`` record."""
    text = text.strip()
    if text.startswith("device "):
        parts = text.split()
        kv = _kv(parts[2:], f"device {parts[1]}")
        return DeviceProfile(parts[1], kv.get("class", parts[1]), float(kv.get("scale", 1.0)))
    if text in BUILTIN_DEVICES:
        return BUILTIN_DEVICES[text]
    parts = text.split(":")
    if len(parts) in (2, 3):
        scale = float(parts[2]) if len(parts) == 3 else 1.0
        return DeviceProfile(parts[0], parts[1], scale)
    raise ProfileError(f"unknown device {text!r}")


# -- model profile text format --------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def dumps_model_profile(profile: ModelProfile) -> str:
    lines = [f"model {profile.name}", f"batch {profile.batch_size}", f"input_bytes {profile.input_bytes}"]
    m = profile.meta
    if m is not None:
        parts = []
        if m.params is not None:
            parts.append(f"params={m.params}")
        if m.size_mb is not None:
            parts.append(f"size_mb={_fmt(m.size_mb)}")
        if m.blocks is not None:
            parts.append(f"blocks={m.blocks}")
        lines.append("meta " + " ".join(parts))
    for b in profile.blocks:
        times = " ".join(f"{cls}={_fmt(t)}" for cls, t in sorted(b.exec_time.items()))
        lines.append(f"block {b.name} out={b.output_bytes} {times}")
    return "\n".join(lines) + "\n"


def loads_model_profile(text: str, source: str = "<string>") -> ModelProfile:
    name = batch = input_bytes = None
    meta = None
    blocks = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        key, *rest = line.split()
        try:
            if key == "model":
                (name,) = rest
            elif key == "batch":
                batch = int(rest[0])
            elif key == "input_bytes":
                input_bytes = int(rest[0])
            elif key == "meta":
                kv = _kv(rest, where)
                meta = ModelMeta(
                    params=int(kv["params"]) if "params" in kv else None,
                    size_mb=float(kv["size_mb"]) if "size_mb" in kv else None,
                    blocks=int(kv["blocks"]) if "blocks" in kv else None,
                )
            elif key == "block":
                bname, *fields = rest
                kv = _kv(fields, f"{where} block {bname!r}")
                if "out" not in kv:
                    raise ProfileError(f"{where}: block {bname!r} missing out=<bytes>")
                out = int(kv.pop("out"))
                blocks.append(BlockProfile(bname, {c: float(v) for c, v in kv.items()}, out))
            else:
                raise ProfileError(f"{where}: unknown record {key!r}")
        except (ValueError, IndexError) as exc:
            if isinstance(exc, ProfileError):
                raise
            raise ProfileError(f"{where}: cannot parse {raw.strip()!r}: {exc}") from None
    for field_name, value in (("model", name), ("batch", batch), ("input_bytes", input_bytes)):
        if value is None:
            raise ProfileError(f"{source}: missing {field_name!r} header")
    return ModelProfile(name, batch, input_bytes, tuple(blocks), meta).validate()


def shipped_profiles() -> list[str]:
    root = resources.files("splitbench") / "data" / "profiles"
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".profile"))


def resolve_profile_path(path: Union[str, Path]) -> Path:
    """Return ``path`` if it exists, else the shipped profile of that name."""
    p = Path(path)
    if p.exists():
        return p
    name = p.name if p.name.endswith(".profile") else p.name + ".profile"
    shipped = resources.files("splitbench") / "data" / "profiles" / name
    if shipped.is_file():
        return Path(str(shipped))
    raise FileNotFoundError(f"no such profile: {path}")


def load_model_profile(path: Union[str, Path]) -> ModelProfile:
    p = resolve_profile_path(path)
    return loads_model_profile(p.read_text(encoding="utf-8"), source=str(p))


def save_model_profile(profile: ModelProfile, path: Union[str, Path]) -> None:
    Path(path).write_text(dumps_model_profile(profile), encoding="utf-8")


# -- synthetic profiles ---------------------------------------------------

def _shape_weights(n: int, shape: str) -> list[float]:
    if shape == "uniform":
        return [1.0] * n
    # linear ramp n..1 keeps the lightest block non-zero
    ramp = [float(n - i) for i in range(n)]
    if shape == "front_heavy":
        return ramp
    if shape == "back_heavy":
        return ramp[::-1]
    raise ProfileError(f"unknown shape {shape!r}; expected one of {SHAPES}")


def synth_profile(
    n_blocks: int,
    shape: str,
    total_time: float,
    activation_decay: float,
    *,
    input_bytes: int = 1024,
    batch_size: int = 8,
    device_classes: Sequence[str] = ("cpu",),
    name: Optional[str] = None,
) -> ModelProfile:
    """Build a synthetic chain model.

    Every device class gets the same block times, which sum to ``total_time``.
    Block ``i`` (1-based) emits ``round(input_bytes * activation_decay**i)`` bytes.
    """
    if n_blocks < 1:
        raise ProfileError("n_blocks must be >= 1")
    if not total_time > 0:
        raise ProfileError("total_time must be > 0")
    if not activation_decay > 0:
        raise ProfileError("activation_decay must be > 0")
    w = _shape_weights(n_blocks, shape)
    wsum = math.fsum(w)
    times = [total_time * x / wsum for x in w]
    blocks = tuple(
        BlockProfile(
            f"b{i + 1}",
            {cls: times[i] for cls in device_classes},
            int(round(input_bytes * activation_decay ** (i + 1))),
        )
        for i in range(n_blocks)
    )
    return ModelProfile(
        name or f"synth_{shape}_{n_blocks}", batch_size, input_bytes, blocks,
    ).validate()


def microprofile_blocks(profile: ModelProfile, device: DeviceProfile, repetitions: int = 5,
                        kernel: str = "busy") -> list[float]:
    """Run each block's synthetic kernel locally and return mean seconds per block."""
    from .runtime.kernel import execute_stage

    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    means = []
    for block in profile.blocks:
        total = 0.0
        for _ in range(repetitions):
            total += execute_stage([block], device, kernel=kernel)
        means.append(total / repetitions)
    return means
