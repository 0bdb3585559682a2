"""Sensor data model: channels, traces, windows, CSV I/O and degradations."""

from __future__ import annotations

import csv
import io
import math
import os
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .labels import VOCABULARY

CANONICAL_RATE_HZ = 90.0
DEFAULT_WINDOW = 180
DEFAULT_HOP = 90


@dataclass(frozen=True)
class ChannelSpec:
    name: str
    kind: str  # "binary" | "continuous"
    unit: str
    index: int


CHANNELS: tuple[ChannelSpec, ...] = tuple(
    ChannelSpec(name, kind, unit, i)
    for i, (name, kind, unit) in enumerate(
        [
            ("pir", "binary", "on/off"),
            ("accel_x", "continuous", "m/s^2"),
            ("accel_y", "continuous", "m/s^2"),
            ("accel_z", "continuous", "m/s^2"),
            ("audio", "continuous", "envelope"),
            ("rgb_r", "continuous", "counts"),
            ("rgb_g", "continuous", "counts"),
            ("rgb_b", "continuous", "counts"),
            ("pressure", "continuous", "hPa"),
            ("humidity", "continuous", "%RH"),
            ("mag_x", "continuous", "uT"),
            ("mag_y", "continuous", "uT"),
            ("mag_z", "continuous", "uT"),
            ("gas", "continuous", "kOhm"),
            ("temperature", "continuous", "degC"),
        ]
    )
)
CHANNEL_NAMES: tuple[str, ...] = tuple(c.name for c in CHANNELS)
CHANNEL_INDEX: dict[str, int] = {c.name: c.index for c in CHANNELS}
N_CHANNELS = len(CHANNELS)
BINARY_MASK = np.array([c.kind == "binary" for c in CHANNELS])

CSV_HEADER = ("t",) + CHANNEL_NAMES


class TraceFormatError(ValueError):
    """Raised when a trace file or array violates the trace invariants."""

    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class TraceTooShortError(ValueError):
    """The trace holds fewer samples than one window."""


def _check_values(values: np.ndarray) -> None:
    if values.ndim != 2 or values.shape[0] != N_CHANNELS:
        raise TraceFormatError(f"expected {N_CHANNELS} channels, got array of shape {values.shape}")
    if values.shape[1] < 1:
        raise TraceFormatError("trace must hold at least one sample")
    if not np.all(np.isfinite(values)):
        raise TraceFormatError("non-finite sample value")
    binary = values[BINARY_MASK]
    if not np.all((binary == 0.0) | (binary == 1.0)):
        raise TraceFormatError("binary channel out of domain")


@dataclass(frozen=True, eq=False)
class SensorTrace:
    """A 15 x N multi-channel time series, optionally labeled per sample."""

    values: np.ndarray
    sample_rate_hz: float = CANONICAL_RATE_HZ
    labels: tuple[str, ...] | None = None
    start_time: float = 0.0

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        _check_values(values)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if not self.sample_rate_hz > 0:
            raise TraceFormatError("sample rate must be positive")
        if self.labels is not None:
            labels = tuple(self.labels)
            if len(labels) != values.shape[1]:
                raise TraceFormatError("label sequence length differs from channel length")
            unknown = set(labels) - VOCABULARY
            if unknown:
                raise TraceFormatError(f"unknown label {sorted(unknown)[0]!r}")
            object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SensorTrace):
            return NotImplemented
        return (
            self.sample_rate_hz == other.sample_rate_hz
            and self.start_time == other.start_time
            and self.labels == other.labels
            and np.array_equal(self.values, other.values)
        )

    def channel(self, name: str) -> np.ndarray:
        return self.values[CHANNEL_INDEX[name]]

    def timestamps(self) -> np.ndarray:
        return self.start_time + np.arange(len(self)) / self.sample_rate_hz


@dataclass(frozen=True, eq=False)
class Window:
    values: np.ndarray  # (15, W)
    label: str | None = None
    origin_index: int = 0

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != N_CHANNELS or values.shape[1] == 0:
            raise TraceFormatError(f"window must be {N_CHANNELS} x W with W > 0, got {values.shape}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def length(self) -> int:
        return self.values.shape[1]


def majority_label(labels: Iterable[str]) -> str:
    # ties resolve to the label seen first
    return Counter(labels).most_common(1)[0][0]


# -- CSV ---------------------------------------------------------------------


def _fmt(v: float) -> str:
    return format(float(v), ".9g")


def format_trace(trace: SensorTrace) -> str:
    buf = io.StringIO()
    header = list(CSV_HEADER) + (["label"] if trace.labels is not None else [])
    buf.write(",".join(header) + "\n")
    ts = trace.timestamps()
    for i in range(len(trace)):
        row = [f"{ts[i]:.6f}"] + [_fmt(v) for v in trace.values[:, i]]
        if trace.labels is not None:
            row.append(trace.labels[i])
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


def save_trace(trace: SensorTrace, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_trace(trace))


def parse_trace(text: str, sample_rate_hz: float | None = None) -> SensorTrace:
    """Parse trace CSV text. The sample rate is inferred from ``t`` unless given."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise TraceFormatError("empty file", line=1)
    header = tuple(h.strip() for h in rows[0])
    if header == CSV_HEADER + ("label",):
        has_labels = True
    elif header == CSV_HEADER:
        has_labels = False
    else:
        raise TraceFormatError("malformed header", line=1)
    width = len(header)
    times: list[float] = []
    data: list[list[float]] = []
    labels: list[str] = []
    pir = CHANNEL_INDEX["pir"]
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != width:
            raise TraceFormatError(f"expected {width} fields, got {len(row)}", line=lineno)
        try:
            nums = [float(x) for x in row[: 1 + N_CHANNELS]]
        except ValueError as exc:
            raise TraceFormatError(f"bad number ({exc})", line=lineno) from None
        if not all(math.isfinite(x) for x in nums):
            raise TraceFormatError("non-finite value", line=lineno)
        if nums[1 + pir] not in (0.0, 1.0):
            raise TraceFormatError("binary channel out of domain", line=lineno)
        if has_labels:
            label = row[-1].strip()
            if label not in VOCABULARY:
                raise TraceFormatError(f"unknown label {label!r}", line=lineno)
            labels.append(label)
        times.append(nums[0])
        data.append(nums[1:])
    if not data:
        raise TraceFormatError("no samples", line=2)
    if sample_rate_hz is None:
        if len(times) >= 2 and times[-1] > times[0]:
            span = times[-1] - times[0]
            rate = (len(times) - 1) / span
            # ``t`` carries 6 decimals; snap when the integer rate is within that resolution
            if abs(rate - round(rate)) <= rate * 2e-6 / span:
                sample_rate_hz = float(round(rate))
            else:
                sample_rate_hz = float(f"{rate:.6g}")
        else:
            sample_rate_hz = CANONICAL_RATE_HZ
    return SensorTrace(
        values=np.array(data, dtype=np.float64).T,
        sample_rate_hz=sample_rate_hz,
        labels=tuple(labels) if has_labels else None,
        start_time=times[0],
    )


def load_trace(path: str | os.PathLike, sample_rate_hz: float | None = None) -> SensorTrace:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_trace(fh.read(), sample_rate_hz)


# -- windowing ---------------------------------------------------------------


def window_count(n: int, window_len: int, hop: int) -> int:
    if window_len > n:
        return 0
    return (n - window_len) // hop + 1


def segment_windows(trace: SensorTrace, window_len: int = DEFAULT_WINDOW, hop: int = DEFAULT_HOP) -> list[Window]:
    if not 0 < hop <= window_len:
        raise ValueError(f"need 0 < hop <= window_len, got hop={hop}, window_len={window_len}")
    n = len(trace)
    if window_len > n:
        raise TraceTooShortError(f"trace has {n} samples, window needs {window_len}")
    windows = []
    for k in range(window_count(n, window_len, hop)):
        start = k * hop
        label = None
        if trace.labels is not None:
            label = majority_label(trace.labels[start : start + window_len])
        windows.append(Window(trace.values[:, start : start + window_len], label, start))
    return windows


# -- degradations ------------------------------------------------------------


def noise_array(
    values: np.ndarray, sigma: float, rng: np.random.Generator, channel_std: np.ndarray | None = None
) -> np.ndarray:
    """Noisy copy of ``values`` shaped (..., 15, W).

    Continuous rows get Gaussian noise with std ``sigma * channel_std``; binary
    rows flip each sample with probability min(0.5, sigma / 10).
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    values = np.asarray(values, dtype=np.float64)
    if sigma == 0:
        return values.copy()
    if channel_std is None:
        channel_std = values.std(axis=-1)
    scale = np.asarray(channel_std, dtype=np.float64).reshape(N_CHANNELS, 1)
    out = values + rng.standard_normal(values.shape) * (sigma * scale)
    binary = values[..., BINARY_MASK, :]
    flip = rng.random(binary.shape) < min(0.5, sigma / 10.0)
    out[..., BINARY_MASK, :] = np.where(flip, 1.0 - binary, binary)
    return out


def add_noise(
    trace: SensorTrace, sigma: float, seed: int, channel_std: Sequence[float] | np.ndarray | None = None
) -> SensorTrace:
    """Noisy copy of ``trace``; ``channel_std`` should come from the training set.

    Falls back to the trace's own per-channel std when no reference is given.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return trace
    noisy = noise_array(trace.values, sigma, np.random.default_rng(seed), channel_std)
    return SensorTrace(noisy, trace.sample_rate_hz, trace.labels, trace.start_time)


def decimation_factor(rate_hz: float, target_hz: float) -> int:
    if not 0 < target_hz <= rate_hz:
        raise ValueError(f"target rate must be in (0, {rate_hz}], got {target_hz}")
    return max(1, round(rate_hz / target_hz))


def downsample(trace: SensorTrace, target_hz: float) -> SensorTrace:
    k = decimation_factor(trace.sample_rate_hz, target_hz)
    if k == 1:
        return trace
    labels = trace.labels[::k] if trace.labels is not None else None
    return SensorTrace(trace.values[:, ::k], trace.sample_rate_hz / k, labels, trace.start_time)


def zero_order_hold(values: np.ndarray, k: int, length: int) -> np.ndarray:
    """Repeat each sample ``k`` times along the last axis and cut to ``length``."""
    return np.repeat(values, k, axis=-1)[..., :length]


def concatenate(traces: Sequence[SensorTrace]) -> SensorTrace:
    if not traces:
        raise ValueError("nothing to concatenate")
    rate = traces[0].sample_rate_hz
    if any(t.sample_rate_hz != rate for t in traces):
        raise ValueError("traces differ in sample rate")
    labelled = [t.labels is not None for t in traces]
    if any(labelled) and not all(labelled):
        raise ValueError("cannot mix labeled and unlabeled traces")
    labels = tuple(lbl for t in traces for lbl in t.labels) if all(labelled) else None
    return SensorTrace(np.concatenate([t.values for t in traces], axis=1), rate, labels, traces[0].start_time)
