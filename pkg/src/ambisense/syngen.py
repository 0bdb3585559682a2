"""Seeded synthetic sensor traces standing in for the hardware board."""

from __future__ import annotations

import dataclasses
import zlib
from dataclasses import dataclass
from importlib import resources
from typing import Mapping, Sequence

import numpy as np

from .labels import IDLE, LABEL_INDEX, SENSED_LABELS, VOCABULARY
from .trace import (
    BINARY_MASK,
    CANONICAL_RATE_HZ,
    CHANNEL_INDEX,
    CHANNEL_NAMES,
    DEFAULT_WINDOW,
    N_CHANNELS,
    SensorTrace,
    concatenate,
)

NYQUIST_HZ = CANONICAL_RATE_HZ / 2
BURST_DECAY_SAMPLES = 3.0
BURST_KERNEL_LEN = 15
BASELINE = "*"


class SignatureError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelSignature:
    dc: float = 0.0
    amp: float = 0.0
    freq: float = 0.0
    burst_rate: float = 0.0
    burst_amp: float = 0.0
    noise: float = 0.0
    on: float = 0.0  # binary channels only: P(ON) per second

    def __post_init__(self) -> None:
        if not 0.0 <= self.freq < NYQUIST_HZ:
            raise SignatureError(f"sinusoid frequency {self.freq} Hz outside [0, {NYQUIST_HZ})")
        if self.noise < 0 or self.burst_rate < 0:
            raise SignatureError("noise and burst_rate must be >= 0")
        if not 0.0 <= self.on <= 1.0:
            raise SignatureError(f"on-probability {self.on} outside [0, 1]")


_CONTINUOUS_KEYS = {"dc", "amp", "freq", "burst_rate", "burst_amp", "noise"}
_BINARY_KEYS = {"on"}


@dataclass(frozen=True)
class SignatureTable:
    """Per-activity channel signatures; missing channels fall back to the baseline."""

    signatures: Mapping[str, tuple[ChannelSignature, ...]]

    def __getitem__(self, label: str) -> tuple[ChannelSignature, ...]:
        try:
            return self.signatures[label]
        except KeyError:
            raise SignatureError(f"no signature for activity {label!r}") from None

    def __contains__(self, label: str) -> bool:
        return label in self.signatures

    @property
    def labels(self) -> list[str]:
        return sorted(self.signatures)


def parse_signatures(text: str) -> SignatureTable:
    baseline: dict[str, dict[str, float]] = {name: {} for name in CHANNEL_NAMES}
    overrides: dict[str, dict[str, dict[str, float]]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] != "sig" or len(parts) < 3:
            raise SignatureError(f"line {lineno}: expected 'sig <label> <channel> key=value ...'")
        label, channel = parts[1], parts[2]
        if label != BASELINE and label not in VOCABULARY:
            raise SignatureError(f"line {lineno}: unknown activity {label!r}")
        if channel not in CHANNEL_INDEX:
            raise SignatureError(f"line {lineno}: unknown channel {channel!r}")
        allowed = _BINARY_KEYS if BINARY_MASK[CHANNEL_INDEX[channel]] else _CONTINUOUS_KEYS
        fields: dict[str, float] = {}
        for item in parts[3:]:
            key, sep, value = item.partition("=")
            if not sep or key not in allowed:
                raise SignatureError(f"line {lineno}: bad field {item!r} for channel {channel}")
            try:
                fields[key] = float(value)
            except ValueError:
                raise SignatureError(f"line {lineno}: bad number in {item!r}") from None
        try:
            ChannelSignature(**fields)
        except SignatureError as exc:
            raise SignatureError(f"line {lineno}: {exc}") from None
        target = baseline if label == BASELINE else overrides.setdefault(label, {})
        target.setdefault(channel, {}).update(fields)

    def build(label_fields: Mapping[str, Mapping[str, float]]) -> tuple[ChannelSignature, ...]:
        return tuple(
            ChannelSignature(**{**baseline[name], **label_fields.get(name, {})}) for name in CHANNEL_NAMES
        )

    table = {label: build(fields) for label, fields in overrides.items()}
    table.setdefault(IDLE, build({}))
    missing = [lbl for lbl in SENSED_LABELS if lbl not in table]
    if missing:
        raise SignatureError(f"no signature for {', '.join(missing)}")
    return SignatureTable(table)


_default_table: SignatureTable | None = None


def default_signatures() -> SignatureTable:
    global _default_table
    if _default_table is None:
        text = resources.files("ambisense").joinpath("data/signatures.txt").read_text(encoding="utf-8")
        _default_table = parse_signatures(text)
    return _default_table


def _rng(seed: int, label: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(label.encode())]))


@dataclass(frozen=True)
class ActivityComponents:
    """Additive pieces of a generated activity; ``total`` is what the trace holds."""

    deterministic: np.ndarray  # dc + sinusoid, (15, n)
    bursts: np.ndarray
    noise: np.ndarray
    burst_onsets: tuple[np.ndarray, ...]  # sample indices per channel

    @property
    def total(self) -> np.ndarray:
        return self.deterministic + self.bursts + self.noise


def _burst_kernel() -> np.ndarray:
    return np.exp(-np.arange(BURST_KERNEL_LEN) / BURST_DECAY_SAMPLES)


def activity_components(
    label: str, duration_s: float, seed: int, table: SignatureTable | None = None, rate_hz: float = CANONICAL_RATE_HZ
) -> ActivityComponents:
    table = table or default_signatures()
    sigs = table[label]
    n = int(round(duration_s * rate_hz))
    if n < DEFAULT_WINDOW:
        raise ValueError(f"duration {duration_s} s shorter than one {DEFAULT_WINDOW}-sample window")
    rng = _rng(seed, label)
    channel_rngs = rng.spawn(N_CHANNELS)
    t = np.arange(n) / rate_hz
    det = np.zeros((N_CHANNELS, n))
    bursts = np.zeros((N_CHANNELS, n))
    noise = np.zeros((N_CHANNELS, n))
    onsets: list[np.ndarray] = []
    kernel = _burst_kernel()
    for c, (sig, crng) in enumerate(zip(sigs, channel_rngs)):
        if BINARY_MASK[c]:
            # PIR holds its state for whole seconds
            seconds = int(np.ceil(n / rate_hz))
            state = (crng.random(seconds) < sig.on).astype(np.float64)
            det[c] = state[(np.arange(n) // rate_hz).astype(np.int64)]
            onsets.append(np.array([], dtype=np.int64))
            continue
        phase = crng.uniform(0.0, 2 * np.pi)
        det[c] = sig.dc + sig.amp * np.sin(2 * np.pi * sig.freq * t + phase)
        hits = crng.random(n) < sig.burst_rate / rate_hz
        idx = np.flatnonzero(hits)
        onsets.append(idx)
        if idx.size:
            bursts[c] = sig.burst_amp * np.convolve(hits.astype(np.float64), kernel)[:n]
        noise[c] = crng.standard_normal(n) * sig.noise
    return ActivityComponents(det, bursts, noise, tuple(onsets))


def generate_activity(
    label: str,
    duration_s: float,
    seed: int,
    table: SignatureTable | None = None,
    start_time: float = 0.0,
) -> SensorTrace:
    parts = activity_components(label, duration_s, seed, table)
    values = parts.total
    return SensorTrace(values, CANONICAL_RATE_HZ, (label,) * values.shape[1], start_time)


@dataclass(frozen=True)
class ScenarioScript:
    steps: tuple[tuple[str, float], ...]
    seed: int = 0

    def __post_init__(self) -> None:
        steps = tuple((str(lbl), float(d)) for lbl, d in self.steps)
        min_s = 2 * DEFAULT_WINDOW / CANONICAL_RATE_HZ
        for lbl, d in steps:
            if d < min_s:
                raise ValueError(f"step {lbl!r} lasts {d} s; each step needs >= {min_s} s")
        object.__setattr__(self, "steps", steps)


def generate_scenario(script: ScenarioScript, table: SignatureTable | None = None, start_time: float = 0.0) -> SensorTrace:
    """Concatenate one generated activity per step; step i uses seed ``script.seed + i``."""
    if not script.steps:
        raise ValueError("empty scenario script")
    traces = []
    t0 = start_time
    for i, (label, duration) in enumerate(script.steps):
        tr = generate_activity(label, duration, script.seed + i, table, start_time=t0)
        traces.append(tr)
        t0 += len(tr) / CANONICAL_RATE_HZ
    return concatenate(traces)


# -- corpus -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class WindowSet:
    """Stacked labeled windows: ``x`` is (n, 15, W), ``y`` indexes SENSED_LABELS."""

    x: np.ndarray
    y: np.ndarray
    seeds: np.ndarray

    def __len__(self) -> int:
        return len(self.y)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, WindowSet):
            return NotImplemented
        return (
            np.array_equal(self.x, other.x) and np.array_equal(self.y, other.y) and np.array_equal(self.seeds, other.seeds)
        )

    def labels(self) -> list[str]:
        return [SENSED_LABELS[i] for i in self.y]

    def subset(self, idx: Sequence[int] | np.ndarray) -> "WindowSet":
        idx = np.asarray(idx, dtype=np.int64)
        return WindowSet(self.x[idx], self.y[idx], self.seeds[idx])

    def with_values(self, x: np.ndarray) -> "WindowSet":
        return dataclasses.replace(self, x=np.asarray(x, dtype=np.float64))

    def save(self, path) -> None:
        np.savez(path, x=self.x, y=self.y, seeds=self.seeds)

    @classmethod
    def load(cls, path) -> "WindowSet":
        with np.load(path) as data:
            return cls(data["x"].astype(np.float64), data["y"].astype(np.int64), data["seeds"].astype(np.int64))


@dataclass(frozen=True)
class Corpus:
    train: WindowSet
    test: WindowSet


def _window_seed(seed: int, class_idx: int, i: int) -> int:
    return int(np.random.SeedSequence([seed, class_idx, i]).generate_state(1, dtype=np.uint32)[0])


def build_corpus(n_per_class: int, seed: int, table: SignatureTable | None = None) -> Corpus:
    """Balanced corpus of independently generated 2 s windows, split 80/20 per class."""
    if n_per_class < 2:
        raise ValueError("n_per_class must be >= 2")
    duration = DEFAULT_WINDOW / CANONICAL_RATE_HZ
    n_train = int(round(0.8 * n_per_class))
    n_train = min(max(n_train, 1), n_per_class - 1)
    split_rng = np.random.default_rng([seed, 0x5EED])
    train_idx: list[int] = []
    test_idx: list[int] = []
    xs, ys, seeds = [], [], []
    for label in SENSED_LABELS:
        c = LABEL_INDEX[label]
        base = len(ys)
        for i in range(n_per_class):
            s = _window_seed(seed, c, i)
            xs.append(generate_activity(label, duration, s, table).values)
            ys.append(c)
            seeds.append(s)
        order = split_rng.permutation(n_per_class) + base
        train_idx.extend(sorted(order[:n_train]))
        test_idx.extend(sorted(order[n_train:]))
    full = WindowSet(np.stack(xs), np.array(ys, dtype=np.int64), np.array(seeds, dtype=np.int64))
    return Corpus(full.subset(train_idx), full.subset(test_idx))
