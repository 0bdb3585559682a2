"""Atomic-activity classifier.

Each channel is z-normalized and passed through two branches whose 16-d
outputs are summed: a local time-domain MLP (W -> 32 -> 16) and a global
spectral branch (|rFFT| -> 16). The 15 channel features are concatenated and
fused by a 240 -> 64 -> 20 MLP. Everything is float64 numpy with hand-written
backprop so gradients can be checked against finite differences.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .fft import rfft_magnitude
from .labels import SENSED_LABELS
from .metrics import Metrics, compute_metrics
from .syngen import WindowSet
from .trace import DEFAULT_WINDOW, N_CHANNELS, Window

logger = logging.getLogger(__name__)

MAGIC = b"AMBM1"
STD_FLOOR = 1e-8
PARAM_GROUPS = ("tw1", "tb1", "tw2", "tb2", "sw", "sb", "fw1", "fb1", "fw2", "fb2")


class NonFiniteInputError(ValueError):
    pass


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Architecture:
    channels: int = N_CHANNELS
    window: int = DEFAULT_WINDOW
    time_hidden: int = 32
    features: int = 16
    fusion_hidden: int = 64
    classes: int = len(SENSED_LABELS)

    @property
    def spectrum(self) -> int:
        return self.window // 2 + 1

    def shapes(self) -> dict[str, tuple[int, ...]]:
        c, k = self.channels, self.features
        return {
            "tw1": (c, self.window, self.time_hidden),
            "tb1": (c, self.time_hidden),
            "tw2": (c, self.time_hidden, k),
            "tb2": (c, k),
            "sw": (c, self.spectrum, k),
            "sb": (c, k),
            "fw1": (c * k, self.fusion_hidden),
            "fb1": (self.fusion_hidden,),
            "fw2": (self.fusion_hidden, self.classes),
            "fb2": (self.classes,),
        }


@dataclass(eq=False)
class ModelParams:
    arch: Architecture
    weights: dict[str, np.ndarray]
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self) -> None:
        shapes = self.arch.shapes()
        for name in PARAM_GROUPS:
            if self.weights[name].shape != shapes[name]:
                raise ModelFormatError(f"{name}: expected shape {shapes[name]}, got {self.weights[name].shape}")
        self.std = np.maximum(np.asarray(self.std, dtype=np.float64), STD_FLOOR)
        self.mean = np.asarray(self.mean, dtype=np.float64)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.weights[name]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ModelParams):
            return NotImplemented
        return (
            self.arch == other.arch
            and all(np.array_equal(self.weights[n], other.weights[n]) for n in PARAM_GROUPS)
            and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.std, other.std)
        )

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, {n: w.copy() for n, w in self.weights.items()}, self.mean.copy(), self.std.copy())

    def n_parameters(self) -> int:
        return sum(w.size for w in self.weights.values())


def init_params(
    arch: Architecture = Architecture(),
    seed: int = 0,
    mean: np.ndarray | None = None,
    std: np.ndarray | None = None,
    scale: float = 1.0,
) -> ModelParams:
    """Weights ~ U(-scale/sqrt(fan_in), +scale/sqrt(fan_in)); biases zero."""
    rng = np.random.default_rng(seed)
    weights = {}
    for name, shape in arch.shapes().items():
        if name[1] == "b":
            weights[name] = np.zeros(shape)
        else:
            bound = scale / np.sqrt(shape[-2])
            weights[name] = rng.uniform(-bound, bound, size=shape)
    mean = np.zeros(arch.channels) if mean is None else mean
    std = np.ones(arch.channels) if std is None else std
    return ModelParams(arch, weights, mean, std)


def zero_params(arch: Architecture = Architecture()) -> ModelParams:
    return ModelParams(
        arch, {n: np.zeros(s) for n, s in arch.shapes().items()}, np.zeros(arch.channels), np.ones(arch.channels)
    )


def channel_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and std over all windows and samples of (n, C, W)."""
    mean = x.mean(axis=(0, 2))
    std = np.maximum(x.std(axis=(0, 2)), STD_FLOOR)
    return mean, std


# -- forward / backward --------------------------------------------------------


@dataclass
class _Cache:
    z: np.ndarray  # (C, B, W) normalized input
    mag: np.ndarray  # (C, B, F)
    a1: np.ndarray
    h1: np.ndarray
    a2: np.ndarray
    a3: np.ndarray
    flat: np.ndarray  # (B, C*K)
    a4: np.ndarray
    g: np.ndarray


def _as_batch(x: np.ndarray | Window | Sequence[Window], arch: Architecture) -> np.ndarray:
    if isinstance(x, Window):
        x = x.values[None]
    elif isinstance(x, (list, tuple)):
        x = np.stack([w.values for w in x])
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.shape[1:] != (arch.channels, arch.window):
        raise ValueError(f"expected windows of shape ({arch.channels}, {arch.window}), got {x.shape[1:]}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInputError("window contains NaN or Inf")
    return x


def spectral_features(x: np.ndarray, params: ModelParams) -> np.ndarray:
    """Channel-major magnitude spectra (C, B, F) of the normalized batch."""
    z = (x.transpose(1, 0, 2) - params.mean[:, None, None]) / params.std[:, None, None]
    return rfft_magnitude(z)


def _forward(x: np.ndarray, params: ModelParams, mag: np.ndarray | None = None) -> tuple[np.ndarray, _Cache]:
    w = params.weights
    z = (x.transpose(1, 0, 2) - params.mean[:, None, None]) / params.std[:, None, None]
    if mag is None:
        mag = rfft_magnitude(z)
    a1 = z @ w["tw1"] + w["tb1"][:, None, :]
    h1 = np.maximum(a1, 0.0)
    a2 = h1 @ w["tw2"] + w["tb2"][:, None, :]
    a3 = mag @ w["sw"] + w["sb"][:, None, :]
    feat = np.maximum(a2, 0.0) + np.maximum(a3, 0.0)  # (C, B, K)
    flat = feat.transpose(1, 0, 2).reshape(x.shape[0], -1)
    a4 = flat @ w["fw1"] + w["fb1"]
    g = np.maximum(a4, 0.0)
    logits = g @ w["fw2"] + w["fb2"]
    return logits, _Cache(z, mag, a1, h1, a2, a3, flat, a4, g)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def forward(window, params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Logits and class probabilities for one window or a batch of windows."""
    x = _as_batch(window, params.arch)
    logits, _ = _forward(x, params)
    probs = softmax(logits)
    if isinstance(window, Window) or np.ndim(window) == 2:
        return logits[0], probs[0]
    return logits, probs


def predict(x: np.ndarray, params: ModelParams, batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Predicted class indices and their probabilities for (n, C, W) windows."""
    x = _as_batch(x, params.arch)
    preds, conf = [], []
    for i in range(0, len(x), batch_size):
        _, p = forward(x[i : i + batch_size], params)
        idx = p.argmax(axis=1)
        preds.append(idx)
        conf.append(p[np.arange(len(idx)), idx])
    return np.concatenate(preds), np.concatenate(conf)


def loss_and_grads(
    params: ModelParams, x: np.ndarray, y: np.ndarray, mag: np.ndarray | None = None, loss_scale: float = 1.0
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy (times ``loss_scale``) and its gradient for every group."""
    w = params.weights
    x = np.asarray(x, dtype=np.float64)
    logits, c = _forward(x, params, mag)
    b = x.shape[0]
    logp = log_softmax(logits)
    loss = -logp[np.arange(b), y].mean() * loss_scale

    d_logits = np.exp(logp)
    d_logits[np.arange(b), y] -= 1.0
    d_logits *= loss_scale / b
    grads: dict[str, np.ndarray] = {}
    grads["fw2"] = c.g.T @ d_logits
    grads["fb2"] = d_logits.sum(axis=0)
    d_a4 = (d_logits @ w["fw2"].T) * (c.a4 > 0)
    grads["fw1"] = c.flat.T @ d_a4
    grads["fb1"] = d_a4.sum(axis=0)
    n_ch, k = params.arch.channels, params.arch.features
    d_feat = (d_a4 @ w["fw1"].T).reshape(b, n_ch, k).transpose(1, 0, 2)  # (C, B, K)

    d_a3 = d_feat * (c.a3 > 0)
    grads["sw"] = c.mag.transpose(0, 2, 1) @ d_a3
    grads["sb"] = d_a3.sum(axis=1)
    d_a2 = d_feat * (c.a2 > 0)
    grads["tw2"] = c.h1.transpose(0, 2, 1) @ d_a2
    grads["tb2"] = d_a2.sum(axis=1)
    d_a1 = (d_a2 @ w["tw2"].transpose(0, 2, 1)) * (c.a1 > 0)
    grads["tw1"] = c.z.transpose(0, 2, 1) @ d_a1
    grads["tb1"] = d_a1.sum(axis=1)
    return float(loss), grads


def mean_loss(params: ModelParams, x: np.ndarray, y: np.ndarray, mag: np.ndarray | None = None) -> float:
    logits, _ = _forward(np.asarray(x, dtype=np.float64), params, mag)
    return float(-log_softmax(logits)[np.arange(len(y)), y].mean())


# -- gradient check --------------------------------------------------------------

GRAD_CHECK_FLOOR = 1e-6  # denominators below this are FD roundoff, not signal


@dataclass
class GradCheckReport:
    per_group: dict[str, float]
    checked: dict[str, int]
    skipped: dict[str, int] = field(default_factory=dict)  # probes that straddled a ReLU kink

    @property
    def max_rel_error(self) -> float:
        return max(self.per_group.values())


def _loss_and_pattern(params: ModelParams, x: np.ndarray, y: np.ndarray, mag: np.ndarray) -> tuple[float, bytes]:
    logits, cache = _forward(x, params, mag)
    loss = float(-log_softmax(logits)[np.arange(len(y)), y].mean())
    pattern = np.concatenate([(a > 0).ravel() for a in (cache.a1, cache.a2, cache.a3, cache.a4)])
    return loss, np.packbits(pattern).tobytes()


def grad_check(
    params: ModelParams,
    x: np.ndarray,
    y: np.ndarray,
    h: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare backprop with central differences on every parameter group.

    With ``max_entries`` set, that many randomly chosen entries are checked per
    group instead of all of them. A probe whose +h and -h evaluations switch
    any ReLU on or off measures a kink rather than the derivative; such probes
    are counted in ``skipped`` and left out of the error.
    """
    x = _as_batch(x, params.arch)
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("empty batch")
    _, analytic = loss_and_grads(params, x, y)
    rng = np.random.default_rng(seed)
    probe = params.copy()
    mag = spectral_features(x, probe)
    per_group: dict[str, float] = {}
    checked: dict[str, int] = {}
    skipped: dict[str, int] = {}
    for name in PARAM_GROUPS:
        flat = probe.weights[name].reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        worst, n_ok, n_kink = 0.0, 0, 0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            up, pat_up = _loss_and_pattern(probe, x, y, mag)
            flat[i] = orig - h
            down, pat_down = _loss_and_pattern(probe, x, y, mag)
            flat[i] = orig
            if pat_up != pat_down:
                n_kink += 1
                continue
            numeric = (up - down) / (2 * h)
            a = analytic[name].reshape(-1)[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), GRAD_CHECK_FLOOR)
            worst = max(worst, rel)
            n_ok += 1
        per_group[name] = worst
        checked[name] = n_ok
        skipped[name] = n_kink
    return GradCheckReport(per_group, checked, skipped)


# -- training --------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    momentum: float = 0.9
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    init_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0 or self.epochs <= 0 or self.batch_size <= 0 or self.init_scale <= 0:
            raise ValueError("learning_rate, epochs, batch_size and init_scale must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")


@dataclass
class TrainResult:
    params: ModelParams
    loss_history: list[float]  # [0] before the first update, then one per epoch
    config: TrainConfig
    corpus_hash: str
    metadata: dict = field(default_factory=dict)


def corpus_hash(ws: WindowSet) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(ws.x).tobytes())
    h.update(np.ascontiguousarray(ws.y).tobytes())
    return h.hexdigest()[:16]


def _minibatches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i : i + batch_size]


def train(
    corpus: WindowSet, config: TrainConfig = TrainConfig(), arch: Architecture = Architecture()
) -> TrainResult:
    """Minibatch SGD with momentum on mean cross-entropy."""
    if len(corpus) == 0:
        raise ValueError("empty training corpus")
    if len(np.unique(corpus.y)) < 2:
        raise ValueError("training needs at least two classes")
    t0 = time.perf_counter()
    x, y = corpus.x, corpus.y
    mean, std = channel_stats(x)
    params = init_params(arch, config.seed, mean, std, config.init_scale)
    mag = spectral_features(x, params)  # fixed once the normalization is fixed
    velocity = {n: np.zeros_like(w) for n, w in params.weights.items()}
    rng = np.random.default_rng([config.seed, 1])
    history = [mean_loss(params, x, y, mag)]
    for epoch in range(config.epochs):
        for idx in _minibatches(len(y), config.batch_size, rng):
            _, grads = loss_and_grads(params, x[idx], y[idx], mag[:, idx])
            for n in PARAM_GROUPS:
                velocity[n] *= config.momentum
                velocity[n] -= config.learning_rate * grads[n]
                params.weights[n] += velocity[n]
        history.append(mean_loss(params, x, y, mag))
        logger.debug("epoch %d loss %.4f", epoch + 1, history[-1])
    meta = {
        "config": dataclasses.asdict(config),
        "architecture": dataclasses.asdict(arch),
        "train_seconds": round(time.perf_counter() - t0, 3),
    }
    return TrainResult(params, history, config, corpus_hash(corpus), meta)


# -- serialization --------------------------------------------------------------


def _manifest_path(path: str | os.PathLike) -> str:
    return os.fspath(path) + ".json"


def params_to_bytes(params: ModelParams) -> bytes:
    parts = [MAGIC]
    for name in PARAM_GROUPS:
        parts.append(np.ascontiguousarray(params.weights[name], dtype="<f8").tobytes())
    parts.append(np.ascontiguousarray(params.mean, dtype="<f8").tobytes())
    parts.append(np.ascontiguousarray(params.std, dtype="<f8").tobytes())
    return b"".join(parts)


def params_from_bytes(data: bytes, arch: Architecture = Architecture()) -> ModelParams:
    if data[: len(MAGIC)] != MAGIC:
        raise ModelFormatError("bad magic; not a model file")
    shapes = arch.shapes()
    sizes = [int(np.prod(shapes[n])) for n in PARAM_GROUPS] + [arch.channels, arch.channels]
    expected = len(MAGIC) + 8 * sum(sizes)
    if len(data) != expected:
        raise ModelFormatError(f"model file holds {len(data)} bytes, architecture needs {expected}")
    flat = np.frombuffer(data, dtype="<f8", offset=len(MAGIC)).astype(np.float64)
    weights, pos = {}, 0
    for name, size in zip(PARAM_GROUPS, sizes):
        weights[name] = flat[pos : pos + size].reshape(shapes[name]).copy()
        pos += size
    mean = flat[pos : pos + arch.channels].copy()
    std = flat[pos + arch.channels :].copy()
    return ModelParams(arch, weights, mean, std)


def save_params(params: ModelParams, path: str | os.PathLike, manifest: dict | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(params_to_bytes(params))
    doc = {
        "format": MAGIC.decode(),
        "dtype": "float64-le",
        "architecture": dataclasses.asdict(params.arch),
        "shapes": {n: list(s) for n, s in params.arch.shapes().items()},
        "order": list(PARAM_GROUPS) + ["norm_mean", "norm_std"],
        **(manifest or {}),
    }
    with open(_manifest_path(path), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_params(path: str | os.PathLike) -> ModelParams:
    arch = Architecture()
    mpath = _manifest_path(path)
    if os.path.exists(mpath):
        with open(mpath, encoding="utf-8") as fh:
            arch = Architecture(**json.load(fh).get("architecture", {}))
    with open(path, "rb") as fh:
        return params_from_bytes(fh.read(), arch)


def save_training(result: TrainResult, path: str | os.PathLike) -> None:
    save_params(
        result.params,
        path,
        {
            "seed": result.config.seed,
            "config": dataclasses.asdict(result.config),
            "corpus_hash": result.corpus_hash,
            "final_loss": result.loss_history[-1],
        },
    )


def evaluate(test: WindowSet, params: ModelParams) -> Metrics:
    if len(test) == 0:
        raise ValueError("empty test corpus")
    pred, _ = predict(test.x, params)
    return compute_metrics(test.y, pred, SENSED_LABELS[: params.arch.classes])
