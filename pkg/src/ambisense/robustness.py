"""Macro-F1 under injected noise and reduced sampling rates."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .encoder import ModelParams, evaluate
from .syngen import WindowSet
from .trace import CANONICAL_RATE_HZ, decimation_factor, noise_array, zero_order_hold

DEFAULT_SIGMAS = (0.0, 0.5, 1.0, 2.0)
DEFAULT_RATES = (90.0, 45.0, 30.0, 15.0)
CSV_FIELDS = ("degradation_kind", "level", "macro_f1")


@dataclass(frozen=True)
class SweepRow:
    degradation_kind: str  # "noise" | "rate"
    level: float
    macro_f1: float


def noisy_windows(test: WindowSet, sigma: float, params: ModelParams, seed: int) -> WindowSet:
    rng = np.random.default_rng([seed, int(round(sigma * 1000))])
    return test.with_values(noise_array(test.x, sigma, rng, params.std))


def resampled_windows(test: WindowSet, rate_hz: float, source_hz: float = CANONICAL_RATE_HZ) -> WindowSet:
    """Decimate to ``rate_hz`` and hold each kept sample back up to full length."""
    k = decimation_factor(source_hz, rate_hz)
    if k == 1:
        return test
    width = test.x.shape[-1]
    return test.with_values(zero_order_hold(test.x[..., ::k], k, width))


def robustness_sweep(
    params: ModelParams,
    test: WindowSet,
    sigmas: Sequence[float] = DEFAULT_SIGMAS,
    rates: Sequence[float] = DEFAULT_RATES,
    seed: int = 0,
) -> list[SweepRow]:
    if not sigmas or not rates:
        raise ValueError("sigmas and rates must be non-empty")
    rows = []
    for sigma in sigmas:
        m = evaluate(noisy_windows(test, sigma, params, seed), params)
        rows.append(SweepRow("noise", float(sigma), m.macro_f1))
    for rate in rates:
        m = evaluate(resampled_windows(test, rate), params)
        rows.append(SweepRow("rate", float(rate), m.macro_f1))
    return rows


def rows_to_csv(rows: Iterable[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in rows:
        w.writerow([r.degradation_kind, f"{r.level:g}", f"{r.macro_f1:.6f}"])
    return buf.getvalue()


def rows_from_csv(text: str) -> list[SweepRow]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_FIELDS:
        raise ValueError(f"expected columns {CSV_FIELDS}")
    return [SweepRow(r["degradation_kind"], float(r["level"]), float(r["macro_f1"])) for r in reader]


def write_sweep(rows: Sequence[SweepRow], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(rows_to_csv(rows))


def render_sweep_figure(rows: Sequence[SweepRow], path: str | os.PathLike) -> None:
    """Two panels: macro-F1 against noise level and against sampling rate."""
    import matplotlib

    matplotlib.use("Agg")
    from matplotlib import pyplot as plt

    noise = sorted((r.level, r.macro_f1) for r in rows if r.degradation_kind == "noise")
    rate = sorted(((r.level, r.macro_f1) for r in rows if r.degradation_kind == "rate"), reverse=True)
    fig, (ax_n, ax_r) = plt.subplots(1, 2, figsize=(8, 3.2), sharey=True)
    if noise:
        ax_n.plot(*zip(*noise), marker="o", color="tab:red")
    ax_n.set_xlabel("noise level (x channel std)")
    ax_n.set_ylabel("macro F1")
    ax_n.set_ylim(0, 1.05)
    ax_n.grid(alpha=0.3)
    if rate:
        ax_r.plot(*zip(*rate), marker="s", color="tab:blue")
        ax_r.invert_xaxis()
    ax_r.set_xlabel("sampling rate (Hz)")
    ax_r.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
