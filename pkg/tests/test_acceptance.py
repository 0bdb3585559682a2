"""Acceptance criteria 1-7. Each test prints one PASS/FAIL line with the measured values."""

from __future__ import annotations

import math
import os

import numpy as np
import pytest

from ambisense import cli
from ambisense.encoder import (
    Architecture,
    TrainConfig,
    channel_stats,
    evaluate,
    grad_check,
    init_params,
    mean_loss,
    params_to_bytes,
    train,
)
from ambisense.fft import dft, rfft
from ambisense.labels import SENSED_LABELS
from ambisense.llm import LIVE_ENV, ScriptedClient, verify_with_llm
from ambisense.metrics import score_from_counts
from ambisense.reasoner import FixpointError, check_sequence, default_ruleset
from ambisense.robustness import robustness_sweep

RULES = default_ruleset()
HARD = ("paperdis", "pour_water", "chat")
GOLDEN = [
    (("teeth", "hand_wash", "pour_water", "eat"), ("teeth", "hand_wash", "take_medication", "pour_water", "eat"), ["forgetting medication"]),
    (("eat", "basketball", "teeth"), ("teeth", "hand_wash", "eat", "basketball"), ["unhygienic behavior"]),
    (("door_pass", "paperdis"), ("door_pass", "light_switch", "paperdis"), ["preventing slipping"]),
]
ADJACENT_TOL = 0.02


@pytest.fixture
def report(capsys):
    def emit(n: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, detail

    return emit


@pytest.fixture(scope="module")
def timed(corpus):
    return train(corpus.train, TrainConfig())


def test_criterion_1_classifier(corpus, timed, report):
    metrics = evaluate(corpus.test, timed.params)
    seconds = timed.metadata["train_seconds"]
    f1 = {c.label: c.f1 for c in metrics.per_class}
    n_high = sum(v >= 0.95 for v in f1.values())
    lowest = sorted(f1, key=f1.get)[:3]
    ok = seconds < 120 and metrics.macro_f1 >= 0.90 and n_high >= 15 and set(lowest) == set(HARD)
    trio = ", ".join(f"{k} {f1[k]:.2f}" for k in HARD)
    report(1, ok, f"train {seconds:.1f} s, macro-F1 {metrics.macro_f1:.3f}, {n_high}/20 classes >= 0.95, lowest: {trio}")


def test_criterion_2_metric_arithmetic(report):
    row = score_from_counts(3, 3, 5)
    perfect = score_from_counts(7, 0, 0)
    got = tuple(f"{v:.2f}" for v in (row.precision, row.recall, row.f1))
    ok = got == ("0.50", "0.38", "0.43") and (perfect.precision, perfect.recall, perfect.f1) == (1.0, 1.0, 1.0)
    report(2, ok, f"(3,3,5) -> P/R/F1 {'/'.join(got)}; all-correct -> {perfect.precision:.2f}/{perfect.recall:.2f}/{perfect.f1:.2f}")


def test_criterion_3_robustness(corpus, model, report):
    clean = evaluate(corpus.test, model).macro_f1
    rows = robustness_sweep(model, corpus.test)
    noise = [r.macro_f1 for r in rows if r.degradation_kind == "noise"]
    rate = [r.macro_f1 for r in rows if r.degradation_kind == "rate"]
    worst = max(b - a for series in (noise, rate) for a, b in zip(series, series[1:]))
    ok = worst <= ADJACENT_TOL and noise[0] == clean and rate[0] == clean
    fmt = lambda xs: " ".join(f"{x:.3f}" for x in xs)  # noqa: E731
    report(3, ok, f"noise {fmt(noise)}; rate {fmt(rate)}; worst rise {max(worst, 0):.3f}; clean rows exact: {noise[0] == clean == rate[0]}")


def test_criterion_4_rule_engine(report):
    golden_ok = all(
        check_sequence(seq, RULES).corrected == corrected and check_sequence(seq, RULES).labels == labels
        for seq, corrected, labels in GOLDEN
    )
    rng = np.random.default_rng(2024)
    alphabet = list(SENSED_LABELS) + ["take_medication"]
    failures, not_idempotent, worst = 0, 0, 0
    for _ in range(10_000):
        seq = [alphabet[i] for i in rng.integers(0, len(alphabet), size=rng.integers(1, 13))]
        try:
            result = check_sequence(seq, RULES)
        except FixpointError:
            failures += 1
            continue
        worst = max(worst, result.passes)
        again = check_sequence(result.corrected, RULES)
        not_idempotent += again.corrected != result.corrected or bool(again.findings)
    ok = golden_ok and failures == 0 and not_idempotent == 0
    report(4, ok, f"golden {'ok' if golden_ok else 'MISMATCH'}; 10000 random: {failures} fixpoint failures, {not_idempotent} non-idempotent, max passes {worst}")


def test_criterion_5_numerics(corpus, trained, timed, report):
    rng = np.random.default_rng(5)
    fft_err, parseval_err = 0.0, 0.0
    for n in (2, 3, 8, 12, 90, 180, 256, 360):
        x = rng.standard_normal((4, n))
        spec = rfft(x)
        fft_err = max(fft_err, float(np.abs(spec - dft(x)[:, : n // 2 + 1]).max()))
        full = np.concatenate([spec, np.conj(spec[:, 1 : (n + 1) // 2][:, ::-1])], axis=1)
        energy = (np.abs(full) ** 2).sum(axis=1) / n
        parseval_err = max(parseval_err, float(np.max(np.abs(energy - (x**2).sum(axis=1)) / (x**2).sum(axis=1))))
    mean, std = channel_stats(corpus.train.x)
    sub = corpus.train.subset(np.arange(0, len(corpus.train), 40))
    grad = grad_check(init_params(Architecture(), 3, mean, std), sub.x, sub.y, max_entries=25, seed=1)
    ce0 = mean_loss(init_params(Architecture(), 0, mean, std, scale=1e-3), corpus.train.x, corpus.train.y)
    deterministic = params_to_bytes(trained.params) == params_to_bytes(timed.params) and trained.loss_history == timed.loss_history
    ok = fft_err < 1e-9 and parseval_err < 1e-9 and grad.max_rel_error < 1e-4 and abs(ce0 - math.log(20)) <= 0.1 and deterministic
    report(
        5,
        ok,
        f"rfft err {fft_err:.1e}, Parseval rel {parseval_err:.1e}, grad rel {grad.max_rel_error:.1e}, "
        f"CE0 {ce0:.4f} (ln20 {math.log(20):.4f}), bit-deterministic {deterministic}",
    )


def test_criterion_6_end_to_end(tmp_path, capsys, report):
    import time

    model = str(tmp_path / "model.ambm")
    t0 = time.perf_counter()
    code = cli.main(["e2e", "--scenario", "medication", "--model", model, "--corpus", str(tmp_path / "corpus"), "-q"])
    elapsed = time.perf_counter() - t0
    out = capsys.readouterr().out
    reminders = [line for line in out.splitlines() if line.startswith("reminder ")]
    summary = out.strip().splitlines()[-1] if out.strip() else "no output"
    ok = code == 0 and len(reminders) == 1 and "forgetting medication" in reminders[0] and elapsed < 60
    report(6, ok, f"exit {code}, {len(reminders)} reminder, {elapsed:.1f} s incl. training; {summary}")


def test_criterion_7_degraded_mode(report):
    flags = []
    for seq, corrected, labels in GOLDEN:
        result = verify_with_llm(seq, RULES, ScriptedClient("}}} not a verdict {{{"))
        flags.append(result.degraded and result.corrected == corrected and [f.complex_label for f in result.findings] == labels)
    live_gated = os.environ.get(LIVE_ENV) != "1"
    report(7, all(flags), f"garbage mock -> engine correction flagged degraded on {sum(flags)}/3 scenarios; live tests {'skipped (gated)' if live_gated else 'enabled'}")
