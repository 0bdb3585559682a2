from __future__ import annotations

import cmath
import math

import numpy as np
import pytest

from ambisense.fft import dft, fft, rfft, rfft_magnitude


def brute_dft(x):
    n = len(x)
    return [sum(x[t] * cmath.exp(-2j * math.pi * k * t / n) for t in range(n)) for k in range(n)]


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6, 8, 9, 12, 15, 16, 30, 45, 64, 90])
def test_complex_fft_matches_brute_force(n):
    rng = np.random.default_rng(n)
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    oracle = np.array(brute_dft(list(x)))
    assert np.max(np.abs(fft(x) - oracle)) < 1e-9
    assert np.max(np.abs(dft(x) - oracle)) < 1e-9


@pytest.mark.parametrize("n", [2, 4, 7, 10, 33, 64, 90, 180])
def test_rfft_matches_brute_force(n):
    x = np.random.default_rng(100 + n).standard_normal(n)
    oracle = np.array(brute_dft(list(x)))[: n // 2 + 1]
    assert np.max(np.abs(rfft(x) - oracle)) < 1e-9


def test_rfft_batched_and_cross_checked():
    x = np.random.default_rng(0).standard_normal((3, 15, 180))
    out = rfft(x)
    assert out.shape == (3, 15, 91)
    for idx in [(0, 0), (2, 14), (1, 7)]:
        np.testing.assert_allclose(out[idx], rfft(x[idx]), atol=1e-12)
    np.testing.assert_allclose(out, np.fft.rfft(x), atol=1e-10)


@pytest.mark.parametrize("n", [180, 181, 64])
def test_parseval(n):
    x = np.random.default_rng(n).standard_normal(n)
    X = rfft(x)
    # fold the one-sided spectrum back into full energy
    weights = np.full(X.shape, 2.0)
    weights[0] = 1.0
    if n % 2 == 0:
        weights[-1] = 1.0
    spectral = float(np.sum(weights * np.abs(X) ** 2)) / n
    assert abs(spectral - float(np.sum(x * x))) / float(np.sum(x * x)) < 1e-9


def test_dc_and_impulse():
    n = 180
    const = np.full(n, 2.5)
    X = rfft(const)
    assert X[0] == pytest.approx(2.5 * n)
    assert np.max(np.abs(X[1:])) < 1e-9
    impulse = np.zeros(n)
    impulse[0] = 1.0
    np.testing.assert_allclose(rfft(impulse), np.ones(n // 2 + 1), atol=1e-12)


def test_magnitude_scaling():
    n = 180
    t = np.arange(n) / 90.0
    x = np.sin(2 * np.pi * 10.0 * t)
    mag = rfft_magnitude(x)
    assert np.argmax(mag) == 20
    assert mag[20] == pytest.approx(np.sqrt(n) / 2, rel=1e-9)
    with pytest.raises(ValueError):
        rfft(np.zeros(0))
