"""Real-input FFT used by the spectral branch.

Mixed-radix decimation-in-time for the complex transform, plus the usual
half-length packing trick for real signals of even length. Odd lengths go
through the direct O(n^2) sum. All routines transform along the last axis.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np


def _smallest_factor(n: int) -> int:
    if n % 2 == 0:
        return 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return f
        f += 2
    return n


@lru_cache(maxsize=64)
def _dft_matrix(n: int) -> np.ndarray:
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n)


@lru_cache(maxsize=64)
def _twiddles(p: int, n: int) -> np.ndarray:
    return np.exp(-2j * np.pi * np.outer(np.arange(p), np.arange(n)) / n)


def dft(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.complex128)
    return x @ _dft_matrix(x.shape[-1]).T


def fft(x: np.ndarray) -> np.ndarray:
    """Complex DFT along the last axis for any length."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if n <= 1:
        return x.copy()
    p = _smallest_factor(n)
    if p == n:
        return dft(x)
    m = n // p
    # p interleaved sub-transforms of length m, recombined with twiddles
    sub = np.stack([fft(x[..., r::p]) for r in range(p)], axis=-2)
    k = np.arange(n)
    return np.sum(sub[..., k % m] * _twiddles(p, n), axis=-2)


def rfft(x: np.ndarray) -> np.ndarray:
    """Bins 0..n//2 of the DFT of real ``x``."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if n == 0:
        raise ValueError("rfft of an empty signal")
    if n % 2:
        return dft(x)[..., : n // 2 + 1]
    m = n // 2
    z = fft(x[..., 0::2] + 1j * x[..., 1::2])
    k = np.arange(m + 1)
    zk = z[..., k % m]
    zc = np.conj(z[..., (-k) % m])
    even = 0.5 * (zk + zc)
    odd = -0.5j * (zk - zc)
    return even + np.exp(-2j * np.pi * k / n) * odd


def rfft_magnitude(x: np.ndarray) -> np.ndarray:
    """|rfft(x)| / sqrt(n): unit-energy scaling keeps spectral inputs O(1)."""
    x = np.asarray(x, dtype=np.float64)
    return np.abs(rfft(x)) / np.sqrt(x.shape[-1])
