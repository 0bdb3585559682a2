from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ambisense.fft import rfft_magnitude
from ambisense.syngen import generate_activity
from ambisense.trace import (
    BINARY_MASK,
    CHANNEL_NAMES,
    CSV_HEADER,
    N_CHANNELS,
    SensorTrace,
    TraceFormatError,
    TraceTooShortError,
    Window,
    add_noise,
    downsample,
    format_trace,
    load_trace,
    majority_label,
    parse_trace,
    save_trace,
    segment_windows,
    window_count,
    zero_order_hold,
)


def _blank(n: int) -> np.ndarray:
    return np.zeros((N_CHANNELS, n))


def test_channel_order_and_binary_mask():
    assert CHANNEL_NAMES == (
        "pir", "accel_x", "accel_y", "accel_z", "audio", "rgb_r", "rgb_g", "rgb_b",
        "pressure", "humidity", "mag_x", "mag_y", "mag_z", "gas", "temperature",
    )
    assert BINARY_MASK.sum() == 1 and BINARY_MASK[0]


def test_trace_invariants():
    with pytest.raises(TraceFormatError):
        SensorTrace(np.zeros((14, 5)))
    with pytest.raises(TraceFormatError):
        SensorTrace(_blank(0))
    bad = _blank(3)
    bad[2, 1] = np.nan
    with pytest.raises(TraceFormatError, match="non-finite"):
        SensorTrace(bad)
    pir = _blank(3)
    pir[0, 0] = 0.5
    with pytest.raises(TraceFormatError, match="binary channel out of domain"):
        SensorTrace(pir)
    with pytest.raises(TraceFormatError):
        SensorTrace(_blank(3), labels=("eat", "eat"))
    with pytest.raises(TraceFormatError, match="unknown label"):
        SensorTrace(_blank(2), labels=("eat", "dance"))


def test_trace_values_read_only():
    tr = SensorTrace(_blank(4))
    with pytest.raises(ValueError):
        tr.values[1, 0] = 3.0


def test_smallest_labeled_file():
    rows = [",".join(CSV_HEADER + ("label",))]
    for i in range(3):
        rows.append(",".join([f"{i / 90:.6f}"] + ["1"] + ["0.5"] * 14 + ["eat"]))
    tr = parse_trace("\n".join(rows) + "\n")
    assert len(tr) == 3
    assert tr.labels == ("eat",) * 3
    assert tr.sample_rate_hz == 90.0


def test_pir_half_is_rejected_with_line_number():
    rows = [",".join(CSV_HEADER), ",".join(["0"] + ["0"] * 15), ",".join(["0.011111"] + ["0.5"] + ["0"] * 14)]
    with pytest.raises(TraceFormatError, match="binary channel out of domain") as err:
        parse_trace("\n".join(rows))
    assert err.value.line == 3


@pytest.mark.parametrize(
    "text, line",
    [
        ("t,pir,accel_x\n0,0,0\n", 1),
        (",".join(CSV_HEADER) + "\n" + ",".join(["0"] * 15) + "\n", 2),
        (",".join(CSV_HEADER) + "\n" + ",".join(["0"] * 16) + "\n" + ",".join(["1", "0", "inf"] + ["0"] * 13) + "\n", 3),
        (",".join(CSV_HEADER + ("label",)) + "\n" + ",".join(["0"] * 16 + ["dance"]) + "\n", 2),
        (",".join(CSV_HEADER) + "\n" + ",".join(["0", "0", "x"] + ["0"] * 13) + "\n", 2),
    ],
)
def test_parse_errors_carry_line_numbers(text, line):
    with pytest.raises(TraceFormatError) as err:
        parse_trace(text)
    assert err.value.line == line


def test_save_load_round_trip(tmp_path):
    tr = generate_activity("chop", 2.0, seed=3)
    path = tmp_path / "chop.csv"
    save_trace(tr, path)
    back = load_trace(path)
    assert format_trace(back) == path.read_text()
    assert back.labels == tr.labels and back.sample_rate_hz == 90.0
    np.testing.assert_allclose(back.values, tr.values, rtol=1e-8, atol=1e-12)
    # canonical form is a fixed point
    save_trace(back, tmp_path / "again.csv")
    assert (tmp_path / "again.csv").read_bytes() == path.read_bytes()


def test_segment_windows_examples():
    tr = SensorTrace(_blank(360))
    ws = segment_windows(tr, 180, 90)
    assert [w.origin_index for w in ws] == [0, 90, 180]
    assert len(segment_windows(SensorTrace(_blank(180)), 180, 90)) == 1
    with pytest.raises(TraceTooShortError):
        segment_windows(SensorTrace(_blank(179)), 180, 90)
    with pytest.raises(ValueError):
        segment_windows(tr, 180, 0)


def test_window_majority_label():
    tr = SensorTrace(_blank(180), labels=("eat",) * 100 + ("idle",) * 80)
    assert segment_windows(tr, 180, 90)[0].label == "eat"
    assert majority_label(["a", "b"]) == "a"
    with pytest.raises(TraceFormatError):
        Window(np.zeros((N_CHANNELS, 0)))


@settings(max_examples=200, deadline=None)
@given(n=st.integers(1, 400), w=st.integers(1, 200), hop_frac=st.floats(0.01, 1.0))
def test_window_count_matches_closed_form(n, w, hop_frac):
    hop = max(1, int(w * hop_frac))
    if w > n:
        with pytest.raises(TraceTooShortError):
            segment_windows(SensorTrace(_blank(n)), w, hop)
        return
    ws = segment_windows(SensorTrace(_blank(n)), w, hop)
    assert len(ws) == (n - w) // hop + 1 == window_count(n, w, hop)
    assert all(win.length == w for win in ws)


def test_add_noise_identity_and_determinism():
    tr = generate_activity("run", 2.0, seed=1)
    assert add_noise(tr, 0.0, seed=5) is tr
    a = add_noise(tr, 1.0, seed=5)
    b = add_noise(tr, 1.0, seed=5)
    assert a == b
    assert a != add_noise(tr, 1.0, seed=6)
    assert set(np.unique(a.values[BINARY_MASK])) <= {0.0, 1.0}
    with pytest.raises(ValueError):
        add_noise(tr, -0.1, seed=0)


def test_add_noise_is_zero_mean():
    n = 100_000
    tr = SensorTrace(_blank(n))
    std = np.ones(N_CHANNELS)
    diff = add_noise(tr, 1.0, seed=11, channel_std=std).values[~BINARY_MASK] - tr.values[~BINARY_MASK]
    se = 1.0 / np.sqrt(n)
    assert np.all(np.abs(diff.mean(axis=1)) < 3 * se * 1.5)  # 14 channels, small family-wise slack
    assert np.allclose(diff.std(axis=1), 1.0, atol=0.02)


def test_binary_flip_rate():
    tr = SensorTrace(_blank(50_000))
    noisy = add_noise(tr, 2.0, seed=2, channel_std=np.ones(N_CHANNELS))
    assert abs(noisy.values[0].mean() - 0.2) < 0.01


def test_downsample():
    tr = generate_activity("saw", 4.0, seed=2)
    half = downsample(tr, 45.0)
    assert half.sample_rate_hz == 45.0
    assert abs(len(half) - len(tr) / 2) <= 1
    assert half.labels == tr.labels[::2]
    np.testing.assert_array_equal(half.values, tr.values[:, ::2])
    assert downsample(tr, 90.0) is tr
    with pytest.raises(ValueError):
        downsample(tr, 120.0)
    for target in (45, 30, 15, 7):
        out = downsample(tr, target)
        assert len(out) <= len(tr)
        assert set(np.unique(out.values[BINARY_MASK])) <= {0.0, 1.0}


def test_zoh_downsample_aliases_30hz_tone():
    n = 180
    t = np.arange(n) / 90.0
    values = _blank(n)
    values[1] = np.sin(2 * np.pi * 30.0 * t)
    tr = SensorTrace(values)
    mag_clean = rfft_magnitude(tr.values[1])
    freqs = np.arange(n // 2 + 1) * 90.0 / n
    peak = int(np.argmin(np.abs(freqs - 30.0)))
    assert np.argmax(mag_clean) == peak

    low = downsample(tr, 45.0)
    rebuilt = zero_order_hold(low.values, 2, n)
    mag = rfft_magnitude(rebuilt[1])
    alias = int(np.argmin(np.abs(freqs - 15.0)))
    # at 45 Hz the tone folds to 15 Hz; the 2x hold leaves only an image at 30 Hz,
    # scaled by the hold response |cos(pi f / 90)|
    assert np.argmax(mag) == alias
    assert mag[alias] == pytest.approx(np.cos(np.pi / 6) * mag_clean[peak], rel=1e-9)
    assert mag[peak] == pytest.approx(np.cos(np.pi / 3) * mag_clean[peak], rel=1e-9)
