import numpy as np
import pytest

from uwlink.channel import apply_awgn, apply_fir
from uwlink.ofdm import (
    FrameLayout,
    NoFrameDetected,
    OfdmFrameSpec,
    build_chirp,
    build_preamble,
    demodulate_frame,
    detect_frame,
    dft_symbols,
    estimate_cfo,
    estimate_channel,
    modulate_frame,
    ofdm_symbols_to_time,
    receive_frame,
    symbol_matrix,
    zf_equalize,
)

SPEC = OfdmFrameSpec()
LAYOUT = FrameLayout.from_seed(SPEC, seed=7)


def _random_data(rng):
    return rng.standard_normal(SPEC.data_slots) + 1j * rng.standard_normal(SPEC.data_slots)


def test_frame_arithmetic():
    assert SPEC.frame_len == 2660
    assert SPEC.sym_len == 127
    assert SPEC.data_slots == 768
    assert SPEC.n_pilot_syms == 4
    assert LAYOUT.pilot_symbol_indices == (0, 4, 8, 12)
    assert LAYOUT.data_symbol_indices(SPEC) == (1, 2, 3, 5, 6, 7, 9, 10, 11, 13, 14, 15)
    assert abs(SPEC.duration_s - 0.3325) < 1e-12
    assert abs(SPEC.raw_bps - 768 / 0.3325) < 1e-9


def test_frame_power_and_length():
    rng = np.random.default_rng(0)
    frame = modulate_frame(SPEC, LAYOUT, _random_data(rng))
    assert len(frame) == 2660
    assert abs(np.mean(np.abs(frame) ** 2) - 1.0) < 1e-9


def test_zero_data_frame():
    frame = modulate_frame(SPEC, LAYOUT, np.zeros(768, dtype=complex))
    assert abs(np.mean(np.abs(frame) ** 2) - 1.0) < 1e-9
    # data symbol intervals are silent, pilot intervals are not
    body = frame[SPEC.head_len :].reshape(16, SPEC.sym_len)
    energy = np.sum(np.abs(body) ** 2, axis=1)
    for s in range(16):
        if s in LAYOUT.pilot_symbol_indices:
            assert energy[s] > 1e-3
        else:
            assert energy[s] < 1e-20


def test_modulate_input_validation():
    with pytest.raises(ValueError, match="768"):
        modulate_frame(SPEC, LAYOUT, np.zeros(100, dtype=complex))
    bad = np.zeros(768, dtype=complex)
    bad[5] = np.inf
    with pytest.raises(ValueError, match="finite"):
        modulate_frame(SPEC, LAYOUT, bad)


def test_ideal_loopback():
    rng = np.random.default_rng(1)
    for trial in range(4):
        data = _random_data(rng)
        frame = modulate_frame(SPEC, LAYOUT, data)
        out = demodulate_frame(SPEC, LAYOUT, frame, offset=0, cfo_hz=0.0)
        assert np.max(np.abs(out - data)) < 1e-6 * max(1.0, np.max(np.abs(data)))


def test_loopback_across_layout_seeds():
    rng = np.random.default_rng(2)
    for seed in (0, 3, 12345):
        layout = FrameLayout.from_seed(SPEC, seed)
        data = _random_data(rng)
        frame = modulate_frame(SPEC, layout, data)
        out = demodulate_frame(SPEC, layout, frame, 0, 0.0)
        assert np.max(np.abs(out - data)) < 1e-6


def test_detect_frame_exact_in_silence():
    rng = np.random.default_rng(3)
    frame = modulate_frame(SPEC, LAYOUT, _random_data(rng))
    rx = np.concatenate(
        [np.zeros(1234, dtype=complex), frame, np.zeros(400, dtype=complex)]
    )
    assert detect_frame(SPEC, rx) == 1234


def test_detect_frame_rejects_noise():
    rng = np.random.default_rng(4)
    noise = rng.standard_normal(4000) + 1j * rng.standard_normal(4000)
    with pytest.raises(NoFrameDetected):
        detect_frame(SPEC, noise)


def test_detect_frame_under_awgn():
    rng = np.random.default_rng(5)
    frame = modulate_frame(SPEC, LAYOUT, _random_data(rng))
    hits = 0
    for trial in range(100):
        pad = np.zeros(300, dtype=complex)
        rx = np.concatenate([pad, frame, pad])
        rx = apply_awgn(rx, 10.0 + 10.0 * np.log10(len(rx) / len(frame)), seed=trial)
        try:
            off = detect_frame(SPEC, rx)
        except NoFrameDetected:
            continue
        if abs(off - 300) <= 2:
            hits += 1
    assert hits >= 99


def test_cfo_null_and_synthetic_shift():
    pre = build_preamble(SPEC, LAYOUT)
    assert abs(estimate_cfo(SPEC, pre)) < 1e-6 * SPEC.fs
    n = np.arange(len(pre))
    for f in (20.0, -35.0):
        shifted = pre * np.exp(2j * np.pi * f * n / SPEC.fs)
        assert abs(estimate_cfo(SPEC, shifted) - f) < 0.1


def test_cfo_wraps_beyond_range():
    # unambiguous range is +-fs/128 = +-62.5 Hz; 70 Hz aliases to -55
    pre = build_preamble(SPEC, LAYOUT)
    n = np.arange(len(pre))
    shifted = pre * np.exp(2j * np.pi * 70.0 * n / SPEC.fs)
    assert abs(estimate_cfo(SPEC, shifted) - (70.0 - SPEC.fs / 64)) < 0.1


def test_estimate_channel_flat():
    rng = np.random.default_rng(6)
    X = symbol_matrix(SPEC, LAYOUT, _random_data(rng))
    H = estimate_channel(SPEC, LAYOUT, X)  # Y = X means the channel is 1
    assert np.max(np.abs(H - 1.0)) < 1e-9


def test_estimate_channel_two_tap():
    rng = np.random.default_rng(7)
    taps = np.array([1.0, 0.4 - 0.2j])
    X = symbol_matrix(SPEC, LAYOUT, _random_data(rng))
    body = ofdm_symbols_to_time(SPEC, X)
    Y = dft_symbols(SPEC, apply_fir(body, taps))
    H = estimate_channel(SPEC, LAYOUT, Y)
    H_true = np.fft.fft(taps, SPEC.n_sub)
    assert np.max(np.abs(H - H_true[None, :])) < 1e-6


def test_estimate_channel_interpolation_brackets():
    rng = np.random.default_rng(8)
    X = symbol_matrix(SPEC, LAYOUT, _random_data(rng))
    gains = np.linspace(1.0, 2.5, 16)
    Y = gains[:, None] * X
    H = estimate_channel(SPEC, LAYOUT, Y)
    for s in range(13):  # interpolated region: between bracketing pilots
        lo = gains[(s // 4) * 4]
        hi = gains[min((s // 4) * 4 + 4, 12)]
        assert np.all(np.abs(H[s]) >= min(lo, hi) - 1e-9)
        assert np.all(np.abs(H[s]) <= max(lo, hi) + 1e-9)
    # trailing symbols hold the last pilot estimate
    for s in (13, 14, 15):
        assert np.allclose(H[s], H[12], atol=1e-12)


def test_zf_equalize():
    rng = np.random.default_rng(9)
    X = rng.standard_normal((4, 8)) + 1j * rng.standard_normal((4, 8))
    assert np.allclose(zf_equalize(X, np.ones_like(X)), X, atol=1e-12)
    H = rng.standard_normal((4, 8)) + 1j * rng.standard_normal((4, 8))
    assert np.max(np.abs(zf_equalize(H * X, H) - X)) < 1e-9
    deep = np.full_like(X, 1e-9)
    out = zf_equalize(X, deep)
    assert np.all(np.isfinite(out))
    assert np.max(np.abs(out)) <= np.max(np.abs(X)) / 1e-6 + 1.0


def test_multipath_loopback_within_cp():
    rng = np.random.default_rng(10)
    data = _random_data(rng)
    frame = modulate_frame(SPEC, LAYOUT, data)
    taps = np.array([1.0, 0.0, 0.5 - 0.3j, 0.0, -0.2j])
    rx = apply_fir(frame, taps)
    out = demodulate_frame(SPEC, LAYOUT, rx, 0, 0.0)
    evm = np.linalg.norm(out - data) / np.linalg.norm(data)
    assert 20 * np.log10(evm) < -60


def test_cp_circularity_long_fir():
    # any FIR up to the 63-tap cyclic prefix keeps subcarriers orthogonal
    rng = np.random.default_rng(11)
    taps = (rng.standard_normal(63) + 1j * rng.standard_normal(63)) * np.exp(
        -0.1 * np.arange(63)
    )
    data = _random_data(rng)
    X = symbol_matrix(SPEC, LAYOUT, data)
    body = ofdm_symbols_to_time(SPEC, X)
    Y = dft_symbols(SPEC, apply_fir(body, taps))
    H_true = np.fft.fft(taps, SPEC.n_sub)
    assert np.max(np.abs(Y - H_true[None, :] * X)) < 1e-6 * np.max(np.abs(X))


def test_receive_frame_with_offset_and_cfo():
    rng = np.random.default_rng(12)
    data = _random_data(rng)
    frame = modulate_frame(SPEC, LAYOUT, data)
    rx = np.concatenate(
        [np.zeros(777, dtype=complex), frame, np.zeros(200, dtype=complex)]
    )
    n = np.arange(len(rx))
    rx = rx * np.exp(2j * np.pi * 20.0 * n / SPEC.fs)
    out = receive_frame(SPEC, LAYOUT, rx)
    assert np.max(np.abs(out - data)) < 1e-5


def test_demodulate_offset_validation():
    frame = modulate_frame(SPEC, LAYOUT, np.zeros(768, dtype=complex))
    with pytest.raises(ValueError, match="offset"):
        demodulate_frame(SPEC, LAYOUT, frame, 10, 0.0)
