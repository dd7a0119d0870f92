"""OFDM framing and receiver chain.

Frame layout on the wire (complex baseband, one sample per 1/8000 s):

    chirp sync head   500 samples   Hann-windowed linear FM sweep
    repeated preamble 128 samples   two identical 64-sample halves
    16 OFDM symbols   16 x 127      63-sample cyclic prefix + 64-sample body

One symbol in every four carries known pilots on all subcarriers; the
other twelve carry 64 data slots each, 768 per frame.  The whole frame
is scaled to unit mean power before it leaves the modulator.

The receiver chain: chirp matched-filter timing, repeated-half carrier
frequency offset estimate, per-symbol DFT, pilot channel estimates with
linear time interpolation, zero-forcing equalization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NoFrameDetected(RuntimeError):
    pass


@dataclass(frozen=True)
class OfdmFrameSpec:
    n_sub: int = 64
    cp_len: int = 63
    syms_per_frame: int = 16
    pilot_period: int = 4
    bandwidth_hz: float = 8000.0
    chirp_len: int = 500
    sc_len: int = 128
    carrier_hz: float = 14000.0

    def __post_init__(self):
        if self.sc_len != 2 * self.n_sub:
            raise ValueError("preamble must be two repeated symbol-length halves")
        if self.syms_per_frame % self.pilot_period != 0:
            raise ValueError("pilot period must divide the symbol count")

    @property
    def fs(self) -> float:
        return self.bandwidth_hz  # complex baseband: sample rate = bandwidth

    @property
    def sym_len(self) -> int:
        return self.n_sub + self.cp_len

    @property
    def head_len(self) -> int:
        return self.chirp_len + self.sc_len

    @property
    def frame_len(self) -> int:
        return self.head_len + self.syms_per_frame * self.sym_len

    @property
    def n_pilot_syms(self) -> int:
        return self.syms_per_frame // self.pilot_period

    @property
    def n_data_syms(self) -> int:
        return self.syms_per_frame - self.n_pilot_syms

    @property
    def data_slots(self) -> int:
        return self.n_data_syms * self.n_sub

    @property
    def duration_s(self) -> float:
        return self.frame_len / self.fs

    @property
    def raw_bps(self) -> float:
        """Data slots per second (bits per second under BPSK accounting)."""
        return self.data_slots / self.duration_s


def _seeded_qpsk(rng: np.random.Generator, n: int) -> np.ndarray:
    pts = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2.0)
    return pts[rng.integers(0, 4, size=n)]


@dataclass(frozen=True)
class FrameLayout:
    """Pilot placement and the seeded known sequences of one frame design."""

    seed: int
    pilot_symbol_indices: tuple
    pilot_values: np.ndarray  # unit-modulus, one per subcarrier
    sc_half: np.ndarray  # 64-sample preamble half

    @classmethod
    def from_seed(cls, spec: OfdmFrameSpec, seed: int) -> "FrameLayout":
        rng = np.random.default_rng(seed)
        pilots = _seeded_qpsk(rng, spec.n_sub)
        half = _seeded_qpsk(rng, spec.n_sub)
        pilots.setflags(write=False)
        half.setflags(write=False)
        return cls(
            seed=seed,
            pilot_symbol_indices=tuple(range(0, spec.syms_per_frame, spec.pilot_period)),
            pilot_values=pilots,
            sc_half=half,
        )

    def data_symbol_indices(self, spec: OfdmFrameSpec) -> tuple:
        return tuple(
            s for s in range(spec.syms_per_frame) if s not in self.pilot_symbol_indices
        )


def build_chirp(spec: OfdmFrameSpec) -> np.ndarray:
    """Hann-windowed linear FM sweep across the full band."""
    n = spec.chirp_len
    t = np.arange(n) / spec.fs
    T = n / spec.fs
    B = spec.bandwidth_hz
    phase = 2.0 * np.pi * (-0.5 * B * t + 0.5 * B * t * t / T)
    return np.exp(1j * phase) * np.hanning(n)


def build_preamble(spec: OfdmFrameSpec, layout: FrameLayout) -> np.ndarray:
    return np.tile(layout.sc_half, 2)


def symbol_matrix(spec: OfdmFrameSpec, layout: FrameLayout, data_symbols: np.ndarray) -> np.ndarray:
    """Arrange 768 data slots and the pilot rows into the 16 x 64 grid."""
    d = np.asarray(data_symbols, dtype=np.complex128)
    if d.shape != (spec.data_slots,):
        raise ValueError(f"expected {spec.data_slots} data symbols, got {d.shape}")
    if not np.all(np.isfinite(d)):
        raise ValueError("non-finite data symbol")
    X = np.zeros((spec.syms_per_frame, spec.n_sub), dtype=np.complex128)
    X[list(layout.pilot_symbol_indices)] = layout.pilot_values
    X[list(layout.data_symbol_indices(spec))] = d.reshape(spec.n_data_syms, spec.n_sub)
    return X


def ofdm_symbols_to_time(spec: OfdmFrameSpec, X: np.ndarray) -> np.ndarray:
    """Unitary per-symbol IDFT plus cyclic prefix, concatenated."""
    x = np.fft.ifft(X, axis=1) * np.sqrt(spec.n_sub)
    with_cp = np.concatenate([x[:, -spec.cp_len :], x], axis=1)
    return with_cp.reshape(-1)


def modulate_frame(spec: OfdmFrameSpec, layout: FrameLayout, data_symbols: np.ndarray) -> np.ndarray:
    """Assemble one frame at complex baseband, unit mean power."""
    X = symbol_matrix(spec, layout, data_symbols)
    body = ofdm_symbols_to_time(spec, X)
    frame = np.concatenate([build_chirp(spec), build_preamble(spec, layout), body])
    rms = np.sqrt(np.mean(np.abs(frame) ** 2))
    return frame / rms


def detect_frame(spec: OfdmFrameSpec, rx: np.ndarray, threshold: float = 0.25) -> int:
    """Start offset of the frame via normalized matched-filter correlation
    against the known chirp.  Raises NoFrameDetected below threshold."""
    rx = np.asarray(rx, dtype=np.complex128)
    chirp = build_chirp(spec)
    n = len(chirp)
    if len(rx) < spec.frame_len:
        raise NoFrameDetected("input shorter than one frame")
    c = np.correlate(rx, chirp, mode="valid")
    # keep only offsets that leave room for the full frame
    c = c[: len(rx) - spec.frame_len + 1]
    power = np.concatenate([[0.0], np.cumsum(np.abs(rx) ** 2)])
    win = power[n : n + len(c)] - power[: len(c)]
    rho = np.abs(c) / (np.linalg.norm(chirp) * np.sqrt(win) + 1e-30)
    k = int(np.argmax(rho))
    if rho[k] < threshold:
        raise NoFrameDetected(f"correlation peak {rho[k]:.3f} below {threshold}")
    return k


def estimate_cfo(spec: OfdmFrameSpec, preamble_rx: np.ndarray) -> float:
    """CFO in Hz from the phase between the two repeated preamble halves.

    f_hat = angle(sum conj(r[n]) r[n+64]) * fs / (2 pi * 64): a received
    shift of +f Hz advances the second half by +2 pi f (64/fs), so the
    estimate comes out with the same sign as the applied shift.  The
    unambiguous range is +-fs/128; larger offsets wrap.
    """
    r = np.asarray(preamble_rx, dtype=np.complex128)
    h = spec.n_sub
    if r.shape != (spec.sc_len,):
        raise ValueError(f"preamble segment must have length {spec.sc_len}")
    p = np.sum(np.conj(r[:h]) * r[h : 2 * h])
    return float(np.angle(p) * spec.fs / (2.0 * np.pi * h))


def dft_symbols(spec: OfdmFrameSpec, body: np.ndarray) -> np.ndarray:
    """Strip per-symbol cyclic prefixes and DFT each body: 16 x 64 grid."""
    if len(body) != spec.syms_per_frame * spec.sym_len:
        raise ValueError("body length does not match the frame symbol section")
    syms = body.reshape(spec.syms_per_frame, spec.sym_len)[:, spec.cp_len :]
    return np.fft.fft(syms, axis=1) / np.sqrt(spec.n_sub)


def estimate_channel(spec: OfdmFrameSpec, layout: FrameLayout, Y: np.ndarray) -> np.ndarray:
    """Per-subcarrier complex gains for all 16 symbols.

    Pilot symbols give direct estimates Y/P; data symbols interpolate
    linearly in time between bracketing pilots, and symbols after the
    last pilot hold its estimate.
    """
    if Y.shape != (spec.syms_per_frame, spec.n_sub):
        raise ValueError("expected the full 16 x 64 DFT grid")
    if np.min(np.abs(layout.pilot_values)) < 1e-12:
        raise ValueError("unusable pilot: magnitude below 1e-12")
    pilots = np.asarray(layout.pilot_symbol_indices)
    Hp = Y[pilots] / layout.pilot_values[None, :]
    H = np.empty_like(Y)
    for s in range(spec.syms_per_frame):
        right = np.searchsorted(pilots, s)
        if right < len(pilots) and pilots[right] == s:
            H[s] = Hp[right]
        elif right >= len(pilots):
            H[s] = Hp[-1]
        else:
            p0, p1 = pilots[right - 1], pilots[right]
            a = (s - p0) / (p1 - p0)
            H[s] = (1.0 - a) * Hp[right - 1] + a * Hp[right]
    return H


def clamp_gains(H: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Push |H| up to eps while preserving direction (zero goes to eps)."""
    mag = np.abs(H)
    unit = np.where(mag > 0, H / np.where(mag > 0, mag, 1.0), 1.0 + 0j)
    return np.where(mag < eps, eps * unit, H)


def zf_equalize(Y: np.ndarray, H_hat: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    if Y.shape != H_hat.shape:
        raise ValueError("Y and H_hat must have matching shapes")
    return Y / clamp_gains(H_hat, eps)


def demodulate_frame(
    spec: OfdmFrameSpec,
    layout: FrameLayout,
    rx: np.ndarray,
    offset: int,
    cfo_hz: float,
) -> np.ndarray:
    """Equalized data symbols (768) in transmit order."""
    rx = np.asarray(rx, dtype=np.complex128)
    if offset < 0 or offset + spec.frame_len > len(rx):
        raise ValueError("offset does not leave room for a full frame")
    seg = rx[offset : offset + spec.frame_len]
    n = np.arange(spec.frame_len)
    seg = seg * np.exp(-2j * np.pi * cfo_hz * n / spec.fs)
    Y = dft_symbols(spec, seg[spec.head_len :])
    H = estimate_channel(spec, layout, Y)
    Xeq = zf_equalize(Y, H)
    return Xeq[list(layout.data_symbol_indices(spec))].reshape(-1)


def receive_frame(spec: OfdmFrameSpec, layout: FrameLayout, rx: np.ndarray) -> np.ndarray:
    """Sync, CFO-correct, and demodulate the first frame found in rx."""
    offset = detect_frame(spec, rx)
    head = rx[offset + spec.chirp_len : offset + spec.head_len]
    cfo = estimate_cfo(spec, head)
    return demodulate_frame(spec, layout, rx, offset, cfo)
