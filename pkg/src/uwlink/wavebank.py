"""Trainable token-to-waveform bank.

Each of the K tokens owns a length-L complex spectrum (stored as two real
matrices).  Synthesis is a unitary inverse DFT, so Parseval ties waveform
energy to parameter energy.  Decoding is nearest neighbour in L2 over the
synthesized bank; a temperature softmax over negative distances gives the
posterior used by the semantic cross-entropy loss.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"SWWB\x01\x00\x00\x00"
LOG_P_FLOOR = 1e-30


class WavebankFormatError(ValueError):
    pass


@dataclass
class WavebankParams:
    """Trainable parameters: spectra (K x L, split re/im) and log temperature."""

    F_real: np.ndarray
    F_imag: np.ndarray
    log_tau: float = 0.0

    def __post_init__(self):
        self.F_real = np.asarray(self.F_real, dtype=np.float64)
        self.F_imag = np.asarray(self.F_imag, dtype=np.float64)
        if self.F_real.shape != self.F_imag.shape or self.F_real.ndim != 2:
            raise ValueError("F_real and F_imag must be equal-shape 2-D matrices")
        if not (np.all(np.isfinite(self.F_real)) and np.all(np.isfinite(self.F_imag))):
            raise ValueError("non-finite bank parameter")

    @property
    def K(self) -> int:
        return self.F_real.shape[0]

    @property
    def L(self) -> int:
        return self.F_real.shape[1]

    @property
    def tau(self) -> float:
        return float(np.exp(self.log_tau))

    @property
    def F(self) -> np.ndarray:
        return self.F_real + 1j * self.F_imag

    def copy(self) -> "WavebankParams":
        return WavebankParams(
            F_real=self.F_real.copy(),
            F_imag=self.F_imag.copy(),
            log_tau=float(self.log_tau),
        )


def init_wavebank(K: int, L: int, seed: int, scheme: str = "gaussian") -> WavebankParams:
    """Seeded initialization.

    gaussian: i.i.d. complex normal spectra, each row rescaled so the
    synthesized waveform has unit mean power (Parseval: ||F row||^2 = L).
    qpsk-like: every spectral bin drawn from the four unit-modulus QPSK
    points, which gives unit mean power without rescaling.
    """
    if K < 1 or L < 1:
        raise ValueError("K and L must be >= 1")
    rng = np.random.default_rng(seed)
    if scheme == "gaussian":
        F = (rng.standard_normal((K, L)) + 1j * rng.standard_normal((K, L))) / np.sqrt(2.0)
        norms = np.linalg.norm(F, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        F = F * (np.sqrt(L) / norms)
    elif scheme == "qpsk-like":
        pts = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2.0)
        F = pts[rng.integers(0, 4, size=(K, L))]
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    return WavebankParams(F_real=F.real.copy(), F_imag=F.imag.copy(), log_tau=0.0)


def synthesize(params: WavebankParams, token: int) -> np.ndarray:
    """Unitary IDFT of one spectrum row: w[n] = (1/sqrt(L)) sum_k F[k] e^{2pi i kn/L}."""
    if not 0 <= token < params.K:
        raise IndexError(f"token {token} out of range for K={params.K}")
    row = params.F_real[token] + 1j * params.F_imag[token]
    return np.fft.ifft(row) * np.sqrt(params.L)


def synthesize_all(params: WavebankParams) -> np.ndarray:
    """K x L matrix of bank waveforms, always freshly synthesized from the
    current parameters (no cache, so updates are visible immediately)."""
    F = params.F_real + 1j * params.F_imag
    return np.fft.ifft(F, axis=1) * np.sqrt(params.L)


def encode_tokens(params: WavebankParams, tokens) -> np.ndarray:
    """Concatenate per-token waveforms into one complex symbol stream."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.size == 0:
        return np.zeros(0, dtype=np.complex128)
    if tokens.min() < 0 or tokens.max() >= params.K:
        raise IndexError("token out of range")
    W = synthesize_all(params)
    return W[tokens].reshape(-1)


def bank_distances(received: np.ndarray, W: np.ndarray) -> np.ndarray:
    """L2 distances from each received length-L block to every bank row.

    received: (..., L) complex; returns (..., K) real.  Uses the Gram
    expansion for speed; cancellation is clamped before the sqrt.
    """
    r = np.asarray(received, dtype=np.complex128)
    rr = np.sum(np.abs(r) ** 2, axis=-1)
    ww = np.sum(np.abs(W) ** 2, axis=-1)
    cross = np.real(r @ W.conj().T)
    d2 = rr[..., None] + ww - 2.0 * cross
    np.maximum(d2, 0.0, out=d2)
    return np.sqrt(d2)


def decode_nn(params: WavebankParams, received: np.ndarray):
    """Nearest-neighbour decode of one length-L block.

    Returns (token, distances).  Ties break to the lowest index.
    """
    r = np.asarray(received, dtype=np.complex128)
    if r.shape != (params.L,):
        raise ValueError(f"received block must have length {params.L}")
    if not np.all(np.isfinite(r)):
        raise ValueError("non-finite received waveform")
    W = synthesize_all(params)
    d = np.linalg.norm(r[None, :] - W, axis=1)
    return int(np.argmin(d)), d


def decode_many(params: WavebankParams, received: np.ndarray) -> np.ndarray:
    """Vectorized decode of an (N, L) batch of received blocks."""
    r = np.asarray(received, dtype=np.complex128)
    if r.ndim != 2 or r.shape[1] != params.L:
        raise ValueError(f"batch must be (N, {params.L})")
    if not np.all(np.isfinite(r)):
        raise ValueError("non-finite received waveform")
    W = synthesize_all(params)
    d = bank_distances(r, W)
    return np.argmin(d, axis=1).astype(np.int64)


def token_posterior(distances: np.ndarray, tau: float) -> np.ndarray:
    """Softmax over negative scaled distances, with max-subtraction."""
    d = np.asarray(distances, dtype=np.float64)
    z = -d / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def wavebank_loss(posterior: np.ndarray, relevance_row: np.ndarray) -> float:
    """Weighted cross entropy against a relevance row (used as-is, not
    renormalized): L = -sum_i R[i] log p_i with p clamped at 1e-30."""
    p = np.maximum(np.asarray(posterior, dtype=np.float64), LOG_P_FLOOR)
    R = np.asarray(relevance_row, dtype=np.float64)
    return float(-np.sum(R * np.log(p)))


def save_wavebank(params: WavebankParams, path) -> None:
    """Write SWWB1: magic, K, L (u32 LE), F_real then F_imag as f32 LE
    row-major, then log tau as f64 LE."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", params.K, params.L))
        f.write(np.asarray(params.F_real, dtype="<f4").tobytes())
        f.write(np.asarray(params.F_imag, dtype="<f4").tobytes())
        f.write(struct.pack("<d", float(params.log_tau)))


def load_wavebank(path) -> WavebankParams:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(MAGIC) or raw[: len(MAGIC)] != MAGIC:
        raise WavebankFormatError(f"{path}: bad magic at byte offset 0")
    if len(raw) < len(MAGIC) + 8:
        raise WavebankFormatError(f"{path}: truncated header at byte offset {len(raw)}")
    K, L = struct.unpack_from("<II", raw, len(MAGIC))
    need = len(MAGIC) + 8 + 2 * 4 * K * L + 8
    if len(raw) != need:
        raise WavebankFormatError(
            f"{path}: truncated payload at byte offset {len(raw)} (expected {need} bytes)"
        )
    off = len(MAGIC) + 8
    Fr = np.frombuffer(raw, dtype="<f4", count=K * L, offset=off).astype(np.float64)
    off += 4 * K * L
    Fi = np.frombuffer(raw, dtype="<f4", count=K * L, offset=off).astype(np.float64)
    off += 4 * K * L
    (log_tau,) = struct.unpack_from("<d", raw, off)
    return WavebankParams(
        F_real=Fr.reshape(K, L), F_imag=Fi.reshape(K, L), log_tau=log_tau
    )
