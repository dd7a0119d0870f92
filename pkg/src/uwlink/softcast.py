"""Analog image transmission: power-scaled DCT chunks sent as raw I/Q.

The encoder never quantizes.  An 8x8 block DCT groups same-position
coefficients across blocks into 64 chunks; the highest-energy chunks are
kept whole until the symbol budget is filled, scaled by lambda^(-1/4)
under a unit total-power constraint, and packed two reals per complex
slot.  The decoder applies per-chunk LLSE shrinkage using side
information (chunk statistics) that is assumed to arrive intact.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.fft import dctn, idctn

from .channel import ChannelModel, apply_channel
from .grad import _pad_margin
from .ofdm import (
    FrameLayout,
    OfdmFrameSpec,
    demodulate_frame,
    detect_frame,
    estimate_cfo,
    modulate_frame,
)

BLOCK = 8
N_CHUNKS = BLOCK * BLOCK


@dataclass(frozen=True)
class SoftcastMeta:
    """Side information the receiver needs; assumed delivered intact."""

    shape: tuple
    kept: np.ndarray  # ascending chunk indices actually sent
    gains: np.ndarray  # per kept chunk
    variances: np.ndarray  # all 64 chunk variances
    means: np.ndarray  # all 64 chunk means
    n_blocks: int
    n_real: int  # real coefficients before I/Q packing


def _to_chunks(image: np.ndarray) -> np.ndarray:
    """(64, n_blocks) matrix: row j holds DCT coefficient j of every block."""
    h, w = image.shape
    blocks = (
        image.reshape(h // BLOCK, BLOCK, w // BLOCK, BLOCK)
        .transpose(0, 2, 1, 3)
        .reshape(-1, BLOCK, BLOCK)
    )
    coeffs = dctn(blocks, axes=(1, 2), norm="ortho")
    return coeffs.reshape(-1, N_CHUNKS).T.copy()


def _from_chunks(chunks: np.ndarray, shape: tuple) -> np.ndarray:
    h, w = shape
    blocks = idctn(
        chunks.T.reshape(-1, BLOCK, BLOCK), axes=(1, 2), norm="ortho"
    )
    return (
        blocks.reshape(h // BLOCK, w // BLOCK, BLOCK, BLOCK)
        .transpose(0, 2, 1, 3)
        .reshape(h, w)
    )


def softcast_encode(image, budget: int):
    """Encode a luminance image into at most `budget` complex symbols.

    Returns (symbols, meta).  Chunks are kept whole, so the number of
    symbols is a multiple of n_blocks/2 and may undershoot the budget.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {image.shape}")
    h, w = image.shape
    if h % BLOCK or w % BLOCK:
        raise ValueError(f"image sides must be multiples of {BLOCK}, got {h}x{w}")
    if not np.all(np.isfinite(image)):
        raise ValueError("non-finite image sample")

    chunks = _to_chunks(image)
    n_blocks = chunks.shape[1]
    means = chunks.mean(axis=1)
    centered = chunks - means[:, None]
    lam = np.mean(centered**2, axis=1)

    n_kept = min(int(2 * budget) // n_blocks, N_CHUNKS)
    if n_kept < 1:
        raise ValueError(
            f"budget {budget} holds no whole chunk of {n_blocks} coefficients"
        )
    kept = np.sort(np.argsort(-lam, kind="stable")[:n_kept])

    n_real = n_kept * n_blocks
    n_sym = -(-n_real // 2)
    lam_f = np.maximum(lam[kept], 1e-20)
    raw_gain = lam_f**-0.25
    sent_power = np.sum(raw_gain**2 * lam[kept]) * n_blocks
    if sent_power > 0:
        gains = raw_gain * np.sqrt(n_sym / sent_power)
    else:
        gains = np.zeros(n_kept)  # constant image: nothing beyond the means

    x = (gains[:, None] * centered[kept]).reshape(-1)
    if n_real % 2:
        x = np.concatenate([x, [0.0]])
    symbols = x[0::2] + 1j * x[1::2]
    meta = SoftcastMeta(
        shape=(h, w),
        kept=kept,
        gains=gains,
        variances=lam,
        means=means,
        n_blocks=n_blocks,
        n_real=n_real,
    )
    return symbols, meta


def softcast_decode(symbols, meta: SoftcastMeta, noise_var: float = 0.0) -> np.ndarray:
    """LLSE reconstruction; noise_var is per complex symbol (0 = clean)."""
    symbols = np.asarray(symbols, dtype=np.complex128)
    n_sym = -(-meta.n_real // 2)
    if symbols.size < n_sym:
        raise ValueError(f"need {n_sym} symbols, got {symbols.size}")
    x = np.empty(2 * n_sym)
    x[0::2] = symbols[:n_sym].real
    x[1::2] = symbols[:n_sym].imag
    y = x[: meta.n_real].reshape(len(meta.kept), meta.n_blocks)

    nv_real = max(float(noise_var), 0.0) / 2.0
    g = meta.gains
    lam = meta.variances[meta.kept]
    shrink = g * lam / (g * g * lam + nv_real + 1e-30)

    chunks = np.repeat(meta.means[:, None], meta.n_blocks, axis=1)
    chunks[meta.kept] += shrink[:, None] * y
    return _from_chunks(chunks, meta.shape)


@dataclass
class SoftcastResult:
    reconstructed: np.ndarray
    n_frames: int
    n_symbols: int


def run_softcast_pipeline(
    image,
    budget: int,
    spec: OfdmFrameSpec,
    layout: FrameLayout,
    model: ChannelModel,
    seed: int = 0,
    snr_db_override: float | None = None,
) -> SoftcastResult:
    """Carry the analog symbols over the OFDM link and reconstruct."""
    symbols, meta = softcast_encode(image, budget)

    n_frames = -(-symbols.size // spec.data_slots)
    slots = np.zeros(n_frames * spec.data_slots, dtype=np.complex128)
    slots[: symbols.size] = symbols
    frames = slots.reshape(n_frames, spec.data_slots)

    snr_db = model.snr_db if snr_db_override is None else snr_db_override
    pad = _pad_margin(model, spec.fs)
    rng = np.random.default_rng(seed)
    eq_slots = []
    noise_vars = []
    for f in range(n_frames):
        tx = modulate_frame(spec, layout, frames[f])
        padded_tx = np.concatenate([tx, np.zeros(pad, dtype=np.complex128)])
        frame_model = replace(model, seed=int(rng.integers(0, 2**63 - 1)))
        rx = apply_channel(
            frame_model,
            padded_tx,
            snr_db_override=snr_db,
            carrier_hz_tx=spec.carrier_hz,
            fs_tx=spec.fs,
        )
        offset = detect_frame(spec, rx)
        head = rx[offset + spec.chirp_len : offset + spec.head_len]
        cfo = estimate_cfo(spec, head)
        eq_slots.append(demodulate_frame(spec, layout, rx, offset, cfo))
        p_core = float(np.mean(np.abs(rx[offset : offset + spec.frame_len]) ** 2))
        if snr_db is None or snr_db == np.inf:
            noise_vars.append(0.0)
        else:
            noise_vars.append(p_core / (1.0 + 10.0 ** (snr_db / 10.0)))
    eq_all = np.concatenate(eq_slots)[: symbols.size]

    recon = softcast_decode(eq_all, meta, noise_var=float(np.mean(noise_vars)))
    return SoftcastResult(
        reconstructed=recon, n_frames=n_frames, n_symbols=int(symbols.size)
    )
