"""Digital baseline systems: token bits over BPSK or QPSK, optionally
LDPC-coded, carried on the same OFDM frames as the waveform bank.

The receiver is deliberately simple: hard decisions for uncoded runs,
and for LDPC runs the LLR confidence uses the frame-mean equalized
noise variance rather than per-subcarrier weighting (the receiver knows
the operating SNR, not the per-carrier reliability).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .channel import ChannelModel, apply_channel
from .fec import LdpcCode, ldpc_decode, ldpc_encode
from .grad import _pad_margin
from .ofdm import (
    FrameLayout,
    OfdmFrameSpec,
    demodulate_frame,
    detect_frame,
    estimate_cfo,
    modulate_frame,
)

_INV_SQRT2 = 1.0 / np.sqrt(2.0)

# cap on soft-decision confidence: zero-forcing against a noisy channel
# estimate occasionally produces hugely scaled slots whose wrong-sign
# LLRs (magnitude 100+) would be unfixable inside belief propagation
LLR_CLIP = 24.0


def bits_per_token(K: int) -> int:
    if K < 2:
        raise ValueError(f"K must be at least 2, got {K}")
    return int(np.ceil(np.log2(K)))


def tokens_to_bits(tokens, K: int) -> np.ndarray:
    """Big-endian fixed-width bit fields, one per token."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.size and (tokens.min() < 0 or tokens.max() >= K):
        raise ValueError(f"token out of range for K={K}")
    w = bits_per_token(K)
    shifts = np.arange(w - 1, -1, -1)
    return ((tokens[:, None] >> shifts) & 1).astype(np.uint8).reshape(-1)


def bits_to_tokens(bits, K: int) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.int64)
    w = bits_per_token(K)
    if bits.size % w != 0:
        raise ValueError(f"bit count {bits.size} not divisible by width {w}")
    fields = bits.reshape(-1, w)
    weights = 1 << np.arange(w - 1, -1, -1)
    toks = fields @ weights
    return np.minimum(toks, K - 1)  # corrupted fields may overflow the codebook


def map_bpsk(bits) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.int64)
    return (1.0 - 2.0 * bits).astype(np.complex128)


def map_qpsk(bits) -> np.ndarray:
    """Gray mapping: first bit sets I, second sets Q, unit symbol energy."""
    bits = np.asarray(bits, dtype=np.int64)
    if bits.size % 2 != 0:
        raise ValueError("QPSK needs an even number of bits")
    pairs = bits.reshape(-1, 2)
    return _INV_SQRT2 * ((1 - 2 * pairs[:, 0]) + 1j * (1 - 2 * pairs[:, 1]))


def demap_hard(symbols, modulation: str) -> np.ndarray:
    symbols = np.asarray(symbols, dtype=np.complex128)
    if modulation == "bpsk":
        return (symbols.real < 0).astype(np.uint8)
    if modulation == "qpsk":
        out = np.empty((symbols.size, 2), dtype=np.uint8)
        out[:, 0] = symbols.real < 0
        out[:, 1] = symbols.imag < 0
        return out.reshape(-1)
    raise ValueError(f"unknown modulation {modulation!r}")


def demap_llr(symbols, modulation: str, noise_var: float) -> np.ndarray:
    """log P(bit=0)/P(bit=1) per bit; noise_var is the total complex
    noise variance per symbol."""
    symbols = np.asarray(symbols, dtype=np.complex128)
    nv = max(float(noise_var), 1e-30)
    if modulation == "bpsk":
        return 4.0 * symbols.real / nv
    if modulation == "qpsk":
        out = np.empty((symbols.size, 2))
        out[:, 0] = 2.0 * np.sqrt(2.0) * symbols.real / nv
        out[:, 1] = 2.0 * np.sqrt(2.0) * symbols.imag / nv
        return out.reshape(-1)
    raise ValueError(f"unknown modulation {modulation!r}")


@dataclass(frozen=True)
class DigitalConfig:
    K: int
    modulation: str = "bpsk"
    fec: LdpcCode | None = None

    def __post_init__(self):
        if self.modulation not in ("bpsk", "qpsk"):
            raise ValueError(f"unknown modulation {self.modulation!r}")
        bits_per_token(self.K)  # validates K

    @property
    def bits_per_token(self) -> int:
        return bits_per_token(self.K)

    @property
    def bits_per_slot(self) -> int:
        return 2 if self.modulation == "qpsk" else 1


@dataclass
class DigitalResult:
    decoded_tokens: np.ndarray
    token_accuracy: float
    ber_pre: float
    ber_post: float
    n_frames: int
    n_bits: int


def _to_frames(symbols: np.ndarray, slots: int) -> np.ndarray:
    n_frames = -(-symbols.size // slots)
    out = np.zeros(n_frames * slots, dtype=np.complex128)
    out[: symbols.size] = symbols
    return out.reshape(n_frames, slots)


@dataclass
class DigitalTx:
    """One prepared transmission: frames of data slots plus the bit
    bookkeeping the receiver compares against."""

    tokens: np.ndarray
    info_bits: np.ndarray
    coded: np.ndarray
    frames: np.ndarray  # (n_frames, data_slots)
    n_symbols: int
    n_blocks: int


def digital_tx(
    config: DigitalConfig, tokens, spec: OfdmFrameSpec
) -> DigitalTx:
    """tokens -> bits -> (FEC) -> constellation symbols -> framed slots."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.size == 0:
        raise ValueError("empty token batch")
    info_bits = tokens_to_bits(tokens, config.K)

    n_blocks = 0
    if config.fec is not None:
        code = config.fec
        n_blocks = -(-info_bits.size // code.k)
        padded = np.zeros(n_blocks * code.k, dtype=np.uint8)
        padded[: info_bits.size] = info_bits
        coded = np.concatenate(
            [ldpc_encode(code, padded[b * code.k : (b + 1) * code.k])
             for b in range(n_blocks)]
        )
    else:
        coded = info_bits

    if config.modulation == "qpsk" and coded.size % 2:
        coded_mod = np.concatenate([coded, np.zeros(1, dtype=np.uint8)])
    else:
        coded_mod = coded
    symbols = (map_qpsk if config.modulation == "qpsk" else map_bpsk)(coded_mod)
    return DigitalTx(
        tokens=tokens,
        info_bits=info_bits,
        coded=coded,
        frames=_to_frames(symbols, spec.data_slots),
        n_symbols=int(symbols.size),
        n_blocks=n_blocks,
    )


def digital_rx(
    config: DigitalConfig, tx: DigitalTx, eq_slots: np.ndarray, noise_var: float
) -> DigitalResult:
    """Equalized slots -> bits -> (FEC decode) -> tokens, scored against
    what digital_tx sent."""
    eq_all = np.asarray(eq_slots, dtype=np.complex128).reshape(-1)[: tx.n_symbols]

    hard = demap_hard(eq_all, config.modulation)[: tx.coded.size]
    ber_pre = float(np.mean(hard != tx.coded)) if tx.coded.size else 0.0

    if config.fec is not None:
        code = config.fec
        llrs = demap_llr(eq_all, config.modulation, noise_var)[: tx.coded.size]
        llrs = np.clip(llrs, -LLR_CLIP, LLR_CLIP)
        dec_bits = np.concatenate(
            [ldpc_decode(code, llrs[b * code.n : (b + 1) * code.n])[0]
             for b in range(tx.n_blocks)]
        )[: tx.info_bits.size]
    else:
        dec_bits = hard[: tx.info_bits.size]
    ber_post = float(np.mean(dec_bits != tx.info_bits))

    decoded = bits_to_tokens(dec_bits, config.K)
    acc = float(np.mean(decoded == tx.tokens))
    return DigitalResult(
        decoded_tokens=decoded,
        token_accuracy=acc,
        ber_pre=ber_pre,
        ber_post=ber_post,
        n_frames=tx.frames.shape[0],
        n_bits=int(tx.info_bits.size),
    )


def run_digital_pipeline(
    config: DigitalConfig,
    tokens,
    spec: OfdmFrameSpec,
    layout: FrameLayout,
    model: ChannelModel,
    seed: int = 0,
    snr_db_override: float | None = None,
) -> DigitalResult:
    """tokens -> bits -> (FEC) -> symbols -> OFDM frames -> channel ->
    equalized slots -> bits -> (FEC decode) -> tokens."""
    tx = digital_tx(config, tokens, spec)

    snr_db = model.snr_db if snr_db_override is None else snr_db_override
    pad = _pad_margin(model, spec.fs)
    rng = np.random.default_rng(seed)
    eq_slots = []
    noise_vars = []
    for f in range(tx.frames.shape[0]):
        wave = modulate_frame(spec, layout, tx.frames[f])
        padded_tx = np.concatenate([wave, np.zeros(pad, dtype=np.complex128)])
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
        eq = demodulate_frame(spec, layout, rx, offset, cfo)
        eq_slots.append(eq)
        # receiver-side noise floor: in-frame rx power split by known SNR
        p_core = float(np.mean(np.abs(rx[offset : offset + spec.frame_len]) ** 2))
        if snr_db is None or snr_db == np.inf:
            noise_vars.append(1e-12)
        else:
            noise_vars.append(p_core / (1.0 + 10.0 ** (snr_db / 10.0)))
    return digital_rx(config, tx, np.concatenate(eq_slots),
                      float(np.mean(noise_vars)))
