"""Optimization loop for the waveform bank.

Pulls token batches from streams (or draws them uniformly), runs the
differentiable link forward/backward, and applies SGD or Adam updates to
the bank parameters.  Every per-step random choice (batch, SNR draw,
channel noise) is derived from ``(config.seed, step)`` alone, so a run
resumed from a checkpoint at step s reproduces the uninterrupted run
exactly.

Checkpoints are a pair of files per step: the bank in its standard
binary format plus an ``.opt.npz`` sidecar holding optimizer state.
Loss history is a list of ``(step, loss, snr_db)`` rows, written as CSV.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelModel
from .grad import GradientSet, backward, forward_loss
from .ofdm import FrameLayout, OfdmFrameSpec
from .wavebank import WavebankParams, load_wavebank, save_wavebank

TS_MAGIC = b"SWTS\x01\x00\x00\x00"

DEFAULT_SNR_SCHEDULE = tuple((float(s), 1.0) for s in (5, 10, 15, 20, 25, 30))


class TrainDivergence(RuntimeError):
    """Raised when the loss goes non-finite; checkpoints are kept."""


@dataclass(frozen=True)
class TokenStream:
    """A flat token sequence grouped into fixed-length frames."""

    K: int
    tokens: np.ndarray
    frame_len: int = 16

    def __post_init__(self):
        toks = np.ascontiguousarray(self.tokens, dtype=np.uint16)
        object.__setattr__(self, "tokens", toks)
        if self.K < 1:
            raise ValueError(f"K must be positive, got {self.K}")
        if self.frame_len < 1:
            raise ValueError(f"frame_len must be positive, got {self.frame_len}")
        if toks.size % self.frame_len != 0:
            raise ValueError(
                f"stream length {toks.size} is not a multiple of "
                f"frame_len {self.frame_len}"
            )
        if toks.size and int(toks.max()) >= self.K:
            raise ValueError(
                f"token {int(toks.max())} out of range for K={self.K}"
            )

    @property
    def n_frames(self) -> int:
        return self.tokens.size // self.frame_len


def save_token_stream(path: str, stream: TokenStream) -> None:
    with open(path, "wb") as fh:
        fh.write(TS_MAGIC)
        fh.write(struct.pack("<II", stream.K, stream.frame_len))
        fh.write(struct.pack("<Q", stream.tokens.size))
        fh.write(stream.tokens.astype("<u2").tobytes())


def load_token_stream(path: str) -> TokenStream:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != TS_MAGIC:
        raise ValueError(f"{path}: bad magic {blob[:8]!r}")
    K, frame_len = struct.unpack_from("<II", blob, 8)
    (count,) = struct.unpack_from("<Q", blob, 16)
    need = 24 + 2 * count
    if len(blob) < need:
        raise ValueError(f"{path}: truncated, need {need} bytes got {len(blob)}")
    tokens = np.frombuffer(blob, dtype="<u2", count=count, offset=24)
    return TokenStream(K=K, tokens=tokens.copy(), frame_len=frame_len)


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    channel: ChannelModel
    relevance: np.ndarray
    batch_frames: int = 4
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    snr_schedule: tuple = DEFAULT_SNR_SCHEDULE
    sampling: str = "uniform"
    seed: int = 0
    checkpoint_every: int = 0
    checkpoint_dir: str | None = None
    frame_spec: OfdmFrameSpec = field(default_factory=OfdmFrameSpec)
    layout_seed: int = 7

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_frames < 1:
            raise ValueError(f"batch_frames must be >= 1, got {self.batch_frames}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.sampling not in ("uniform", "sequential"):
            raise ValueError(f"unknown sampling mode {self.sampling!r}")
        if not self.snr_schedule:
            raise ValueError("snr_schedule must be nonempty")
        for snr, w in self.snr_schedule:
            if not w > 0:
                raise ValueError(f"snr_schedule weight must be positive, got {w}")
        R = np.asarray(self.relevance, dtype=np.float64)
        object.__setattr__(self, "relevance", R)
        if self.checkpoint_every > 0 and self.checkpoint_dir is None:
            raise ValueError("checkpoint_every set but no checkpoint_dir")

    def layout(self) -> FrameLayout:
        return FrameLayout.from_seed(self.frame_spec, seed=self.layout_seed)


@dataclass
class OptState:
    """Adam moment accumulators; unused (but carried) for SGD."""

    t: int
    m_real: np.ndarray
    v_real: np.ndarray
    m_imag: np.ndarray
    v_imag: np.ndarray
    m_tau: float
    v_tau: float

    @classmethod
    def zeros(cls, K: int, L: int) -> "OptState":
        z = lambda: np.zeros((K, L))
        return cls(t=0, m_real=z(), v_real=z(), m_imag=z(), v_imag=z(),
                   m_tau=0.0, v_tau=0.0)


def assemble_batch(
    streams,
    batch_frames: int,
    sampling: str = "uniform",
    seed: int = 0,
    K: int | None = None,
    frame_len: int = 16,
) -> np.ndarray:
    """Return ``batch_frames * frame_len`` token indices.

    ``sequential`` walks the concatenated streams in file order, treating
    ``seed`` as the batch number (wrapping at the end).  ``uniform``
    draws i.i.d. tokens from range(K); K is taken from the first stream
    when not given explicitly.
    """
    n = batch_frames * frame_len
    if sampling == "sequential":
        if not streams:
            raise ValueError("sequential sampling needs at least one stream")
        pool = np.concatenate([s.tokens for s in streams]).astype(np.int64)
        if pool.size == 0:
            raise ValueError("sequential sampling needs a nonempty stream")
        start = (seed * n) % pool.size
        idx = (start + np.arange(n)) % pool.size
        return pool[idx]
    if sampling == "uniform":
        if K is None:
            if not streams:
                raise ValueError("uniform sampling needs K or a stream to read it from")
            K = streams[0].K
        rng = np.random.default_rng(seed)
        return rng.integers(0, K, size=n, dtype=np.int64)
    raise ValueError(f"unknown sampling mode {sampling!r}")


def update(
    params: WavebankParams,
    grads: GradientSet,
    state: OptState,
    config: TrainConfig,
) -> WavebankParams:
    """Apply one SGD or Adam step; mutates ``state``, returns new params."""
    if not grads.all_finite():
        raise ValueError("non-finite gradient; step rejected")
    lr = config.learning_rate
    out = params.copy()
    if config.optimizer == "sgd":
        out.F_real -= lr * grads.dF_real
        out.F_imag -= lr * grads.dF_imag
        out.log_tau -= lr * grads.d_log_tau
        return out

    b1, b2, eps = config.beta1, config.beta2, config.eps
    state.t += 1
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t

    def adam(theta, g, m, v):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        return theta - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)

    out.F_real = adam(out.F_real, grads.dF_real, state.m_real, state.v_real)
    out.F_imag = adam(out.F_imag, grads.dF_imag, state.m_imag, state.v_imag)
    m = b1 * state.m_tau + (1 - b1) * grads.d_log_tau
    v = b2 * state.v_tau + (1 - b2) * grads.d_log_tau**2
    state.m_tau, state.v_tau = m, v
    out.log_tau = out.log_tau - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return out


def _step_rng(config_seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((config_seed, step)))


def _pick_snr(rng: np.random.Generator, schedule) -> float:
    snrs = np.array([s for s, _ in schedule], dtype=np.float64)
    w = np.array([w for _, w in schedule], dtype=np.float64)
    return float(rng.choice(snrs, p=w / w.sum()))


def checkpoint_paths(ckpt_dir: str, step: int) -> tuple[str, str]:
    base = os.path.join(ckpt_dir, f"step_{step:06d}")
    return base + ".swwb", base + ".opt.npz"


def save_checkpoint(
    ckpt_dir: str, step: int, params: WavebankParams, state: OptState
) -> None:
    os.makedirs(ckpt_dir, exist_ok=True)
    bank_path, opt_path = checkpoint_paths(ckpt_dir, step)
    save_wavebank(params, bank_path)
    # the bank file rounds to f32; the sidecar keeps exact f64 params so
    # a resumed run reproduces the uninterrupted one bit for bit
    np.savez(
        opt_path,
        t=state.t,
        m_real=state.m_real,
        v_real=state.v_real,
        m_imag=state.m_imag,
        v_imag=state.v_imag,
        m_tau=state.m_tau,
        v_tau=state.v_tau,
        p_real=params.F_real,
        p_imag=params.F_imag,
        p_log_tau=params.log_tau,
    )


def load_checkpoint(ckpt_dir: str, step: int) -> tuple[WavebankParams, OptState]:
    bank_path, opt_path = checkpoint_paths(ckpt_dir, step)
    d = np.load(opt_path)
    if "p_real" in d:
        params = WavebankParams(
            F_real=d["p_real"].copy(),
            F_imag=d["p_imag"].copy(),
            log_tau=float(d["p_log_tau"]),
        )
    else:
        params = load_wavebank(bank_path)
    state = OptState(
        t=int(d["t"]),
        m_real=d["m_real"],
        v_real=d["v_real"],
        m_imag=d["m_imag"],
        v_imag=d["v_imag"],
        m_tau=float(d["m_tau"]),
        v_tau=float(d["v_tau"]),
    )
    return params, state


def train(
    params: WavebankParams,
    config: TrainConfig,
    streams=None,
    start_step: int = 0,
    opt_state: OptState | None = None,
    history: list | None = None,
):
    """Run the optimization loop; returns (trained params, history).

    ``start_step``/``opt_state``/``history`` allow resuming from a
    checkpoint: because every step reseeds from (config.seed, step),
    the continuation is identical to an uninterrupted run.
    """
    K = params.K
    if config.relevance.shape != (K, K):
        raise ValueError(
            f"relevance is {config.relevance.shape}, bank has K={K}"
        )
    if streams:
        for s in streams:
            if s.K != K:
                raise ValueError(f"stream K={s.K} does not match bank K={K}")
    spec = config.frame_spec
    layout = config.layout()
    state = opt_state if opt_state is not None else OptState.zeros(K, params.L)
    hist = list(history) if history is not None else []
    last_ckpt = None

    for step in range(start_step, config.steps):
        rng = _step_rng(config.seed, step)
        snr = _pick_snr(rng, config.snr_schedule)
        batch_seed = step if config.sampling == "sequential" else int(
            rng.integers(0, 2**63 - 1)
        )
        batch = assemble_batch(
            streams,
            config.batch_frames,
            config.sampling,
            seed=batch_seed,
            K=K,
        )
        fwd_seed = int(rng.integers(0, 2**63 - 1))
        loss, tape, _ = forward_loss(
            params,
            batch,
            config.relevance,
            spec,
            layout,
            config.channel,
            seed=fwd_seed,
            snr_db_override=snr,
        )
        if not np.isfinite(loss):
            raise TrainDivergence(
                f"non-finite loss {loss!r} at step {step} "
                f"(snr={snr} dB, last checkpoint: {last_ckpt})"
            )
        grads = backward(tape)
        params = update(params, grads, state, config)
        hist.append((step, float(loss), snr))
        if (
            config.checkpoint_every > 0
            and (step + 1) % config.checkpoint_every == 0
        ):
            save_checkpoint(config.checkpoint_dir, step + 1, params, state)
            last_ckpt = checkpoint_paths(config.checkpoint_dir, step + 1)[0]
    return params, hist


def save_history(path: str, history) -> None:
    with open(path, "w") as fh:
        fh.write("step,loss,snr_db\n")
        for step, loss, snr in history:
            fh.write(f"{step},{loss!r},{snr!r}\n")


def load_history(path: str) -> list:
    out = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "step,loss,snr_db":
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in fh:
            s, l, n = line.strip().split(",")
            out.append((int(s), float(l), float(n)))
    return out
