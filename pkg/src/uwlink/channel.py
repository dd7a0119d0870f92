"""Differentiable channel simulation.

Every propagation effect (frequency shift, resampling, static FIR,
time-varying impulse-response replay) is built from small linear
operators that carry an exact adjoint, so the whole channel is a fixed
linear map of the transmit stream and gradients through it are exact.
Additive noise is generated separately, seeded, and treated as a
constant in the gradient path.

Complex cotangent convention used by all adjoints here and in the rest
of the package: c_z = dL/dRe(z) + j dL/dIm(z).  For a linear map
y = A x the cotangent pullback is c_x = A^H c_y.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

MAGIC = b"SWIR\x01\x00\x00\x00"

# native transmitter rates; replay records may use different ones
FS_TX_DEFAULT = 8000.0
CARRIER_TX_DEFAULT = 14000.0


class TvirFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# linear operators


class LinearOp:
    """A fixed linear map with an exact adjoint (conjugate transpose)."""

    n_in: int
    n_out: int

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def adjoint(self, g: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class IdentityOp(LinearOp):
    def __init__(self, n: int):
        self.n_in = self.n_out = n

    def forward(self, x):
        return np.asarray(x, dtype=np.complex128)

    def adjoint(self, g):
        return np.asarray(g, dtype=np.complex128)


class ChainOp(LinearOp):
    def __init__(self, ops):
        self.ops = list(ops)
        for a, b in zip(self.ops, self.ops[1:]):
            if a.n_out != b.n_in:
                raise ValueError(f"op chain length mismatch: {a.n_out} vs {b.n_in}")
        self.n_in = self.ops[0].n_in
        self.n_out = self.ops[-1].n_out

    def forward(self, x):
        y = x
        for op in self.ops:
            y = op.forward(y)
        return y

    def adjoint(self, g):
        for op in reversed(self.ops):
            g = op.adjoint(g)
        return g


class DiagOp(LinearOp):
    """y = d * x elementwise; used for carrier shifts (unit-modulus d)."""

    def __init__(self, d: np.ndarray):
        self.d = np.asarray(d, dtype=np.complex128)
        self.n_in = self.n_out = len(self.d)

    def forward(self, x):
        return self.d * x

    def adjoint(self, g):
        return np.conj(self.d) * g


class ZeroStuffOp(LinearOp):
    def __init__(self, n_in: int, up: int):
        self.up = up
        self.n_in = n_in
        self.n_out = n_in * up

    def forward(self, x):
        y = np.zeros(self.n_out, dtype=np.complex128)
        y[:: self.up] = x
        return y

    def adjoint(self, g):
        return np.asarray(g[:: self.up], dtype=np.complex128)


class ConvFullOp(LinearOp):
    """Full convolution with fixed taps (no truncation)."""

    def __init__(self, n_in: int, taps: np.ndarray):
        self.taps = np.asarray(taps, dtype=np.complex128)
        self.n_in = n_in
        self.n_out = n_in + len(self.taps) - 1

    def forward(self, x):
        return np.convolve(x, self.taps)

    def adjoint(self, g):
        m = len(self.taps)
        full = np.convolve(g, np.conj(self.taps)[::-1])
        return full[m - 1 : m - 1 + self.n_in]


class FirTruncOp(LinearOp):
    """Full convolution truncated to the input length (Toeplitz apply)."""

    def __init__(self, n_in: int, taps: np.ndarray):
        self.taps = np.asarray(taps, dtype=np.complex128)
        if self.taps.size == 0 or not np.all(np.isfinite(self.taps)):
            raise ValueError("FIR taps must be nonempty and finite")
        self.n_in = self.n_out = n_in

    def forward(self, x):
        return np.convolve(x, self.taps)[: self.n_in]

    def adjoint(self, g):
        m = len(self.taps)
        full = np.convolve(g, np.conj(self.taps)[::-1])
        return full[m - 1 : m - 1 + self.n_in]


class StrideSliceOp(LinearOp):
    """y[k] = x[start + k*step]."""

    def __init__(self, n_in: int, start: int, step: int, n_out: int):
        if start + step * (n_out - 1) >= n_in:
            raise ValueError("stride slice reads past the input")
        self.start, self.step = start, step
        self.n_in, self.n_out = n_in, n_out

    def forward(self, x):
        return np.asarray(
            x[self.start : self.start + self.step * self.n_out : self.step],
            dtype=np.complex128,
        )

    def adjoint(self, g):
        out = np.zeros(self.n_in, dtype=np.complex128)
        out[self.start : self.start + self.step * self.n_out : self.step] = g
        return out


class CropPadOp(LinearOp):
    """Crop to n_out, or zero-pad if the input is shorter."""

    def __init__(self, n_in: int, n_out: int):
        self.n_in, self.n_out = n_in, n_out

    def forward(self, x):
        if self.n_out <= self.n_in:
            return np.asarray(x[: self.n_out], dtype=np.complex128)
        return np.concatenate(
            [x, np.zeros(self.n_out - self.n_in, dtype=np.complex128)]
        )

    def adjoint(self, g):
        if self.n_out <= self.n_in:
            out = np.zeros(self.n_in, dtype=np.complex128)
            out[: self.n_out] = g
            return out
        return np.asarray(g[: self.n_in], dtype=np.complex128)


class ResampleLinearOp(LinearOp):
    """Two-point linear interpolation at fractional positions n/ratio.

    Each output sample is a convex combination of at most two inputs, so
    the map is sparse linear with real weights.
    """

    def __init__(self, n_in: int, ratio: float):
        if ratio <= 0:
            raise ValueError("rate ratio must be positive")
        if n_in < 2:
            raise ValueError("need at least 2 samples to interpolate")
        self.n_in = n_in
        self.n_out = int(np.floor(n_in * ratio))
        pos = np.arange(self.n_out) / ratio
        i0 = np.minimum(np.floor(pos).astype(np.int64), n_in - 1)
        frac = pos - i0
        self.i0 = i0
        self.i1 = np.minimum(i0 + 1, n_in - 1)
        self.w0 = 1.0 - frac
        self.w1 = frac

    def forward(self, x):
        x = np.asarray(x, dtype=np.complex128)
        return self.w0 * x[self.i0] + self.w1 * x[self.i1]

    def adjoint(self, g):
        out = np.zeros(self.n_in, dtype=np.complex128)
        np.add.at(out, self.i0, self.w0 * g)
        np.add.at(out, self.i1, self.w1 * g)
        return out


def design_resample_lowpass(up: int, down: int) -> np.ndarray:
    """Windowed-sinc anti-alias filter for a rational resampler.

    Kaiser window beta=8, 64*max(up,down)+1 taps, cutoff at
    min(1/up, 1/down) of the upsampled Nyquist, gain up to restore
    amplitude after zero-stuffing.  For up=down=1 the sinc lands on its
    integer zeros and the filter is an exact unit delta.
    """
    ntaps = 64 * max(up, down) + 1
    fc = 0.5 * min(1.0 / up, 1.0 / down)  # cycles/sample at the high rate
    n = np.arange(ntaps) - (ntaps - 1) // 2
    h = 2.0 * fc * np.sinc(2.0 * fc * n)
    h *= np.kaiser(ntaps, 8.0)
    return h * up


class ResamplePolyOp(ChainOp):
    """Rational-rate polyphase resampler: zero-stuff, windowed-sinc
    low-pass, strided decimation with group-delay compensation."""

    def __init__(self, n_in: int, up: int, down: int):
        if up < 1 or down < 1:
            raise ValueError("up and down must be >= 1")
        g = np.gcd(up, down)
        up, down = up // g, down // g
        self.up, self.down = up, down
        h = design_resample_lowpass(up, down)
        d0 = (len(h) - 1) // 2
        n_hi = n_in * up
        n_out = n_hi // down
        super().__init__(
            [
                ZeroStuffOp(n_in, up),
                ConvFullOp(n_hi, h),
                StrideSliceOp(n_hi + len(h) - 1, d0, down, n_out),
            ]
        )


class TvConvOp(LinearOp):
    """Time-varying convolution y[n] = sum_m H[t(n), m] x[n-m] with
    piecewise-constant tap rows selected by t(n) = floor(n/(dt*fs))."""

    def __init__(self, n_in: int, H: np.ndarray, t_idx: np.ndarray):
        self.H = np.asarray(H, dtype=np.complex128)
        self.t_idx = np.asarray(t_idx, dtype=np.int64)
        if len(self.t_idx) != n_in:
            raise ValueError("t_idx must cover the input")
        self.n_in = self.n_out = n_in

    def forward(self, x):
        x = np.asarray(x, dtype=np.complex128)
        n = self.n_in
        y = np.zeros(n, dtype=np.complex128)
        for m in range(self.H.shape[1]):
            if m >= n:
                break
            y[m:] += self.H[self.t_idx[m:], m] * x[: n - m]
        return y

    def adjoint(self, g):
        g = np.asarray(g, dtype=np.complex128)
        n = self.n_in
        out = np.zeros(n, dtype=np.complex128)
        for m in range(self.H.shape[1]):
            if m >= n:
                break
            out[: n - m] += np.conj(self.H[self.t_idx[m:], m]) * g[m:]
        return out


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class TvirRecord:
    """Replay recording: T impulse responses of M taps each, refreshed
    every dt seconds, captured at fs_channel around carrier_hz."""

    fs_channel: float
    carrier_hz: float
    dt: float
    H: np.ndarray

    def __post_init__(self):
        H = np.ascontiguousarray(np.asarray(self.H, dtype=np.complex128))
        if H.ndim != 2 or H.shape[0] < 1 or H.shape[1] < 1:
            raise TvirFormatError("H must be a T x M matrix with T, M >= 1")
        if not np.all(np.isfinite(H)):
            raise TvirFormatError("non-finite tap in TVIR")
        if self.fs_channel <= 0 or self.dt <= 0:
            raise TvirFormatError("fs_channel and dt must be positive")
        H.setflags(write=False)
        object.__setattr__(self, "H", H)

    @property
    def T(self) -> int:
        return self.H.shape[0]

    @property
    def M(self) -> int:
        return self.H.shape[1]

    @property
    def duration_s(self) -> float:
        return self.T * self.dt

    @property
    def delay_spread_s(self) -> float:
        return self.M / self.fs_channel


def load_tvir(path) -> TvirRecord:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(MAGIC) or raw[: len(MAGIC)] != MAGIC:
        raise TvirFormatError(f"{path}: bad magic at byte offset 0")
    hdr = len(MAGIC) + 8 * 3 + 4 * 2
    if len(raw) < hdr:
        raise TvirFormatError(f"{path}: truncated header at byte offset {len(raw)}")
    fs, carrier, dt = struct.unpack_from("<ddd", raw, len(MAGIC))
    T, M = struct.unpack_from("<II", raw, len(MAGIC) + 24)
    need = hdr + 8 * T * M
    if len(raw) != need:
        raise TvirFormatError(
            f"{path}: truncated payload at byte offset {len(raw)} (expected {need} bytes)"
        )
    flat = np.frombuffer(raw, dtype="<f4", count=2 * T * M, offset=hdr)
    H = flat[0::2].astype(np.float64) + 1j * flat[1::2].astype(np.float64)
    return TvirRecord(fs_channel=fs, carrier_hz=carrier, dt=dt, H=H.reshape(T, M))


def save_tvir(rec: TvirRecord, path) -> None:
    """Write SWIR1.  This doubles as the importer target: convert an
    external recording by building a TvirRecord from its impulse-response
    matrix and sampling metadata, then calling save_tvir."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<ddd", rec.fs_channel, rec.carrier_hz, rec.dt))
        f.write(struct.pack("<II", rec.T, rec.M))
        inter = np.empty(2 * rec.T * rec.M, dtype="<f4")
        inter[0::2] = rec.H.real.reshape(-1)
        inter[1::2] = rec.H.imag.reshape(-1)
        f.write(inter.tobytes())


@dataclass
class ChannelModel:
    """One of: ideal, awgn, fir (static taps), tvir-replay."""

    kind: str
    snr_db: float = np.inf
    taps: np.ndarray | None = None
    tvir: TvirRecord | None = None
    seed: int = 0

    def __post_init__(self):
        kinds = ("ideal", "awgn", "fir", "tvir-replay")
        if self.kind not in kinds:
            raise ValueError(f"unknown channel kind {self.kind!r}")
        if not (np.isfinite(self.snr_db) or self.snr_db == np.inf):
            raise ValueError("snr_db must be finite or +inf")
        if (self.taps is not None) and self.kind != "fir":
            raise ValueError("taps only valid for fir kind")
        if (self.tvir is not None) and self.kind != "tvir-replay":
            raise ValueError("tvir only valid for tvir-replay kind")
        if self.kind == "fir":
            if self.taps is None:
                raise ValueError("fir kind requires taps")
            self.taps = np.asarray(self.taps, dtype=np.complex128)
            if self.taps.size == 0 or not np.all(np.isfinite(self.taps)):
                raise ValueError("FIR taps must be nonempty and finite")
        if self.kind == "tvir-replay" and self.tvir is None:
            raise ValueError("tvir-replay kind requires a TvirRecord")


# ---------------------------------------------------------------------------
# functional surface


def rate_fraction(fs_from: float, fs_to: float) -> tuple[int, int]:
    frac = Fraction(fs_to / fs_from).limit_denominator(64)
    if frac <= 0:
        raise ValueError("sampling rates must be positive")
    return frac.numerator, frac.denominator


def resample_linear(x: np.ndarray, rate_ratio: float) -> np.ndarray:
    return ResampleLinearOp(len(x), rate_ratio).forward(x)


def resample_polyphase(x: np.ndarray, up: int, down: int) -> np.ndarray:
    return ResamplePolyOp(len(x), up, down).forward(x)


def build_replay_op(
    n_in: int,
    tvir: TvirRecord,
    carrier_hz_tx: float = CARRIER_TX_DEFAULT,
    fs_tx: float = FS_TX_DEFAULT,
) -> LinearOp:
    """Op chain for TVIR replay: shift to the measurement carrier,
    resample to the channel rate, time-varying convolution, resample and
    shift back.  Output is cropped or padded to the input length."""
    df = carrier_hz_tx - tvir.carrier_hz
    n = np.arange(n_in)
    shift_up = DiagOp(np.exp(2j * np.pi * df * n / fs_tx))

    up, down = rate_fraction(fs_tx, tvir.fs_channel)
    to_ch = ResamplePolyOp(n_in, up, down)
    n_ch = to_ch.n_out

    block = tvir.dt * tvir.fs_channel
    limit = int(np.floor(tvir.T * block + 1e-9))
    if n_ch > limit:
        raise ValueError(
            f"TVIR shorter than signal: {n_ch} channel samples vs "
            f"{limit} covered by the recording"
        )
    t_idx = np.clip(np.floor(np.arange(n_ch) / block).astype(np.int64), 0, tvir.T - 1)
    conv = TvConvOp(n_ch, tvir.H, t_idx)

    back = ResamplePolyOp(n_ch, down, up)
    fit = CropPadOp(back.n_out, n_in)
    shift_down = DiagOp(np.exp(-2j * np.pi * df * n / fs_tx))
    return ChainOp([shift_up, to_ch, conv, back, fit, shift_down])


def build_propagation_op(
    model: ChannelModel,
    n_in: int,
    carrier_hz_tx: float = CARRIER_TX_DEFAULT,
    fs_tx: float = FS_TX_DEFAULT,
) -> LinearOp:
    """The noiseless (linear) part of a channel model as one operator."""
    if model.kind in ("ideal", "awgn"):
        return IdentityOp(n_in)
    if model.kind == "fir":
        return FirTruncOp(n_in, model.taps)
    return build_replay_op(n_in, model.tvir, carrier_hz_tx, fs_tx)


def replay_tvir(
    x: np.ndarray,
    tvir: TvirRecord,
    carrier_hz_tx: float = CARRIER_TX_DEFAULT,
    fs_tx: float = FS_TX_DEFAULT,
) -> np.ndarray:
    if len(x) == 0:
        raise ValueError("empty input stream")
    return build_replay_op(len(x), tvir, carrier_hz_tx, fs_tx).forward(x)


def apply_fir(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    return FirTruncOp(len(x), taps).forward(x)


def noise_sigma(x: np.ndarray, snr_db: float) -> float:
    """Per-sample complex noise std dev for the requested SNR, referenced
    to the mean power of the stream the noise will be added to."""
    p = float(np.mean(np.abs(x) ** 2))
    return float(np.sqrt(p / 10.0 ** (snr_db / 10.0)))


def draw_noise(n: int, sigma: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return (sigma / np.sqrt(2.0)) * (
        rng.standard_normal(n) + 1j * rng.standard_normal(n)
    )


def apply_awgn(x: np.ndarray, snr_db: float, seed: int) -> np.ndarray:
    if len(x) == 0:
        raise ValueError("empty input stream")
    if snr_db == np.inf:
        return np.asarray(x, dtype=np.complex128)
    return x + draw_noise(len(x), noise_sigma(x, snr_db), seed)


def apply_channel(
    model: ChannelModel,
    x: np.ndarray,
    snr_db_override: float | None = None,
    carrier_hz_tx: float = CARRIER_TX_DEFAULT,
    fs_tx: float = FS_TX_DEFAULT,
) -> np.ndarray:
    """Dispatch: propagation effect for the model kind, then AWGN at the
    model's SNR (post-propagation reference power)."""
    snr = model.snr_db if snr_db_override is None else snr_db_override
    y = build_propagation_op(model, len(x), carrier_hz_tx, fs_tx).forward(x)
    if model.kind == "ideal" or snr == np.inf:
        return y
    return apply_awgn(y, snr, model.seed)
