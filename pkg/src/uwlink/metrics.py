"""Evaluation quantities for link experiments.

Covers exact token match, embedding-space error distance, the
throughput-fair frame-rate accounting used to compare systems at equal
channel cost, and image quality scores for externally supplied frames.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import correlate

from .codebook import Codebook
from .ofdm import OfdmFrameSpec

METRICS_SCHEMA = "uwlink-metrics-v1"
_COLUMNS = (
    "channel_id",
    "snr_db",
    "system_id",
    "token_accuracy",
    "semantic_l2",
    "ber",
    "fps_equivalent",
    "psnr_db",
    "ssim",
)


def token_accuracy(sent, received) -> float:
    sent = np.asarray(sent, dtype=np.int64)
    received = np.asarray(received, dtype=np.int64)
    if sent.shape != received.shape or sent.ndim != 1:
        raise ValueError(f"token arrays must match 1-D: {sent.shape} vs {received.shape}")
    if sent.size == 0:
        raise ValueError("empty token arrays")
    return float(np.mean(sent == received))


def semantic_l2(cb: Codebook, sent, received) -> float:
    """Mean embedding distance between what went in and what came out."""
    sent = np.asarray(sent, dtype=np.int64)
    received = np.asarray(received, dtype=np.int64)
    if sent.shape != received.shape or sent.ndim != 1:
        raise ValueError(f"token arrays must match 1-D: {sent.shape} vs {received.shape}")
    if sent.size == 0:
        raise ValueError("empty token arrays")
    for arr in (sent, received):
        if arr.min() < 0 or arr.max() >= cb.K:
            raise ValueError(f"token index out of range for K={cb.K}")
    diff = cb.E[sent] - cb.E[received]
    return float(np.mean(np.linalg.norm(diff, axis=1)))


def slot_cost(bits_per_token: float, modulation: str = "bpsk",
              fec_rate: float | None = None) -> float:
    """OFDM data slots one token occupies under a digital configuration."""
    if bits_per_token <= 0:
        raise ValueError("bits_per_token must be positive")
    if modulation not in ("bpsk", "qpsk"):
        raise ValueError(f"unknown modulation {modulation!r}")
    if fec_rate is not None and not 0.0 < fec_rate <= 1.0:
        raise ValueError(f"fec_rate must be in (0, 1], got {fec_rate}")
    cost = float(bits_per_token)
    if fec_rate is not None:
        cost /= fec_rate
    if modulation == "qpsk":
        cost /= 2.0
    return cost


def fps_equivalent(spec: OfdmFrameSpec, slots_per_token: float,
                   tokens_per_frame: int = 16) -> float:
    """Video frames per second a per-token slot cost sustains on this link."""
    if slots_per_token <= 0 or tokens_per_frame <= 0:
        raise ValueError("slot cost and tokens per frame must be positive")
    return spec.raw_bps / (float(slots_per_token) * tokens_per_frame)


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; +inf when the frames are equal."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)


def _ssim_window(radius: int = 5, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a, b, peak: float = 1.0) -> float:
    """Mean structural similarity with an 11x11 Gaussian window (sigma 1.5).

    Filter responses near the border use reflected samples and the
    half-window rim is excluded from the mean, so the score depends only
    on fully supported neighborhoods.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ValueError("ssim expects 2-D luminance frames")
    radius = 5
    if min(a.shape) < 2 * radius + 1:
        raise ValueError("frame smaller than the 11x11 window")
    if peak <= 0:
        raise ValueError("peak must be positive")

    w = _ssim_window(radius)
    mu_a = correlate(a, w, mode="reflect")
    mu_b = correlate(b, w, mode="reflect")
    var_a = correlate(a * a, w, mode="reflect") - mu_a * mu_a
    var_b = correlate(b * b, w, mode="reflect") - mu_b * mu_b
    cov = correlate(a * b, w, mode="reflect") - mu_a * mu_b

    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    s = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / (
        (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    )
    return float(np.mean(s[radius:-radius, radius:-radius]))


@dataclass(frozen=True)
class MetricRecord:
    """One evaluated (system, channel, snr) cell."""

    channel_id: str
    snr_db: float
    system_id: str
    token_accuracy: float
    semantic_l2: float
    ber: float
    fps_equivalent: float
    psnr_db: float | None = None
    ssim: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.token_accuracy <= 1.0:
            raise ValueError(f"token_accuracy out of [0,1]: {self.token_accuracy}")
        if not 0.0 <= self.ber <= 1.0:
            raise ValueError(f"ber out of [0,1]: {self.ber}")
        if self.semantic_l2 < 0.0:
            raise ValueError(f"semantic_l2 must be >= 0: {self.semantic_l2}")
        if self.fps_equivalent <= 0.0:
            raise ValueError(f"fps_equivalent must be > 0: {self.fps_equivalent}")


def save_metrics_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {METRICS_SCHEMA}\n")
        writer = csv.writer(fh)
        writer.writerow(_COLUMNS)
        for r in records:
            row = [getattr(r, c) for c in _COLUMNS]
            writer.writerow(["" if v is None else v for v in row])


def load_metrics_csv(path) -> list:
    with open(path, newline="") as fh:
        header = fh.readline().strip()
        if header != f"# {METRICS_SCHEMA}":
            raise ValueError(f"unrecognized metrics header {header!r}")
        reader = csv.DictReader(fh)
        out = []
        for row in reader:
            out.append(
                MetricRecord(
                    channel_id=row["channel_id"],
                    snr_db=float(row["snr_db"]),
                    system_id=row["system_id"],
                    token_accuracy=float(row["token_accuracy"]),
                    semantic_l2=float(row["semantic_l2"]),
                    ber=float(row["ber"]),
                    fps_equivalent=float(row["fps_equivalent"]),
                    psnr_db=float(row["psnr_db"]) if row["psnr_db"] else None,
                    ssim=float(row["ssim"]) if row["ssim"] else None,
                )
            )
    return out


def save_metrics_jsonl(records, path) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"schema": METRICS_SCHEMA}) + "\n")
        for r in records:
            fh.write(json.dumps(asdict(r)) + "\n")


def load_metrics_jsonl(path) -> list:
    with open(path) as fh:
        head = json.loads(fh.readline())
        if head.get("schema") != METRICS_SCHEMA:
            raise ValueError(f"unrecognized metrics schema {head!r}")
        return [MetricRecord(**json.loads(line)) for line in fh if line.strip()]
