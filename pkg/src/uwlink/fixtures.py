"""Synthetic test fixtures: replay channels and clustered toy codebooks.

The channels are AR(1) Rayleigh tap processes under an exponential power
profile with unit total power: `rho` sets how fast the channel decorrelates
between stored snapshots (dt apart), `spread` how fast the profile decays
across the M taps.  Channels A/B/C share benign statistics for the
train-on-one/evaluate-on-others protocol; the harsh channel decorrelates
fast enough that pilot-based equalization goes stale mid-frame, which is
the regime where iterative FEC starts amplifying errors.

The toy codebooks plant cluster structure with near-equidistant cluster
centers and a shared in-cluster offset pattern, so cross-cluster
relevance is pinned near zero and in-cluster relevance near 0.9.
"""

from __future__ import annotations

import numpy as np

from .channel import TvirRecord
from .codebook import Codebook


def make_ar1_tvir(
    seed: int,
    T: int = 60,
    M: int = 24,
    dt: float = 0.02,
    rho: float = 0.97,
    spread: float = 5.0,
    fs_channel: float = 8000.0,
    carrier_hz: float = 14000.0,
) -> TvirRecord:
    """AR(1) Rayleigh taps with exponential power profile, unit power."""
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"rho must be in [0, 1), got {rho}")
    rng = np.random.default_rng(seed)
    prof = np.exp(-spread * np.arange(M) / M)
    prof /= prof.sum()
    amp = np.sqrt(prof)

    def draw():
        return (rng.standard_normal(M) + 1j * rng.standard_normal(M)) / np.sqrt(2)

    H = np.empty((T, M), dtype=np.complex128)
    H[0] = draw() * amp
    for t in range(1, T):
        H[t] = rho * H[t - 1] + np.sqrt(1.0 - rho * rho) * draw() * amp
    return TvirRecord(fs_channel=fs_channel, carrier_hz=carrier_hz, dt=dt, H=H)


def channel_a() -> TvirRecord:
    """Training channel: slow fading, moderate spread."""
    return make_ar1_tvir(seed=101, T=60, M=24, dt=0.02, rho=0.97, spread=5.0)


def channel_b() -> TvirRecord:
    """Unseen evaluation channel with a flatter power profile."""
    return make_ar1_tvir(seed=202, T=60, M=28, dt=0.02, rho=0.96, spread=4.0)


def channel_c() -> TvirRecord:
    """Unseen evaluation channel, more dispersive but still slow."""
    return make_ar1_tvir(seed=303, T=60, M=32, dt=0.02, rho=0.95, spread=3.0)


def channel_harsh() -> TvirRecord:
    """Fast-decorrelating channel: pilot estimates go stale mid-frame."""
    return make_ar1_tvir(seed=404, T=80, M=28, dt=0.01, rho=0.92, spread=4.0)


def clustered_codebook(
    n_clusters: int = 16,
    cluster_size: int = 4,
    center_scale: float = 8.0,
    offset_scale: float = 0.75,
    jitter: float = 0.01,
    seed: int = 11,
) -> Codebook:
    """K = n_clusters * cluster_size embeddings.

    Centers sit on scaled one-hot axes (mutually equidistant); members
    share one offset pattern in extra axes, so every cross-cluster
    distance is nearly the same and min-max relevance lands ~0.9 inside
    a cluster and ~0 outside.
    """
    K = n_clusters * cluster_size
    D = n_clusters + cluster_size
    rng = np.random.default_rng(seed)
    E = np.zeros((K, D))
    for c in range(n_clusters):
        for i in range(cluster_size):
            row = c * cluster_size + i
            E[row, c] = center_scale
            E[row, n_clusters + i] = offset_scale
    E += rng.normal(scale=jitter, size=E.shape)
    return Codebook(E=E)


def toy_codebook_64() -> Codebook:
    return clustered_codebook(n_clusters=16, cluster_size=4)


def toy_codebook_8() -> Codebook:
    """Four tight token pairs; small enough for fast training tests."""
    return clustered_codebook(n_clusters=4, cluster_size=2, seed=5)
