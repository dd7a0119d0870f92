"""Reconstruction scoring for clips with samples in [0, 1]."""

from __future__ import annotations

import numpy as np
from skimage.metrics import structural_similarity


def psnr(reference, test, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB over the whole array."""
    a = np.asarray(reference, dtype=np.float64)
    b = np.asarray(test, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * float(np.log10(peak * peak / mse))


def ssim(reference, test) -> float:
    """Mean per-frame structural similarity of two clips."""
    a = np.asarray(reference, dtype=np.float64)
    b = np.asarray(test, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 3:
        raise ValueError(f"expected (frames, height, width), got shape {a.shape}")
    scores = [
        structural_similarity(a[t], b[t], data_range=1.0) for t in range(a.shape[0])
    ]
    return float(np.mean(scores))
