"""Clip IO and a seeded synthetic clip family.

A clip is a grayscale array of shape (frames, height, width) with
values in [0, 1], stored as a .npy file or as a .npz with a ``frames``
entry.  The synthetic family renders drifting Gaussian blobs over a
filtered-noise background, which gives smooth local structure at the
patch scale the tokenizer works on.
"""

from __future__ import annotations

import os

import numpy as np
from scipy.ndimage import gaussian_filter, zoom


def synth_clip(seed: int, n_frames: int = 64, size: int = 128,
               n_blobs: int = 6) -> np.ndarray:
    """Render a deterministic clip of drifting blobs, normalized to [0, 1]."""
    if n_frames < 1 or size < 8:
        raise ValueError(f"need n_frames >= 1 and size >= 8, got {n_frames}, {size}")
    rng = np.random.default_rng(seed)
    background = gaussian_filter(rng.normal(size=(size, size)), sigma=size / 8.0)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    centers = rng.uniform(0, size, size=(n_blobs, 2))
    vel = rng.uniform(-1.5, 1.5, size=(n_blobs, 2))
    sig = rng.uniform(size / 16.0, size / 6.0, size=n_blobs)
    amp = rng.uniform(0.6, 1.4, size=n_blobs) * rng.choice((-1.0, 1.0), size=n_blobs)
    frames = np.empty((n_frames, size, size))
    for t in range(n_frames):
        f = 0.6 * background
        for b in range(n_blobs):
            cy = (centers[b, 0] + vel[b, 0] * t) % size
            cx = (centers[b, 1] + vel[b, 1] * t) % size
            d2 = (yy - cy) ** 2 + (xx - cx) ** 2
            f = f + amp[b] * np.exp(-d2 / (2.0 * sig[b] ** 2))
        frames[t] = f
    lo, hi = float(frames.min()), float(frames.max())
    if hi - lo < 1e-12:
        raise ValueError("degenerate clip: constant luminance")
    return (frames - lo) / (hi - lo)


def save_clip(path, frames) -> None:
    frames = _checked(frames)
    if str(path).endswith(".npz"):
        with open(path, "wb") as fh:
            np.savez(fh, frames=frames.astype(np.float32))
    else:
        with open(path, "wb") as fh:
            np.save(fh, frames.astype(np.float32))


def load_clip(path) -> np.ndarray:
    """Load a clip; unreadable or malformed containers raise ValueError."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    try:
        loaded = np.load(path, allow_pickle=False)
    except Exception as exc:
        raise ValueError(f"unreadable clip {path}: {exc}") from exc
    if isinstance(loaded, np.lib.npyio.NpzFile):
        if "frames" not in loaded:
            raise ValueError(f"clip archive {path} has no 'frames' entry")
        frames = loaded["frames"]
    else:
        frames = loaded
    try:
        return _checked(frames)
    except ValueError as exc:
        raise ValueError(f"clip {path}: {exc}") from exc


def prepare_clip(frames, size: int) -> np.ndarray:
    """Resize each frame to size x size with bilinear interpolation."""
    frames = _checked(frames)
    if frames.shape[1:] == (size, size):
        return frames
    factors = (1.0, size / frames.shape[1], size / frames.shape[2])
    out = zoom(frames, factors, order=1, grid_mode=True, mode="nearest")
    if out.shape != (frames.shape[0], size, size):
        raise ValueError(f"resize produced {out.shape}, wanted ({frames.shape[0]}, {size}, {size})")
    return np.clip(out, 0.0, 1.0)


def _checked(frames) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3 or min(frames.shape) < 1:
        raise ValueError(f"expected (frames, height, width), got shape {frames.shape}")
    if not np.all(np.isfinite(frames)):
        raise ValueError("non-finite sample")
    if frames.min() < 0.0 or frames.max() > 1.0:
        raise ValueError(f"samples outside [0, 1]: range [{frames.min()}, {frames.max()}]")
    return frames
