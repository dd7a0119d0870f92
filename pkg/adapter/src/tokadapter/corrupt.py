"""Matched-rate token corruption for reconstruction experiments.

Both arms overwrite the same positions with a token different from the
original, so the token error rate is identical and only the error
direction differs: the uniform arm draws any other index, the biased
arm draws an embedding-space near neighbor.
"""

from __future__ import annotations

import numpy as np


def neighbor_table(embeddings, top: int = 8) -> np.ndarray:
    """Indices of the `top` nearest other entries per codebook row."""
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2:
        raise ValueError(f"embeddings must be 2-D, got shape {emb.shape}")
    K = emb.shape[0]
    if not 1 <= top <= K - 1:
        raise ValueError(f"top must be in [1, {K - 1}], got {top}")
    sq = np.sum(emb * emb, axis=1)
    d2 = sq[:, None] - 2.0 * (emb @ emb.T) + sq[None, :]
    np.fill_diagonal(d2, np.inf)
    return np.argsort(d2, axis=1, kind="stable")[:, :top]


def pick_positions(n_tokens: int, n_errors: int, rng) -> np.ndarray:
    """Choose distinct corruption positions; shared by both arms."""
    if not 1 <= n_errors <= n_tokens:
        raise ValueError(f"n_errors must be in [1, {n_tokens}], got {n_errors}")
    return np.sort(rng.choice(n_tokens, size=n_errors, replace=False))


def corrupt_uniform(tokens, positions, K: int, rng) -> np.ndarray:
    """Replace each chosen token with a uniform draw over the other K-1."""
    out = np.asarray(tokens).copy()
    cur = out[positions].astype(np.int64)
    repl = rng.integers(0, K - 1, size=positions.size)
    repl = repl + (repl >= cur)
    out[positions] = repl.astype(out.dtype)
    return out


def corrupt_biased(tokens, positions, neighbors, rng) -> np.ndarray:
    """Replace each chosen token with one of its near neighbors."""
    out = np.asarray(tokens).copy()
    cur = out[positions].astype(np.int64)
    pick = rng.integers(0, neighbors.shape[1], size=positions.size)
    out[positions] = neighbors[cur, pick].astype(out.dtype)
    return out
