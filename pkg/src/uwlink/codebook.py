"""Token codebooks and the semantic relevance matrix derived from them.

A codebook is a K x D table of embedding vectors; token i "means" row i.
Relevance between two tokens is one minus the min-max-normalised L2
distance between their embeddings, so identical tokens score 1 and the
most dissimilar pair scores 0.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"SWCB\x01\x00\x00\x00"
HEADER_LEN = len(MAGIC) + 8  # magic + K + D


class CodebookFormatError(ValueError):
    pass


class DegenerateCodebookError(ValueError):
    """All embeddings coincide; min-max normalisation is undefined."""


@dataclass(frozen=True)
class Codebook:
    """Frozen K x D embedding table. E is float64, row i = embedding of token i."""

    E: np.ndarray

    def __post_init__(self):
        E = np.ascontiguousarray(np.asarray(self.E, dtype=np.float64))
        if E.ndim != 2:
            raise CodebookFormatError("embedding table must be 2-D")
        if E.shape[0] < 2:
            raise CodebookFormatError("K must be >= 2")
        if E.shape[1] < 1:
            raise CodebookFormatError("D must be >= 1")
        if not np.all(np.isfinite(E)):
            bad = int(np.argwhere(~np.isfinite(E).all(axis=1))[0, 0])
            raise CodebookFormatError(f"non-finite embedding value at row {bad}")
        E.setflags(write=False)
        object.__setattr__(self, "E", E)

    @property
    def K(self) -> int:
        return self.E.shape[0]

    @property
    def D(self) -> int:
        return self.E.shape[1]


def load_codebook(path) -> Codebook:
    """Read an SWCB1 file. Errors cite the byte offset of the problem."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(MAGIC) or raw[: len(MAGIC)] != MAGIC:
        raise CodebookFormatError(f"{path}: bad magic at byte offset 0")
    if len(raw) < HEADER_LEN:
        raise CodebookFormatError(
            f"{path}: truncated header at byte offset {len(raw)}"
        )
    K, D = struct.unpack_from("<II", raw, len(MAGIC))
    if K < 2:
        raise CodebookFormatError(f"{path}: K must be >= 2 (got {K})")
    if D < 1:
        raise CodebookFormatError(f"{path}: D must be >= 1 (got {D})")
    need = HEADER_LEN + 4 * K * D
    if len(raw) != need:
        raise CodebookFormatError(
            f"{path}: truncated payload at byte offset {len(raw)} (expected {need} bytes)"
        )
    E32 = np.frombuffer(raw, dtype="<f4", count=K * D, offset=HEADER_LEN)
    E = E32.astype(np.float64).reshape(K, D)
    bad_rows = np.argwhere(~np.isfinite(E).all(axis=1))
    if bad_rows.size:
        raise CodebookFormatError(
            f"{path}: non-finite value at row {int(bad_rows[0, 0])}"
        )
    return Codebook(E=E)


def save_codebook(cb: Codebook, path) -> None:
    """Write SWCB1 (values stored as float32 LE, row-major)."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", cb.K, cb.D))
        f.write(np.asarray(cb.E, dtype="<f4").tobytes())


def pairwise_distances(cb: Codebook) -> np.ndarray:
    """K x K matrix of embedding L2 distances, symmetric with a zero diagonal.

    Computed in double precision via the Gram expansion; tiny negative
    squared distances from cancellation are clamped before the sqrt.
    """
    E = cb.E
    sq = np.sum(E * E, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (E @ E.T)
    np.maximum(d2, 0.0, out=d2)
    M = np.sqrt(d2)
    M = 0.5 * (M + M.T)
    np.fill_diagonal(M, 0.0)
    return M


def relevance_matrix(M: np.ndarray) -> np.ndarray:
    """Min-max normalise distances over the full matrix and flip: R = 1 - M/max(M).

    The zero diagonal is included in the min, so min(M) = 0 always and the
    normalisation reduces to division by the largest distance.  Raises if
    every pairwise distance is zero.
    """
    M = np.asarray(M, dtype=np.float64)
    mmax = float(M.max())
    if mmax <= 0.0:
        raise DegenerateCodebookError(
            "all pairwise distances are zero; relevance is undefined"
        )
    R = 1.0 - M / mmax
    return R


def build_relevance(cb: Codebook) -> np.ndarray:
    return relevance_matrix(pairwise_distances(cb))
