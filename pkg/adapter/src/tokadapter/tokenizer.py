"""Stand-in vector-quantizing video tokenizer.

Geometry is fixed: 128x128 grayscale frames, a 4x4 grid of 32x32
patches, 16 tokens per frame.  A patch embeds as its 2x2 mean-pooled
16x16 tile flattened to 256 dims, and the codebook holds pooled tiles
sampled from a seeded synthetic corpus, so nearby embeddings really are
visually similar patches.  Decoding renders the tile mosaic of each
frame and upsamples it bilinearly.

The artifact on disk is an .npz archive with the embedding table plus
the geometry constants, checked on load.
"""

from __future__ import annotations

import zipfile
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import zoom

from .clips import synth_clip
from .formats import FormatError

FRAME_SIZE = 128
GRID = 4
PATCH = FRAME_SIZE // GRID
POOL = 2
TILE = PATCH // POOL
TOKENS_PER_FRAME = GRID * GRID
EMB_DIM = TILE * TILE
ARTIFACT_MAGIC = "tokadapter-vq-v1"


@dataclass(frozen=True, eq=False)
class Tokenizer:
    """Frozen embedding table of K pooled-patch prototypes."""

    embeddings: np.ndarray
    corpus_seed: int

    def __post_init__(self):
        emb = np.asarray(self.embeddings)
        if emb.ndim != 2 or emb.shape[1] != EMB_DIM:
            raise ValueError(f"embeddings must be (K, {EMB_DIM}), got {emb.shape}")
        if emb.shape[0] < 2 or emb.shape[0] > 65536:
            raise ValueError(f"K must be in [2, 65536], got {emb.shape[0]}")
        if not np.all(np.isfinite(emb)):
            raise ValueError("non-finite embedding value")
        object.__setattr__(self, "embeddings", emb.astype(np.float32))

    @property
    def K(self) -> int:
        return self.embeddings.shape[0]


def embed_frames(frames) -> np.ndarray:
    """Pool every 32x32 patch of every frame down to a 256-dim vector.

    Returns (frames * 16, 256) in frame-major order, patches row-major
    within each frame.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3 or frames.shape[1:] != (FRAME_SIZE, FRAME_SIZE):
        raise ValueError(
            f"expected (T, {FRAME_SIZE}, {FRAME_SIZE}) frames, got {frames.shape}"
        )
    n = frames.shape[0]
    patches = frames.reshape(n, GRID, PATCH, GRID, PATCH).transpose(0, 1, 3, 2, 4)
    pooled = patches.reshape(n, GRID, GRID, TILE, POOL, TILE, POOL).mean(axis=(4, 6))
    return pooled.reshape(n * TOKENS_PER_FRAME, EMB_DIM)


def build_tokenizer(K: int = 1024, seed: int = 0, corpus_clips: int = 32,
                    clip_frames: int = 8) -> Tokenizer:
    """Sample a K-entry codebook of pooled patches from a seeded corpus."""
    if not 2 <= K <= 65536:
        raise ValueError(f"K must be in [2, 65536], got {K}")
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(corpus_clips):
        clip = synth_clip(seed=int(rng.integers(2**31)), n_frames=clip_frames,
                          size=FRAME_SIZE)
        samples.append(embed_frames(clip))
    corpus = np.concatenate(samples, axis=0)
    if corpus.shape[0] < K:
        raise ValueError(f"corpus holds {corpus.shape[0]} patches, need at least {K}")
    idx = np.sort(rng.choice(corpus.shape[0], size=K, replace=False))
    return Tokenizer(embeddings=corpus[idx].astype(np.float32), corpus_seed=int(seed))


def save_tokenizer(tok: Tokenizer, path) -> None:
    with open(path, "wb") as fh:
        np.savez(
            fh,
            magic=ARTIFACT_MAGIC,
            embeddings=tok.embeddings,
            frame_size=FRAME_SIZE,
            grid=GRID,
            pool=POOL,
            corpus_seed=tok.corpus_seed,
        )


def load_tokenizer(path) -> Tokenizer:
    """Load a saved artifact; truncated or foreign files raise FormatError."""
    try:
        with open(path, "rb") as fh:
            archive = np.load(fh, allow_pickle=False)
            data = {name: archive[name] for name in archive.files}
    except FileNotFoundError:
        raise
    except (zipfile.BadZipFile, ValueError, OSError, KeyError) as exc:
        raise FormatError(f"unreadable model artifact {path}: {exc}") from exc
    for key in ("magic", "embeddings", "frame_size", "grid", "pool", "corpus_seed"):
        if key not in data:
            raise FormatError(f"model artifact {path} lacks entry {key!r}")
    if str(data["magic"]) != ARTIFACT_MAGIC:
        raise FormatError(f"model artifact {path}: magic {data['magic']!r} unsupported")
    geometry = (int(data["frame_size"]), int(data["grid"]), int(data["pool"]))
    if geometry != (FRAME_SIZE, GRID, POOL):
        raise FormatError(
            f"model artifact {path}: geometry {geometry} does not match "
            f"({FRAME_SIZE}, {GRID}, {POOL})"
        )
    try:
        return Tokenizer(embeddings=data["embeddings"],
                         corpus_seed=int(data["corpus_seed"]))
    except ValueError as exc:
        raise FormatError(f"model artifact {path}: {exc}") from exc


def encode_frames(tok: Tokenizer, frames) -> np.ndarray:
    """Map frames to nearest-prototype token indices, 16 per frame."""
    x = embed_frames(frames)
    emb = tok.embeddings.astype(np.float64)
    # ||x - c||^2 ranks like c.c - 2 x.c; the x.x term is constant per row
    scores = x @ emb.T
    scores *= -2.0
    scores += np.sum(emb * emb, axis=1)[None, :]
    return np.argmin(scores, axis=1).astype(np.uint16)


def decode_tokens(tok: Tokenizer, tokens) -> np.ndarray:
    """Render token indices back into (T, 128, 128) frames in [0, 1]."""
    tokens = np.asarray(tokens)
    if tokens.ndim != 1 or tokens.size == 0 or tokens.size % TOKENS_PER_FRAME:
        raise ValueError(
            f"token count must be a positive multiple of {TOKENS_PER_FRAME}, "
            f"got {tokens.size}"
        )
    as_int = tokens.astype(np.int64)
    if as_int.min() < 0 or int(as_int.max()) >= tok.K:
        raise ValueError(f"token index out of range for K={tok.K}")
    n = tokens.size // TOKENS_PER_FRAME
    tiles = tok.embeddings.astype(np.float64)[as_int]
    mosaic = (
        tiles.reshape(n, GRID, GRID, TILE, TILE)
        .transpose(0, 1, 3, 2, 4)
        .reshape(n, GRID * TILE, GRID * TILE)
    )
    out = zoom(mosaic, (1.0, POOL, POOL), order=1, grid_mode=True, mode="nearest")
    return np.clip(out, 0.0, 1.0)
