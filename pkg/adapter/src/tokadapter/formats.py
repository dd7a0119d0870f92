"""On-disk interchange formats shared with the link simulator.

The adapter talks to the simulator exclusively through files, so the
byte layouts are implemented here from scratch rather than imported.

SWCB1 codebook: 8-byte magic ``SWCB\\x01\\x00\\x00\\x00``, then K and D
as unsigned 32-bit little-endian, then K*D embedding values as 32-bit
little-endian IEEE-754, row-major.

SWTS1 token stream: 8-byte magic ``SWTS\\x01\\x00\\x00\\x00``, then K
and frame_len as unsigned 32-bit LE, then the token count as unsigned
64-bit LE, then the tokens as unsigned 16-bit LE.

Metrics CSV: one ``# uwlink-metrics-v1`` comment line, a header row,
then one row per evaluated cell in the simulator's column order.
"""

from __future__ import annotations

import csv
import struct

import numpy as np

SWCB_MAGIC = b"SWCB\x01\x00\x00\x00"
SWTS_MAGIC = b"SWTS\x01\x00\x00\x00"
METRICS_SCHEMA = "uwlink-metrics-v1"
METRICS_COLUMNS = (
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

_CB_HEADER = len(SWCB_MAGIC) + 8
_TS_HEADER = len(SWTS_MAGIC) + 8 + 8


class FormatError(ValueError):
    """A file or payload does not follow its declared byte layout."""


def write_codebook(path, embeddings) -> None:
    """Write a (K, D) embedding table as an SWCB1 file."""
    emb = np.asarray(embeddings)
    if emb.ndim != 2:
        raise FormatError(f"codebook must be 2-D, got shape {emb.shape}")
    K, D = emb.shape
    if K < 2 or D < 1:
        raise FormatError(f"codebook needs K >= 2 and D >= 1, got K={K} D={D}")
    emb32 = np.ascontiguousarray(emb, dtype="<f4")
    if not np.all(np.isfinite(emb32)):
        row = int(np.argwhere(~np.isfinite(emb32))[0][0])
        raise FormatError(f"codebook row {row} holds a non-finite value")
    with open(path, "wb") as fh:
        fh.write(SWCB_MAGIC)
        fh.write(struct.pack("<II", K, D))
        fh.write(emb32.tobytes())


def read_codebook(path) -> np.ndarray:
    """Read an SWCB1 file back into a (K, D) float32 array."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _CB_HEADER:
        raise FormatError(
            f"file shorter than the {_CB_HEADER}-byte header: {len(blob)} bytes"
        )
    if blob[:8] != SWCB_MAGIC:
        raise FormatError(f"bad magic at offset 0: {blob[:8]!r}")
    K, D = struct.unpack_from("<II", blob, 8)
    if K < 2 or D < 1:
        raise FormatError(f"header declares K={K} D={D}; need K >= 2 and D >= 1")
    want = _CB_HEADER + 4 * K * D
    if len(blob) != want:
        raise FormatError(f"expected {want} bytes for K={K} D={D}, found {len(blob)}")
    emb = np.frombuffer(blob, dtype="<f4", offset=_CB_HEADER).reshape(K, D).copy()
    if not np.all(np.isfinite(emb)):
        row = int(np.argwhere(~np.isfinite(emb))[0][0])
        raise FormatError(f"codebook row {row} holds a non-finite value")
    return emb


def write_token_stream(path, tokens, K: int, frame_len: int = 16) -> None:
    """Write a token stream as an SWTS1 file.

    The count must be a positive multiple of frame_len and every token
    must lie in [0, K); K is capped by the 16-bit token width.
    """
    tokens = np.asarray(tokens)
    if tokens.ndim != 1 or tokens.size == 0:
        raise FormatError(f"tokens must be a non-empty 1-D array, got shape {tokens.shape}")
    if not 2 <= K <= 65536:
        raise FormatError(f"K must be in [2, 65536], got {K}")
    if frame_len < 1:
        raise FormatError(f"frame_len must be >= 1, got {frame_len}")
    if tokens.size % frame_len:
        raise FormatError(
            f"token count {tokens.size} is not a multiple of frame_len {frame_len}"
        )
    as_int = tokens.astype(np.int64)
    if as_int.min() < 0 or as_int.max() >= K:
        bad = int(np.argwhere((as_int < 0) | (as_int >= K))[0][0])
        raise FormatError(f"token {as_int[bad]} at position {bad} outside [0, {K})")
    with open(path, "wb") as fh:
        fh.write(SWTS_MAGIC)
        fh.write(struct.pack("<II", K, frame_len))
        fh.write(struct.pack("<Q", tokens.size))
        fh.write(as_int.astype("<u2").tobytes())


def read_token_stream(path):
    """Read an SWTS1 file; returns (tokens uint16, K, frame_len)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _TS_HEADER:
        raise FormatError(
            f"file shorter than the {_TS_HEADER}-byte header: {len(blob)} bytes"
        )
    if blob[:8] != SWTS_MAGIC:
        raise FormatError(f"bad magic at offset 0: {blob[:8]!r}")
    K, frame_len = struct.unpack_from("<II", blob, 8)
    (count,) = struct.unpack_from("<Q", blob, 16)
    want = _TS_HEADER + 2 * count
    if len(blob) != want:
        raise FormatError(f"expected {want} bytes for {count} tokens, found {len(blob)}")
    if count == 0 or frame_len < 1 or count % frame_len:
        raise FormatError(
            f"token count {count} is not a positive multiple of frame_len {frame_len}"
        )
    tokens = np.frombuffer(blob, dtype="<u2", offset=_TS_HEADER).copy()
    if tokens.size and int(tokens.max()) >= K:
        raise FormatError(f"token {int(tokens.max())} outside [0, {K})")
    return tokens, int(K), int(frame_len)


def write_metrics_rows(path, rows) -> None:
    """Write metric rows in the simulator's CSV schema.

    Rows are mappings over METRICS_COLUMNS; psnr_db and ssim may be
    None.  Range checks mirror the consumer's record invariants so that
    every file written here loads cleanly on the simulator side.
    """
    checked = []
    for i, row in enumerate(rows):
        extra = sorted(set(row) - set(METRICS_COLUMNS))
        if extra:
            raise FormatError(f"row {i}: unknown fields {extra}")
        missing = [c for c in METRICS_COLUMNS[:7] if row.get(c) is None]
        if missing:
            raise FormatError(f"row {i}: missing fields {missing}")
        if not 0.0 <= float(row["token_accuracy"]) <= 1.0:
            raise FormatError(f"row {i}: token_accuracy out of [0,1]")
        if not 0.0 <= float(row["ber"]) <= 1.0:
            raise FormatError(f"row {i}: ber out of [0,1]")
        if float(row["semantic_l2"]) < 0.0:
            raise FormatError(f"row {i}: semantic_l2 must be >= 0")
        if float(row["fps_equivalent"]) <= 0.0:
            raise FormatError(f"row {i}: fps_equivalent must be > 0")
        checked.append([row.get(c) for c in METRICS_COLUMNS])
    with open(path, "w", newline="") as fh:
        fh.write(f"# {METRICS_SCHEMA}\n")
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for values in checked:
            writer.writerow(["" if v is None else v for v in values])
