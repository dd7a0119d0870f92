"""Run manifest: which tokenizer artifact, which clips, where outputs go.

YAML layout::

    tokenizer:
      id: synth-vq
      version: "1"
      model: artifact.npz
    codebook:
      K: 1024
      D: 256
    frame:
      height: 128
      width: 128
      tokens_per_frame: 16
    videos:
      - path: clips/a.npy
        tokens: streams/a.swts
    codebook_out: codebook.swcb      # optional

Relative paths resolve against the manifest's own directory.  The frame
block must describe the geometry this tokenizer family supports, and
the declared K and D are checked against the model artifact before any
file is written.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import yaml

from .tokenizer import EMB_DIM, FRAME_SIZE, TOKENS_PER_FRAME


class ManifestError(ValueError):
    """A manifest file is missing, malformed, or inconsistent."""


@dataclass(frozen=True)
class VideoEntry:
    path: str
    tokens: str


@dataclass(frozen=True)
class AdapterManifest:
    tokenizer_id: str
    tokenizer_version: str
    model: str
    K: int
    D: int
    frame_height: int
    frame_width: int
    tokens_per_frame: int
    videos: tuple
    codebook_out: str | None = None


_TOP_KEYS = frozenset(("tokenizer", "codebook", "frame", "videos", "codebook_out"))
_TOK_KEYS = frozenset(("id", "version", "model"))
_CB_KEYS = frozenset(("K", "D"))
_FRAME_KEYS = frozenset(("height", "width", "tokens_per_frame"))
_VIDEO_KEYS = frozenset(("path", "tokens"))


def load_manifest(path) -> AdapterManifest:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError:
        raise
    except (OSError, yaml.YAMLError) as exc:
        raise ManifestError(f"unreadable manifest {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ManifestError(f"manifest {path} must be a mapping")

    errors: list[str] = []
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    for key in sorted(set(raw) - _TOP_KEYS):
        errors.append(f"{key}: unknown key")

    tok = _section(raw, "tokenizer", _TOK_KEYS, errors)
    tok_id = _text(tok, "tokenizer.id", errors)
    tok_version = _text(tok, "tokenizer.version", errors, key="version")
    model = _text(tok, "tokenizer.model", errors, key="model")

    cb = _section(raw, "codebook", _CB_KEYS, errors)
    K = _count(cb, "codebook.K", errors, key="K", at_least=2)
    D = _count(cb, "codebook.D", errors, key="D", at_least=1)
    if D is not None and D != EMB_DIM:
        errors.append(f"codebook.D: this tokenizer family embeds in {EMB_DIM} dims, got {D}")

    frame = _section(raw, "frame", _FRAME_KEYS, errors)
    height = _count(frame, "frame.height", errors, key="height", at_least=1)
    width = _count(frame, "frame.width", errors, key="width", at_least=1)
    tpf = _count(frame, "frame.tokens_per_frame", errors, key="tokens_per_frame",
                 at_least=1)
    for name, got in (("frame.height", height), ("frame.width", width)):
        if got is not None and got != FRAME_SIZE:
            errors.append(f"{name}: this tokenizer family decodes {FRAME_SIZE}, got {got}")
    if tpf is not None and tpf != TOKENS_PER_FRAME:
        errors.append(
            f"frame.tokens_per_frame: this tokenizer family emits "
            f"{TOKENS_PER_FRAME}, got {tpf}"
        )

    videos = []
    raw_videos = raw.get("videos")
    if not isinstance(raw_videos, list) or not raw_videos:
        errors.append("videos: expected a non-empty list")
    else:
        for i, entry in enumerate(raw_videos):
            if not isinstance(entry, dict):
                errors.append(f"videos[{i}]: expected a mapping")
                continue
            for key in sorted(set(entry) - _VIDEO_KEYS):
                errors.append(f"videos[{i}].{key}: unknown key")
            src = _text(entry, f"videos[{i}].path", errors, key="path")
            dst = _text(entry, f"videos[{i}].tokens", errors, key="tokens")
            if src is not None and dst is not None:
                videos.append(VideoEntry(path=resolve(src), tokens=resolve(dst)))

    codebook_out = raw.get("codebook_out")
    if codebook_out is not None and not isinstance(codebook_out, str):
        errors.append("codebook_out: expected a path string")

    if errors:
        raise ManifestError("; ".join(errors))
    return AdapterManifest(
        tokenizer_id=tok_id,
        tokenizer_version=tok_version,
        model=resolve(model),
        K=K,
        D=D,
        frame_height=height,
        frame_width=width,
        tokens_per_frame=tpf,
        videos=tuple(videos),
        codebook_out=resolve(codebook_out) if codebook_out else None,
    )


def _section(raw, name, allowed, errors):
    sec = raw.get(name)
    if not isinstance(sec, dict):
        errors.append(f"{name}: expected a mapping")
        return {}
    for key in sorted(set(sec) - allowed):
        errors.append(f"{name}.{key}: unknown key")
    return sec


def _text(sec, path, errors, key=None):
    value = sec.get(key or path.split(".")[-1])
    if value is None:
        errors.append(f"{path}: required")
        return None
    if isinstance(value, (int, float)):
        value = str(value)
    if not isinstance(value, str) or not value:
        errors.append(f"{path}: expected a non-empty string")
        return None
    return value


def _count(sec, path, errors, key, at_least):
    value = sec.get(key)
    if value is None:
        errors.append(f"{path}: required")
        return None
    if not isinstance(value, int) or isinstance(value, bool) or value < at_least:
        errors.append(f"{path}: expected an integer >= {at_least}")
        return None
    return value
