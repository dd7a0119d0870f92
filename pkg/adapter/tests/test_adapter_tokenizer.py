"""Tokenizer build, artifact IO, and encode/decode properties."""

import numpy as np
import pytest

from tokadapter.clips import synth_clip
from tokadapter.formats import FormatError
from tokadapter.quality import psnr
from tokadapter.tokenizer import (
    EMB_DIM,
    FRAME_SIZE,
    TOKENS_PER_FRAME,
    Tokenizer,
    build_tokenizer,
    decode_tokens,
    embed_frames,
    encode_frames,
    load_tokenizer,
    save_tokenizer,
)


def _small_tok(seed=3):
    return build_tokenizer(K=64, seed=seed, corpus_clips=4, clip_frames=4)


def test_build_deterministic():
    a = build_tokenizer(K=32, seed=5, corpus_clips=3, clip_frames=3)
    b = build_tokenizer(K=32, seed=5, corpus_clips=3, clip_frames=3)
    assert np.array_equal(a.embeddings, b.embeddings)
    c = build_tokenizer(K=32, seed=6, corpus_clips=3, clip_frames=3)
    assert not np.array_equal(a.embeddings, c.embeddings)
    assert a.embeddings.shape == (32, EMB_DIM)
    assert a.embeddings.dtype == np.float32


def test_embed_frames_matches_per_patch_pooling():
    rng = np.random.default_rng(7)
    frames = rng.random((2, FRAME_SIZE, FRAME_SIZE))
    emb = embed_frames(frames)
    assert emb.shape == (2 * TOKENS_PER_FRAME, EMB_DIM)
    # independent route: slice each patch and pool it by hand
    for t in range(2):
        for gy in range(4):
            for gx in range(4):
                patch = frames[t, gy * 32:(gy + 1) * 32, gx * 32:(gx + 1) * 32]
                pooled = patch.reshape(16, 2, 16, 2).mean(axis=(1, 3)).ravel()
                row = t * TOKENS_PER_FRAME + gy * 4 + gx
                assert np.allclose(emb[row], pooled, atol=1e-12)


def test_artifact_round_trip(tmp_path):
    tok = _small_tok()
    path = tmp_path / "tok.npz"
    save_tokenizer(tok, path)
    back = load_tokenizer(path)
    assert back.K == tok.K
    assert back.corpus_seed == tok.corpus_seed
    assert np.array_equal(back.embeddings, tok.embeddings)


def test_artifact_rejects_damage(tmp_path):
    tok = _small_tok()
    path = tmp_path / "tok.npz"
    save_tokenizer(tok, path)

    cut = tmp_path / "cut.npz"
    cut.write_bytes(path.read_bytes()[: path.stat().st_size // 2])
    with pytest.raises(FormatError, match="unreadable model artifact"):
        load_tokenizer(cut)

    foreign = tmp_path / "foreign.npz"
    with open(foreign, "wb") as fh:
        np.savez(fh, magic="other-format", embeddings=tok.embeddings,
                 frame_size=128, grid=4, pool=2, corpus_seed=0)
    with pytest.raises(FormatError, match="magic"):
        load_tokenizer(foreign)

    bare = tmp_path / "bare.npz"
    with open(bare, "wb") as fh:
        np.savez(fh, embeddings=tok.embeddings)
    with pytest.raises(FormatError, match="lacks entry"):
        load_tokenizer(bare)

    with pytest.raises(FileNotFoundError):
        load_tokenizer(tmp_path / "absent.npz")


def test_encode_properties():
    tok = _small_tok()
    clip = synth_clip(seed=40, n_frames=5, size=FRAME_SIZE)
    tokens = encode_frames(tok, clip)
    assert tokens.dtype == np.uint16
    assert tokens.size == 5 * TOKENS_PER_FRAME
    assert int(tokens.max()) < tok.K
    assert np.array_equal(tokens, encode_frames(tok, clip))
    # the nearest-prototype rule, checked directly on one patch
    emb = embed_frames(clip)
    d = np.linalg.norm(tok.embeddings.astype(np.float64) - emb[0], axis=1)
    assert tokens[0] == int(np.argmin(d))


def test_decode_properties():
    tok = _small_tok()
    rng = np.random.default_rng(9)
    tokens = rng.integers(0, tok.K, size=3 * TOKENS_PER_FRAME).astype(np.uint16)
    frames = decode_tokens(tok, tokens)
    assert frames.shape == (3, FRAME_SIZE, FRAME_SIZE)
    assert frames.min() >= 0.0 and frames.max() <= 1.0
    assert np.array_equal(frames, decode_tokens(tok, tokens.copy()))
    with pytest.raises(ValueError, match="multiple"):
        decode_tokens(tok, tokens[:-1])
    with pytest.raises(ValueError, match="out of range"):
        bad = tokens.copy()
        bad[0] = tok.K
        decode_tokens(tok, bad)


def test_round_trip_quality_on_family_clip():
    # full-size codebook against an unseen clip from the same family
    tok = build_tokenizer(K=1024, seed=0)
    clip = synth_clip(seed=100, n_frames=16, size=FRAME_SIZE)
    recon = decode_tokens(tok, encode_frames(tok, clip))
    assert psnr(clip, recon) > 24.0


def test_tokenizer_validation():
    with pytest.raises(ValueError, match="K must be"):
        build_tokenizer(K=1, corpus_clips=1, clip_frames=1)
    with pytest.raises(ValueError, match="corpus holds"):
        build_tokenizer(K=256, corpus_clips=1, clip_frames=1)
    with pytest.raises(ValueError, match="must be"):
        Tokenizer(embeddings=np.zeros((4, 7)), corpus_seed=0)
    with pytest.raises(ValueError, match="non-finite"):
        Tokenizer(embeddings=np.full((4, EMB_DIM), np.nan), corpus_seed=0)
