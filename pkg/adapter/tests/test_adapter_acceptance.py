"""Acceptance gate for the tokenizer bridge.

Two checks: the exported full-size codebook must load and validate on
the simulator side, and reconstructions from semantically biased token
errors must beat uniform token errors at a matched error rate.  Each
test prints its measured numbers; the verdict is the pytest outcome.
"""

import hashlib

import numpy as np

# the package under test may not import the simulator; this gate does,
# because proving the file boundary works takes both sides
from uwlink.codebook import Codebook, build_relevance, load_codebook

from tokadapter.cli import main
from tokadapter.clips import synth_clip
from tokadapter.corrupt import (
    corrupt_biased,
    corrupt_uniform,
    neighbor_table,
    pick_positions,
)
from tokadapter.quality import psnr
from tokadapter.tokenizer import (
    build_tokenizer,
    decode_tokens,
    encode_frames,
    save_tokenizer,
)


def test_export_round_trip_full_scale(tmp_path):
    tok = build_tokenizer(K=1024, seed=0)
    model = tmp_path / "tok.npz"
    save_tokenizer(tok, model)

    first = tmp_path / "codebook.swcb"
    again = tmp_path / "codebook2.swcb"
    for out in (first, again):
        assert main(["export-codebook", "--model", str(model), "--out", str(out)]) == 0
    sums = [hashlib.sha256(p.read_bytes()).hexdigest() for p in (first, again)]
    assert sums[0] == sums[1]

    cb = load_codebook(first)
    assert (cb.K, cb.D) == (1024, 256)
    assert np.array_equal(cb.E, tok.embeddings.astype(np.float64))

    R = build_relevance(cb)
    assert np.allclose(R, R.T, atol=1e-12)
    assert np.allclose(np.diag(R), 1.0, atol=1e-12)
    assert R.min() >= 0.0 and R.max() <= 1.0
    scaled = build_relevance(Codebook(3.7 * cb.E))
    assert np.allclose(scaled, R, atol=1e-9)
    print(f"export sha256 {sums[0][:16]}..., K={cb.K} D={cb.D}, "
          f"relevance range [{R.min():.3f}, {R.max():.3f}]")


def test_semantic_error_superiority(tmp_path):
    tok = build_tokenizer(K=1024, seed=0)
    neighbors = neighbor_table(tok.embeddings, top=8)

    pairs = []
    for seed in range(100, 112):
        clip = synth_clip(seed=seed, n_frames=64)
        tokens = encode_frames(tok, clip)
        rng = np.random.default_rng((seed, 1))
        positions = pick_positions(tokens.size, tokens.size // 4, rng)
        uniform = corrupt_uniform(tokens, positions, tok.K, rng)
        biased = corrupt_biased(tokens, positions, neighbors, rng)
        # both arms corrupt exactly the same positions, never back to the
        # original token, so the token error rate is matched by construction
        assert np.array_equal(np.flatnonzero(uniform != tokens), positions)
        assert np.array_equal(np.flatnonzero(biased != tokens), positions)
        p_uni = psnr(clip, decode_tokens(tok, uniform))
        p_bia = psnr(clip, decode_tokens(tok, biased))
        pairs.append((p_bia, p_uni))
        print(f"clip {seed}: biased {p_bia:.2f} dB vs uniform {p_uni:.2f} dB "
              f"({p_bia - p_uni:+.2f})")

    assert len(pairs) >= 10
    gaps = [b - u for b, u in pairs]
    assert all(g > 0.0 for g in gaps)
    print(f"paired over {len(pairs)} clips: mean gap {np.mean(gaps):+.2f} dB, "
          f"min {np.min(gaps):+.2f} dB")
