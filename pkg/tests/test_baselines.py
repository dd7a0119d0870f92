import numpy as np
import pytest
from scipy.special import erfc

from uwlink.baselines import (
    DigitalConfig,
    bits_per_token,
    bits_to_tokens,
    demap_hard,
    demap_llr,
    map_bpsk,
    map_qpsk,
    run_digital_pipeline,
    tokens_to_bits,
)
from uwlink.channel import ChannelModel
from uwlink.fec import build_ldpc
from uwlink.fixtures import channel_harsh
from uwlink.ofdm import FrameLayout, OfdmFrameSpec

SPEC = OfdmFrameSpec()
LAYOUT = FrameLayout.from_seed(SPEC, seed=7)


def qfunc(x):
    return 0.5 * erfc(x / np.sqrt(2.0))


def test_bits_per_token():
    assert bits_per_token(1024) == 10
    assert bits_per_token(2) == 1
    assert bits_per_token(1000) == 10
    with pytest.raises(ValueError):
        bits_per_token(1)


def test_token_bit_fields():
    assert np.array_equal(tokens_to_bits([0], 1024), np.zeros(10, dtype=np.uint8))
    assert np.array_equal(tokens_to_bits([1023], 1024), np.ones(10, dtype=np.uint8))
    assert np.array_equal(tokens_to_bits([5], 8), np.array([1, 0, 1], dtype=np.uint8))


def test_token_bits_roundtrip():
    rng = np.random.default_rng(0)
    toks = rng.integers(0, 1024, size=1000)
    assert np.array_equal(bits_to_tokens(tokens_to_bits(toks, 1024), 1024), toks)


def test_token_bits_validation():
    with pytest.raises(ValueError, match="divisible"):
        bits_to_tokens(np.zeros(11, dtype=np.uint8), 1024)
    with pytest.raises(ValueError, match="range"):
        tokens_to_bits([1024], 1024)
    # corrupted fields past the codebook edge clamp instead of crashing
    assert bits_to_tokens(np.ones(10, dtype=np.uint8), 1000)[0] == 999


def test_bpsk_mapping():
    out = map_bpsk([0, 1, 1, 0])
    assert np.array_equal(out, np.array([1, -1, -1, 1], dtype=np.complex128))


def test_qpsk_mapping_gray_unit_energy():
    out = map_qpsk([0, 0, 0, 1, 1, 1, 1, 0])
    s = 1 / np.sqrt(2)
    expect = np.array([s + 1j * s, s - 1j * s, -s - 1j * s, -s + 1j * s])
    assert np.allclose(out, expect)
    assert np.allclose(np.abs(out), 1.0)
    with pytest.raises(ValueError, match="even"):
        map_qpsk([0, 1, 1])


def test_demap_roundtrip_noiseless():
    rng = np.random.default_rng(1)
    bits = rng.integers(0, 2, size=400).astype(np.uint8)
    assert np.array_equal(demap_hard(map_bpsk(bits), "bpsk"), bits)
    assert np.array_equal(demap_hard(map_qpsk(bits), "qpsk"), bits)


def test_llr_signs_match_hard_decisions():
    rng = np.random.default_rng(2)
    sym = rng.normal(size=100) + 1j * rng.normal(size=100)
    for mod in ("bpsk", "qpsk"):
        hard = demap_hard(sym, mod)
        llr = demap_llr(sym, mod, noise_var=0.5)
        assert np.array_equal((llr < 0).astype(np.uint8), hard)


def _bpsk_ber(ebn0_db, n_bits, seed):
    rng = np.random.default_rng(seed)
    errs = 0
    chunk = 10**6
    done = 0
    while done < n_bits:
        n = min(chunk, n_bits - done)
        bits = rng.integers(0, 2, size=n).astype(np.uint8)
        x = map_bpsk(bits).real
        sigma = np.sqrt(1.0 / (2.0 * 10 ** (ebn0_db / 10.0)))
        y = x + rng.normal(scale=sigma, size=n)
        errs += int(((y < 0).astype(np.uint8) != bits).sum())
        done += n
    return errs / n_bits


def test_bpsk_awgn_matches_q_function():
    ebn0 = 4.0
    ber = _bpsk_ber(ebn0, 10**6, seed=3)
    theory = qfunc(np.sqrt(2.0 * 10 ** (ebn0 / 10.0)))
    assert abs(ber - theory) / theory < 0.05


def test_qpsk_three_db_relation():
    # QPSK at Es/N0 = x+3dB matches BPSK at Es/N0 = x (per-bit energy equal)
    rng = np.random.default_rng(4)
    n = 10**6
    esn0_db = 4.0
    bits = rng.integers(0, 2, size=n).astype(np.uint8)
    xq = map_qpsk(bits)
    hi = 10 ** ((esn0_db + 3.0103) / 10.0)
    sig_hi = np.sqrt(1.0 / (2.0 * hi))  # per real dimension
    yq = xq + sig_hi * (rng.normal(size=n // 2) + 1j * rng.normal(size=n // 2))
    ber_q = float(np.mean(demap_hard(yq, "qpsk") != bits))
    ber_b = _bpsk_ber(esn0_db, n, seed=5)
    assert abs(ber_q - ber_b) / ber_b < 0.1
    # and at equal Es/N0 QPSK is strictly worse
    lo = 10 ** (esn0_db / 10.0)
    sig_lo = np.sqrt(1.0 / (2.0 * lo))
    yq_same = xq + sig_lo * (rng.normal(size=n // 2) + 1j * rng.normal(size=n // 2))
    assert float(np.mean(demap_hard(yq_same, "qpsk") != bits)) > ber_b


def test_pipeline_ideal_loopback():
    rng = np.random.default_rng(6)
    toks = rng.integers(0, 1024, size=300)
    for mod in ("bpsk", "qpsk"):
        cfg = DigitalConfig(K=1024, modulation=mod)
        res = run_digital_pipeline(cfg, toks, SPEC, LAYOUT, ChannelModel(kind="ideal"), seed=1)
        assert res.token_accuracy == 1.0
        assert res.ber_pre == 0.0 and res.ber_post == 0.0


def test_pipeline_qpsk_uses_half_the_frames():
    toks = np.zeros(300, dtype=np.int64)  # 3000 bits
    b = run_digital_pipeline(DigitalConfig(K=1024, modulation="bpsk"), toks,
                             SPEC, LAYOUT, ChannelModel(kind="ideal"), seed=1)
    q = run_digital_pipeline(DigitalConfig(K=1024, modulation="qpsk"), toks,
                             SPEC, LAYOUT, ChannelModel(kind="ideal"), seed=1)
    assert b.n_frames == 4 and q.n_frames == 2


def test_pipeline_awgn_high_snr():
    rng = np.random.default_rng(7)
    toks = rng.integers(0, 1024, size=2000)
    cfg = DigitalConfig(K=1024, modulation="bpsk")
    res = run_digital_pipeline(cfg, toks, SPEC, LAYOUT,
                               ChannelModel(kind="awgn", snr_db=30.0), seed=2)
    assert res.ber_pre < 1e-5
    assert res.token_accuracy == 1.0


def test_pipeline_empty_batch_rejected():
    with pytest.raises(ValueError, match="empty"):
        run_digital_pipeline(DigitalConfig(K=1024), [], SPEC, LAYOUT,
                             ChannelModel(kind="ideal"), seed=0)


def test_pipeline_harsh_tvir_raw_ber_tens_of_percent():
    rng = np.random.default_rng(8)
    toks = rng.integers(0, 1024, size=400)
    model = ChannelModel(kind="tvir-replay", tvir=channel_harsh(), snr_db=3.0)
    cfg = DigitalConfig(K=1024, modulation="bpsk")
    res = run_digital_pipeline(cfg, toks, SPEC, LAYOUT, model, seed=3)
    assert 0.10 <= res.ber_pre <= 0.50
    print(f"\nharsh tvir raw BER: {res.ber_pre:.3f}")


@pytest.fixture(scope="module")
def code33():
    return build_ldpc(1024, 0.33, seed=0)


def test_pipeline_ldpc_helps_above_threshold(code33):
    rng = np.random.default_rng(9)
    toks = rng.integers(0, 1024, size=500)
    model = ChannelModel(kind="awgn", snr_db=4.0)
    raw = run_digital_pipeline(DigitalConfig(K=1024), toks, SPEC, LAYOUT, model, seed=4)
    coded = run_digital_pipeline(DigitalConfig(K=1024, fec=code33), toks,
                                 SPEC, LAYOUT, model, seed=4)
    assert raw.ber_post > 0.01
    assert coded.ber_post == 0.0
    assert coded.token_accuracy == 1.0


def test_pipeline_ldpc_cliff_on_fast_fading(code33):
    # stale mid-frame channel estimates feed confidently wrong LLRs:
    # below the cliff the decoder outputs more errors than it was given
    rng = np.random.default_rng(0)
    toks = rng.integers(0, 1024, size=1000)
    model = ChannelModel(kind="tvir-replay",
                         tvir=channel_harsh(), snr_db=6.0)
    cfg = DigitalConfig(K=1024, modulation="bpsk", fec=code33)
    res = run_digital_pipeline(cfg, toks, SPEC, LAYOUT, model, seed=11)
    assert res.ber_pre >= 0.13
    assert res.ber_post >= res.ber_pre
    print(f"\ncliff: raw {res.ber_pre:.4f} -> post-FEC {res.ber_post:.4f}")
