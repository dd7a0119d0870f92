"""Experiment command line.

Subcommands: train, eval, multicast, ber, gradcheck, info.  Every
command reads one YAML config (see config.py for the grammar), writes
its outputs under <out>/<experiment>/, and is deterministic given the
config plus --seed: re-running produces byte-identical files.

Exit codes: 0 success, 2 config error, 3 numeric failure (divergence or
a failed gradient check).
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np
from scipy.ndimage import gaussian_filter

from .baselines import (
    DigitalConfig,
    bits_per_token,
    digital_rx,
    digital_tx,
    run_digital_pipeline,
    tokens_to_bits,
)
from .channel import apply_channel
from .codebook import Codebook, build_relevance
from .config import (
    ConfigError,
    ExperimentConfig,
    GradcheckSpec,
    build_bank,
    build_channel,
    build_codebook,
    load_config,
)
from .fec import build_ldpc
from .grad import _pad_margin, check_gradients, forward_loss
from .metrics import (
    MetricRecord,
    fps_equivalent,
    psnr,
    save_metrics_csv,
    semantic_l2,
    slot_cost,
    ssim,
    token_accuracy,
)
from .ofdm import (
    FrameLayout,
    OfdmFrameSpec,
    demodulate_frame,
    detect_frame,
    estimate_cfo,
    modulate_frame,
)
from .softcast import run_softcast_pipeline, softcast_encode
from .training import (
    TrainConfig,
    TrainDivergence,
    load_token_stream,
    save_history,
    train,
)
from .wavebank import decode_many, encode_tokens, init_wavebank, save_wavebank

LAYOUT_SEED = 7
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

# seed-domain tags keep command rngs out of each other's streams
_SEED_MULTICAST, _SEED_BER, _SEED_GRADCHECK = 7001, 7002, 7003

_ldpc_cache: dict = {}


def _code(n: int, rate: float, seed: int = 1):
    key = (n, rate, seed)
    if key not in _ldpc_cache:
        _ldpc_cache[key] = build_ldpc(n, rate, seed=seed)
    return _ldpc_cache[key]


def _exp_dir(cfg: ExperimentConfig) -> str:
    path = os.path.join(cfg.out, cfg.experiment)
    os.makedirs(path, exist_ok=True)
    return path


def _layout(spec: OfdmFrameSpec) -> FrameLayout:
    return FrameLayout.from_seed(spec, LAYOUT_SEED)


def _eval_image(cfg: ExperimentConfig) -> np.ndarray:
    ev = cfg.eval
    rng = np.random.default_rng(ev.image_seed)
    img = gaussian_filter(rng.normal(size=(ev.image_n, ev.image_n)),
                          ev.image_sigma)
    img = img - img.min()
    top = img.max()
    return img / top if top > 0 else img


def _token_bit_ber(K: int, sent, received) -> float:
    a = tokens_to_bits(sent, K)
    b = tokens_to_bits(received, K)
    return float(np.mean(a != b))


def _digital_config(sysspec, K: int) -> DigitalConfig:
    fec = None
    if sysspec.fec is not None:
        fec = _code(sysspec.fec.get("n", 1024), float(sysspec.fec["rate"]),
                    sysspec.fec.get("seed", 1))
    return DigitalConfig(K=K, modulation=sysspec.modulation, fec=fec)


def _system_fps(sysspec, spec: OfdmFrameSpec, K: int,
                bank=None, n_symbols: int | None = None) -> float:
    if sysspec.type == "wavebank":
        return fps_equivalent(spec, bank.L)
    if sysspec.type == "digital":
        rate = float(sysspec.fec["rate"]) if sysspec.fec is not None else None
        return fps_equivalent(
            spec, slot_cost(bits_per_token(K), sysspec.modulation, rate)
        )
    return fps_equivalent(spec, n_symbols, tokens_per_frame=1)


# ---------------------------------------------------------------------------
# info


def cmd_info(cfg: ExperimentConfig, jobs: int = 1) -> int:
    spec = cfg.frame_spec()
    lines = [
        f"profile: {cfg.profile}",
        f"subcarriers: {spec.n_sub}  cyclic prefix: {spec.cp_len}  "
        f"symbols/frame: {spec.syms_per_frame}  pilot period: {spec.pilot_period}",
        f"chirp: {spec.chirp_len}  preamble: {spec.sc_len}  "
        f"carrier: {spec.carrier_hz:.0f} Hz  fs: {spec.fs:.0f} Hz",
        f"frame: {spec.frame_len} samples = {spec.duration_s * 1e3:.1f} ms, "
        f"{spec.data_slots} data slots",
        f"raw rate: {spec.raw_bps:.1f} slots/s (BPSK bits/s)",
        "",
        "fps by wavebank wavelength:",
    ]
    for L in cfg.wavelengths:
        lines.append(f"  L={L:<3d} {fps_equivalent(spec, L):6.2f} fps")
    lines.append("fps by digital configuration (10-bit tokens):")
    for label, rate in (("no FEC", None), ("LDPC r=0.73", 0.73),
                        ("LDPC r=0.33", 0.33)):
        b = fps_equivalent(spec, slot_cost(10, "bpsk", rate))
        q = fps_equivalent(spec, slot_cost(10, "qpsk", rate))
        lines.append(f"  {label:<12s} bpsk {b:6.2f} fps   qpsk {q:6.2f} fps")
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    with open(os.path.join(_exp_dir(cfg), "info.txt"), "w") as fh:
        fh.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def cmd_train(cfg: ExperimentConfig, jobs: int = 1) -> int:
    if cfg.train is None:
        raise ConfigError(["train: section required by the train command"])
    cb = build_codebook(cfg)
    R = build_relevance(cb)
    bank = build_bank(None, cfg, cb.K)
    if bank.K != cb.K:
        raise ConfigError(
            [f"wavebank: bank K={bank.K} does not match codebook K={cb.K}"]
        )
    model = build_channel(cfg.channel_by_id(cfg.train.channel))
    streams = None
    if cfg.train.stream is not None:
        streams = [load_token_stream(cfg.train.stream)]

    tdir = os.path.join(_exp_dir(cfg), "train")
    os.makedirs(tdir, exist_ok=True)
    kwargs = {}
    if cfg.train.snr_schedule is not None:
        kwargs["snr_schedule"] = cfg.train.snr_schedule
    if cfg.train.checkpoint_every > 0:
        ckpt_dir = os.path.join(tdir, "checkpoints")
        os.makedirs(ckpt_dir, exist_ok=True)
        kwargs["checkpoint_every"] = cfg.train.checkpoint_every
        kwargs["checkpoint_dir"] = ckpt_dir
    tconf = TrainConfig(
        steps=cfg.train.steps,
        channel=model,
        relevance=R,
        batch_frames=cfg.train.batch_frames,
        learning_rate=cfg.train.learning_rate,
        optimizer=cfg.train.optimizer,
        sampling=cfg.train.sampling,
        seed=cfg.seed,
        frame_spec=cfg.frame_spec(),
        layout_seed=LAYOUT_SEED,
        **kwargs,
    )
    params, hist = train(bank, tconf, streams=streams)
    save_wavebank(params, os.path.join(tdir, "final.swwb"))
    save_history(os.path.join(tdir, "history.csv"), hist)
    first, last = hist[0][1], hist[-1][1]
    print(
        f"trained {cfg.train.steps} steps on {cfg.train.channel}: "
        f"loss {first:.4f} -> {last:.4f}; bank at {tdir}/final.swwb"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def _eval_cell(args):
    """One (system, channel, snr) grid cell; returns the mean record
    plus per-field standard deviations over the trials."""
    cfg, si, ci, gi = args
    sysspec = cfg.systems[si]
    chspec = cfg.channels[ci]
    snr = cfg.snr_grid[gi]
    spec = cfg.frame_spec()
    layout = _layout(spec)
    model = build_channel(chspec, snr)

    cb = bank = R = dconf = image = None
    if sysspec.type in ("wavebank", "digital"):
        cb = build_codebook(cfg)
    if sysspec.type == "wavebank":
        bank = build_bank(sysspec.bank, cfg, cb.K)
        if bank.K != cb.K:
            raise ConfigError(
                [f"systems[{si}].bank: K={bank.K} does not match codebook K={cb.K}"]
            )
        R = build_relevance(cb)
    elif sysspec.type == "digital":
        dconf = _digital_config(sysspec, cb.K)
    else:
        image = _eval_image(cfg)

    acc, sl2, ber, psnrs, ssims = [], [], [], [], []
    n_symbols = None
    for t in range(cfg.trials):
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, si, ci, gi, t)))
        pipe_seed = int(rng.integers(0, 2**63 - 1))
        if sysspec.type == "softcast":
            res = run_softcast_pipeline(image, sysspec.budget, spec, layout,
                                        model, seed=pipe_seed,
                                        snr_db_override=snr)
            n_symbols = res.n_symbols
            psnrs.append(psnr(image, res.reconstructed))
            ssims.append(ssim(image, res.reconstructed))
            acc.append(0.0)
            sl2.append(0.0)
            ber.append(0.0)
            continue
        tokens = rng.integers(0, cb.K, size=cfg.eval.n_tokens)
        if sysspec.type == "wavebank":
            _, _, decoded = forward_loss(bank, tokens, R, spec, layout, model,
                                         seed=pipe_seed, snr_db_override=snr)
            acc.append(token_accuracy(tokens, decoded))
            sl2.append(semantic_l2(cb, tokens, decoded))
            ber.append(_token_bit_ber(cb.K, tokens, decoded))
        else:
            res = run_digital_pipeline(dconf, tokens, spec, layout, model,
                                       seed=pipe_seed, snr_db_override=snr)
            acc.append(res.token_accuracy)
            sl2.append(semantic_l2(cb, tokens, res.decoded_tokens))
            ber.append(res.ber_post)

    fps = _system_fps(sysspec, spec, cb.K if cb else 0, bank=bank,
                      n_symbols=n_symbols)
    record = MetricRecord(
        channel_id=chspec.id,
        snr_db=snr,
        system_id=sysspec.id,
        token_accuracy=float(np.mean(acc)),
        semantic_l2=float(np.mean(sl2)),
        ber=float(np.mean(ber)),
        fps_equivalent=fps,
        psnr_db=float(np.mean(psnrs)) if psnrs else None,
        ssim=float(np.mean(ssims)) if ssims else None,
    )
    stds = {
        "token_accuracy_std": float(np.std(acc)),
        "semantic_l2_std": float(np.std(sl2)),
        "ber_std": float(np.std(ber)),
        "psnr_std": float(np.std(psnrs)) if psnrs else None,
        "ssim_std": float(np.std(ssims)) if ssims else None,
    }
    return record, stds


def cmd_eval(cfg: ExperimentConfig, jobs: int = 1) -> int:
    if not cfg.systems or not cfg.channels or not cfg.snr_grid:
        raise ConfigError(
            ["eval: needs systems, channels, and snr_grid in the config"]
        )
    cells = [
        (cfg, si, ci, gi)
        for si in range(len(cfg.systems))
        for ci in range(len(cfg.channels))
        for gi in range(len(cfg.snr_grid))
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_eval_cell, cells))
    else:
        results = [_eval_cell(c) for c in cells]

    exp = _exp_dir(cfg)
    per_file: dict = {}
    for (_, si, ci, _), (record, _) in zip(cells, results):
        key = (cfg.systems[si].id, cfg.channels[ci].id)
        per_file.setdefault(key, []).append(record)
    for (sys_id, chan_id), records in per_file.items():
        d = os.path.join(exp, sys_id)
        os.makedirs(d, exist_ok=True)
        save_metrics_csv(records, os.path.join(d, f"{chan_id}.csv"))

    with open(os.path.join(exp, "summary.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["system", "channel", "snr_db", "trials",
             "token_accuracy", "token_accuracy_std",
             "semantic_l2", "semantic_l2_std", "ber", "ber_std",
             "psnr_db", "psnr_std", "ssim", "ssim_std", "fps_equivalent"]
        )
        for (_, si, ci, gi), (r, stds) in zip(cells, results):
            opt = lambda v: "" if v is None else v
            writer.writerow(
                [r.system_id, r.channel_id, r.snr_db, cfg.trials,
                 r.token_accuracy, stds["token_accuracy_std"],
                 r.semantic_l2, stds["semantic_l2_std"],
                 r.ber, stds["ber_std"],
                 opt(r.psnr_db), opt(stds["psnr_std"]),
                 opt(r.ssim), opt(stds["ssim_std"]), r.fps_equivalent]
            )
    for (_, si, ci, gi), (r, _) in zip(cells, results):
        print(
            f"{r.system_id} / {r.channel_id} @ {r.snr_db:g} dB: "
            f"acc {r.token_accuracy:.3f}  l2 {r.semantic_l2:.3f}  "
            f"ber {r.ber:.4f}"
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# multicast


def _wavebank_frames(bank, tokens, spec: OfdmFrameSpec) -> np.ndarray:
    cap = spec.data_slots // bank.L
    n_frames = -(-tokens.size // cap)
    frames = np.zeros((n_frames, spec.data_slots), dtype=np.complex128)
    wave = encode_tokens(bank, tokens)
    flat = frames.reshape(-1)
    flat[: wave.size] = wave
    return flat.reshape(n_frames, spec.data_slots)


def cmd_multicast(cfg: ExperimentConfig, jobs: int = 1) -> int:
    mc = cfg.multicast
    if mc is None:
        raise ConfigError(["multicast: section required by the multicast command"])
    sysspec = cfg.system_by_id(mc.system)
    if sysspec.type == "softcast":
        raise ConfigError(["multicast.system: softcast carries no tokens"])
    members = [c for c in cfg.channels if c.group == mc.group]
    spec = cfg.frame_spec()
    layout = _layout(spec)
    cb = build_codebook(cfg)
    R = build_relevance(cb)

    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, _SEED_MULTICAST)))
    tokens = rng.integers(0, cb.K, size=mc.n_tokens)

    bank = dtx = dconf = None

    def build_frames():
        if sysspec.type == "wavebank":
            return _wavebank_frames(bank, tokens, spec)
        return digital_tx(dconf, tokens, spec).frames

    if sysspec.type == "wavebank":
        bank = build_bank(sysspec.bank, cfg, cb.K)
        fps = _system_fps(sysspec, spec, cb.K, bank=bank)
    else:
        dconf = _digital_config(sysspec, cb.K)
        dtx = digital_tx(dconf, tokens, spec)
        fps = _system_fps(sysspec, spec, cb.K)
    frames = build_frames()

    records = []
    for ri, member in enumerate(members):
        # one transmission: every receiver hears the same stream
        again = build_frames()
        assert np.array_equal(frames, again), "transmit streams diverged"
        model = build_channel(member, mc.snr_db)
        pad = _pad_margin(model, spec.fs)
        r_rng = np.random.default_rng(
            np.random.SeedSequence((cfg.seed, _SEED_MULTICAST, ri))
        )
        eq_slots = []
        noise_vars = []
        for f in range(frames.shape[0]):
            wave = modulate_frame(spec, layout, frames[f])
            padded = np.concatenate([wave, np.zeros(pad, dtype=np.complex128)])
            frame_model = replace(model, seed=int(r_rng.integers(0, 2**63 - 1)))
            rx = apply_channel(frame_model, padded, snr_db_override=mc.snr_db,
                               carrier_hz_tx=spec.carrier_hz, fs_tx=spec.fs)
            offset = detect_frame(spec, rx)
            head = rx[offset + spec.chirp_len : offset + spec.head_len]
            cfo = estimate_cfo(spec, head)
            eq_slots.append(demodulate_frame(spec, layout, rx, offset, cfo))
            p_core = float(np.mean(np.abs(rx[offset : offset + spec.frame_len]) ** 2))
            noise_vars.append(p_core / (1.0 + 10.0 ** (mc.snr_db / 10.0)))
        eq_all = np.concatenate(eq_slots)

        if sysspec.type == "wavebank":
            blocks = eq_all[: tokens.size * bank.L].reshape(tokens.size, bank.L)
            decoded = decode_many(bank, blocks)
            acc = token_accuracy(tokens, decoded)
            sl2 = semantic_l2(cb, tokens, decoded)
            bit_ber = _token_bit_ber(cb.K, tokens, decoded)
        else:
            res = digital_rx(dconf, dtx, eq_all, float(np.mean(noise_vars)))
            acc = res.token_accuracy
            sl2 = semantic_l2(cb, tokens, res.decoded_tokens)
            bit_ber = res.ber_post
        records.append(
            MetricRecord(channel_id=member.id, snr_db=mc.snr_db,
                         system_id=sysspec.id, token_accuracy=acc,
                         semantic_l2=sl2, ber=bit_ber, fps_equivalent=fps)
        )

    records.append(
        MetricRecord(
            channel_id=f"{mc.group}:mean",
            snr_db=mc.snr_db,
            system_id=sysspec.id,
            token_accuracy=float(np.mean([r.token_accuracy for r in records])),
            semantic_l2=float(np.mean([r.semantic_l2 for r in records])),
            ber=float(np.mean([r.ber for r in records])),
            fps_equivalent=fps,
        )
    )
    d = os.path.join(_exp_dir(cfg), "multicast")
    os.makedirs(d, exist_ok=True)
    save_metrics_csv(records, os.path.join(d, f"{mc.group}.csv"))
    for r in records:
        print(
            f"{r.channel_id}: acc {r.token_accuracy:.3f}  "
            f"l2 {r.semantic_l2:.3f}  ber {r.ber:.4f}"
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# ber


def cmd_ber(cfg: ExperimentConfig, jobs: int = 1) -> int:
    if not cfg.channels or not cfg.snr_grid:
        raise ConfigError(["ber: needs channels and snr_grid in the config"])
    spec = cfg.frame_spec()
    layout = _layout(spec)
    K = 1024  # full-size token alphabet; BER does not depend on content
    rows = []
    for ci, ch in enumerate(cfg.channels):
        for gi, snr in enumerate(cfg.snr_grid):
            for mi, mod in enumerate(cfg.ber.modulations):
                for fi, rate in enumerate(cfg.ber.fec_rates):
                    rng = np.random.default_rng(
                        np.random.SeedSequence(
                            (cfg.seed, _SEED_BER, ci, gi, mi, fi)
                        )
                    )
                    tokens = rng.integers(0, K, size=cfg.ber.n_tokens)
                    pipe_seed = int(rng.integers(0, 2**63 - 1))
                    code = None if rate is None else _code(cfg.ber.fec_n, rate)
                    dconf = DigitalConfig(K=K, modulation=mod, fec=code)
                    model = build_channel(ch, snr)
                    res = run_digital_pipeline(dconf, tokens, spec, layout,
                                               model, seed=pipe_seed,
                                               snr_db_override=snr)
                    rows.append(
                        (ch.id, snr, mod, "" if rate is None else rate,
                         res.ber_pre, res.ber_post)
                    )

    exp = _exp_dir(cfg)
    d = os.path.join(exp, "ber")
    os.makedirs(d, exist_ok=True)
    header = ["channel", "snr_db", "modulation", "fec", "ber_pre", "ber_post"]
    for ch in cfg.channels:
        with open(os.path.join(d, f"{ch.id}.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in rows:
                if row[0] == ch.id:
                    writer.writerow(row)
    with open(os.path.join(d, "summary.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    for row in rows:
        fec = row[3] if row[3] != "" else "none"
        print(
            f"{row[0]} @ {row[1]:g} dB {row[2]} fec={fec}: "
            f"pre {row[4]:.4f} post {row[5]:.4f}"
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradcheck


def cmd_gradcheck(cfg: ExperimentConfig, jobs: int = 1) -> int:
    gc = cfg.gradcheck if cfg.gradcheck is not None else GradcheckSpec()
    ids = gc.channels if gc.channels else tuple(c.id for c in cfg.channels)
    if not ids:
        raise ConfigError(["gradcheck: no channels to check"])
    spec = cfg.frame_spec()
    layout = _layout(spec)
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, _SEED_GRADCHECK)))
    cb = Codebook(rng.normal(size=(gc.K, 8)))
    R = build_relevance(cb)
    params = init_wavebank(K=gc.K, L=gc.L, seed=cfg.seed)
    tokens = rng.integers(0, gc.K, size=min(spec.data_slots // gc.L, 24))

    lines = []
    all_pass = True
    for cid in ids:
        model = build_channel(cfg.channel_by_id(cid), gc.snr_db)
        report = check_gradients(
            params, tokens, R, spec, layout, model, seed=cfg.seed,
            n_coords=gc.n_coords, snr_db_override=gc.snr_db,
            _corrupt_adjoint=gc.corrupt_adjoint,
        )
        all_pass = all_pass and report.passed
        lines.append(f"{cid}: {report}")
    d = os.path.join(_exp_dir(cfg), "gradcheck")
    os.makedirs(d, exist_ok=True)
    with open(os.path.join(d, "report.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    for line in lines:
        print(line)
    return EXIT_OK if all_pass else EXIT_NUMERIC


# ---------------------------------------------------------------------------
# entry point


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "multicast": cmd_multicast,
    "ber": cmd_ber,
    "gradcheck": cmd_gradcheck,
    "info": cmd_info,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="uwlink",
        description="underwater link experiment runner",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="YAML experiment config")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument("--trials", type=int, help="override trials per cell")
    parser.add_argument("--jobs", type=int, default=1,
                        help="worker processes for grid evaluation")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.out is not None:
            cfg = replace(cfg, out=args.out)
        if args.trials is not None:
            if args.trials < 1:
                raise ConfigError(["--trials: must be >= 1"])
            cfg = replace(cfg, trials=args.trials)
        return _COMMANDS[args.command](cfg, jobs=args.jobs)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainDivergence as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
