"""Command line bridge around a tokenizer artifact.

Three subcommands cover the file boundary with the link simulator:
``export-codebook`` writes the embedding table as SWCB1, ``tokenize``
encodes manifest clips into SWTS1 streams, and ``detokenize`` decodes a
received stream back to frames and, given references, scores it into a
metrics CSV row joinable with the simulator's experiment output.

Exit codes: 0 on success, 2 on any manifest, format, or file error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .clips import load_clip, prepare_clip
from .formats import (
    FormatError,
    read_token_stream,
    write_codebook,
    write_metrics_rows,
    write_token_stream,
)
from .manifest import ManifestError, load_manifest
from .quality import psnr, ssim
from .tokenizer import (
    EMB_DIM,
    FRAME_SIZE,
    TOKENS_PER_FRAME,
    decode_tokens,
    encode_frames,
    load_tokenizer,
)

EXIT_OK = 0
EXIT_ERROR = 2


def _artifact_for(manifest):
    """Load the manifest's model and check the declared K and D."""
    tok = load_tokenizer(manifest.model)
    if (tok.K, EMB_DIM) != (manifest.K, manifest.D):
        raise ManifestError(
            f"codebook: manifest declares K={manifest.K} D={manifest.D}, "
            f"model artifact holds K={tok.K} D={EMB_DIM}"
        )
    return tok


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def cmd_export(args) -> int:
    if args.manifest:
        man = load_manifest(args.manifest)
        if man.codebook_out is None:
            raise ManifestError("codebook_out: required to export from a manifest")
        tok = _artifact_for(man)
        out = args.out or man.codebook_out
    else:
        tok = load_tokenizer(args.model)
        out = args.out
        if out is None:
            raise FormatError("export-codebook: --out is required with --model")
    _ensure_parent(out)
    write_codebook(out, tok.embeddings)
    print(f"K={tok.K} D={EMB_DIM}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_tokenize(args) -> int:
    man = load_manifest(args.manifest)
    tok = _artifact_for(man)
    for entry in man.videos:
        clip = prepare_clip(load_clip(entry.path), FRAME_SIZE)
        tokens = encode_frames(tok, clip)
        _ensure_parent(entry.tokens)
        write_token_stream(entry.tokens, tokens, K=tok.K, frame_len=TOKENS_PER_FRAME)
        print(f"{entry.path} -> {entry.tokens}: {tokens.size} tokens "
              f"({clip.shape[0]} frames)")
    return EXIT_OK


def _bits_per_token(K: int) -> int:
    return max(1, int(np.ceil(np.log2(K))))


def _token_ber(sent, received, K: int) -> float:
    bits = _bits_per_token(K)
    diff = (sent.astype(np.int64) ^ received.astype(np.int64))[:, None]
    return float(np.mean((diff >> np.arange(bits)) & 1))


def cmd_detokenize(args) -> int:
    tok = load_tokenizer(args.model)
    tokens, stream_k, frame_len = read_token_stream(args.tokens)
    if stream_k != tok.K:
        raise FormatError(
            f"token stream K={stream_k} does not match tokenizer K={tok.K}"
        )
    if frame_len != TOKENS_PER_FRAME:
        raise FormatError(
            f"token stream frame_len={frame_len} does not match "
            f"tokens_per_frame={TOKENS_PER_FRAME}"
        )
    frames = decode_tokens(tok, tokens)
    os.makedirs(args.out_dir, exist_ok=True)
    frames_path = os.path.join(args.out_dir, "frames.npy")
    with open(frames_path, "wb") as fh:
        np.save(fh, frames.astype(np.float32))
    print(f"wrote {frames_path}: {frames.shape[0]} frames")

    reference = None
    if args.reference_clip:
        reference = prepare_clip(load_clip(args.reference_clip), FRAME_SIZE)
        if reference.shape[0] != frames.shape[0]:
            raise FormatError(
                f"reference clip has {reference.shape[0]} frames, "
                f"stream decodes to {frames.shape[0]}"
            )
        print(f"psnr {psnr(reference, frames):.2f} dB "
              f"ssim {ssim(reference, frames):.4f}")

    if args.metrics_out:
        needed = {
            "--reference-clip": args.reference_clip,
            "--reference-tokens": args.reference_tokens,
            "--channel-id": args.channel_id,
            "--snr-db": args.snr_db,
            "--system-id": args.system_id,
            "--fps-equivalent": args.fps_equivalent,
        }
        missing = sorted(flag for flag, value in needed.items() if value is None)
        if missing:
            raise FormatError(f"--metrics-out needs {', '.join(missing)}")
        sent, ref_k, ref_len = read_token_stream(args.reference_tokens)
        if ref_k != tok.K or ref_len != frame_len:
            raise FormatError(
                f"reference stream (K={ref_k}, frame_len={ref_len}) does not "
                f"match received stream (K={tok.K}, frame_len={frame_len})"
            )
        if sent.size != tokens.size:
            raise FormatError(
                f"reference stream has {sent.size} tokens, received has {tokens.size}"
            )
        emb = tok.embeddings.astype(np.float64)
        l2 = np.linalg.norm(emb[sent.astype(np.int64)] - emb[tokens.astype(np.int64)],
                            axis=1)
        row = {
            "channel_id": args.channel_id,
            "snr_db": args.snr_db,
            "system_id": args.system_id,
            "token_accuracy": float(np.mean(sent == tokens)),
            "semantic_l2": float(np.mean(l2)),
            "ber": _token_ber(sent, tokens, tok.K),
            "fps_equivalent": args.fps_equivalent,
            "psnr_db": psnr(reference, frames),
            "ssim": ssim(reference, frames),
        }
        _ensure_parent(args.metrics_out)
        write_metrics_rows(args.metrics_out, [row])
        print(f"wrote {args.metrics_out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tokadapter",
        description="export tokenizer codebooks, tokenize clips, decode token streams",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_exp = sub.add_parser("export-codebook", help="write the codebook as SWCB1")
    src = p_exp.add_mutually_exclusive_group(required=True)
    src.add_argument("--model", help="tokenizer artifact (.npz)")
    src.add_argument("--manifest", help="manifest whose model and codebook_out to use")
    p_exp.add_argument("--out", help="output SWCB1 path")
    p_exp.set_defaults(func=cmd_export)

    p_tok = sub.add_parser("tokenize", help="encode manifest clips into SWTS1")
    p_tok.add_argument("--manifest", required=True)
    p_tok.set_defaults(func=cmd_tokenize)

    p_det = sub.add_parser("detokenize", help="decode a SWTS1 stream to frames")
    p_det.add_argument("--model", required=True, help="tokenizer artifact (.npz)")
    p_det.add_argument("--tokens", required=True, help="received SWTS1 stream")
    p_det.add_argument("--out-dir", required=True)
    p_det.add_argument("--reference-clip", help="original clip for PSNR/SSIM")
    p_det.add_argument("--reference-tokens", help="transmitted SWTS1 stream")
    p_det.add_argument("--metrics-out", help="write one metrics CSV row here")
    p_det.add_argument("--channel-id")
    p_det.add_argument("--snr-db", type=float)
    p_det.add_argument("--system-id")
    p_det.add_argument("--fps-equivalent", type=float,
                       help="link throughput of the joined experiment cell")
    p_det.set_defaults(func=cmd_detokenize)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        path = exc.filename if exc.filename else exc
        print(f"error: missing file: {path}", file=sys.stderr)
        return EXIT_ERROR
    except (FormatError, ManifestError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
