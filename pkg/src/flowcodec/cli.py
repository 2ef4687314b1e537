"""Command-line interface.

Every subcommand accepts ``--config FILE``: a ``key = value`` file whose keys
are the long option names (dashes or underscores). Values from the file act as
defaults; flags given on the command line win.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__


def _load_frames(args, path=None):
    from .frame_io import load_sequence

    return load_sequence(
        path or args.input,
        format=getattr(args, "format", None),
        width=getattr(args, "width", None),
        height=getattr(args, "height", None),
        frame_count=getattr(args, "frames", None),
    )


def _save_frames(frames, path: Path, fps: float = 30.0) -> None:
    from .frame_io import write_png_dir, write_yuv420

    if path.suffix == ".npy":
        np.save(path, np.stack(frames).astype(np.float32))  # exact float frames
    elif path.suffix == ".yuv":
        write_yuv420(frames, path, fps)
    else:
        write_png_dir(frames, path)


def _write_rows(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def cmd_train(args) -> int:
    from .training import TrainConfig, train_schedule

    values = {}
    if args.train_config:
        from .frame_io import read_keyvalue

        values.update(read_keyvalue(args.train_config))
    for key in ("steps", "lr", "seed", "preset", "dataset", "crop", "batch_size"):
        if getattr(args, key) is not None:
            values[key] = getattr(args, key)
    if args.lambdas:
        values["lambdas"] = tuple(args.lambdas)
    config = TrainConfig.from_mapping(values)
    for path in train_schedule(config, args.out):
        print(path)
    return 0


def cmd_encode(args) -> int:
    from .checkpoint import load_checkpoint
    from .codec import encode_video

    ckpt = load_checkpoint(args.checkpoint)
    frames = _load_frames(args)
    res = encode_video(frames, ckpt, args.gop)
    Path(args.output).write_bytes(res.bitstream)
    if args.recon:
        _save_frames(res.reconstructions, Path(args.recon))
    if args.report:
        from .analysis import bit_breakdown

        _write_rows(Path(args.report), bit_breakdown(res.reports))
    print(f"{len(frames)} frames, {len(res.bitstream)} bytes, {res.bpp():.4f} bpp")
    return 0


def cmd_decode(args) -> int:
    from .checkpoint import load_checkpoint
    from .codec import decode_video

    frames = decode_video(Path(args.input).read_bytes(), load_checkpoint(args.checkpoint))
    _save_frames(frames, Path(args.output))
    print(f"decoded {len(frames)} frames to {args.output}")
    return 0


def cmd_eval(args) -> int:
    from .metrics import bpp, ms_ssim, psnr, sequence_psnr

    if args.checkpoints:
        return _eval_curve(args)
    if not args.decoded:
        raise SystemExit("eval needs --decoded (or --checkpoints to build a curve)")
    original = _load_frames(args)
    decoded = _load_frames(args, args.decoded)
    if len(original) != len(decoded):
        raise SystemExit(f"frame counts differ: {len(original)} vs {len(decoded)}")
    out = {
        "frames": len(original),
        "psnr_db": sequence_psnr(original, decoded),
        "msssim": float(np.mean([ms_ssim(a, b) for a, b in zip(original, decoded)])),
        "per_frame_psnr": [psnr(a, b) for a, b in zip(original, decoded)],
    }
    if args.bitstream:
        from .entropy.bitstream import read_bitstream

        header, coded = read_bitstream(Path(args.bitstream).read_bytes())
        bits = 8 * sum(len(f.motion_payload) + len(f.residual_payload) for f in coded)
        out["bpp"] = bpp(bits, header.width, header.height) / len(coded)
    print(json.dumps(out, indent=2))
    return 0


def _eval_curve(args) -> int:
    from .checkpoint import load_checkpoint
    from .evaluation import evaluate, rd_curve
    from .metrics import write_curve_csv

    frames = _load_frames(args)
    summaries = []
    for path in args.checkpoints:
        ckpt = load_checkpoint(path)
        summary = evaluate(ckpt, [frames], args.gop)
        p = summary.point()
        print(f"{path}: bpp {p.bpp:.4f} psnr {p.psnr_db:.2f} dB ms-ssim {p.msssim:.4f} "
              f"motion share {summary.mean('motion_fraction'):.3f}")
        summaries.append(summary)
    curve, problems = rd_curve(summaries, args.label)
    for msg in problems:
        print(f"ordering violation: {msg}", file=sys.stderr)
    if curve is None:
        return 1
    if args.curve:
        write_curve_csv(args.curve, curve)
    return 0


def cmd_bd(args) -> int:
    from .bd import bd_quality, bd_quality_piecewise, bd_rate, bd_rate_piecewise
    from .metrics import read_curve_csv

    anchor = read_curve_csv(args.anchor)
    test = read_curve_csv(args.test)
    report = {
        "metric": args.metric,
        "bd_rate_percent": bd_rate(anchor, test, args.metric),
        "bd_quality_db": bd_quality(anchor, test, args.metric),
        "bd_rate_percent_piecewise": bd_rate_piecewise(anchor, test, args.metric),
        "bd_quality_db_piecewise": bd_quality_piecewise(anchor, test, args.metric),
    }
    print(json.dumps(report, indent=2))
    return 0


def cmd_analyze(args) -> int:
    from .analysis import analyze_flow, bit_breakdown, motion_fraction
    from .checkpoint import load_checkpoint
    from .codec import encode_video

    ckpt = load_checkpoint(args.checkpoint)
    res = encode_video(_load_frames(args), ckpt, args.gop)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(out / "bits.csv", bit_breakdown(res.reports))
    summary = {"motion_fraction": motion_fraction(res.reports), "bpp": res.bpp()}
    if res.flows:
        stats = analyze_flow(res.flows)
        _write_rows(out / "flow_hist.csv", [{"magnitude": e, "count": c} for e, c in stats.as_rows()])
        summary.update(zero_flow_fraction=stats.zero_fraction, mean_flow_magnitude=stats.mean_magnitude)
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary, indent=2))
    return 0


def cmd_baseline(args) -> int:
    from .analysis import DATASET_GOPS, HEVC_FRAMES, emit_baseline_commands

    gop = args.gop if args.gop is not None else DATASET_GOPS[args.dataset]
    frames = args.frames if args.frames is not None else HEVC_FRAMES
    fps = int(args.fps) if float(args.fps).is_integer() else args.fps
    text = emit_baseline_commands(args.width, args.height, fps, frames, args.qualities, gop)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _sequence_args(p, frames_default=None):
    p.add_argument("--input", "-i", required=True, help="PNG directory or raw .yuv file")
    p.add_argument("--format", choices=("png-directory", "raw-planar-yuv420"))
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--frames", type=int, default=frames_default, help="number of frames to read")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowcodec", description="Learned end-to-end video codec.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model per lambda")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--train-config", help="training key-value file (lambdas, steps, ablation flags, ...)")
    p.add_argument("--lambdas", type=float, nargs="+")
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--crop", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--preset", choices=("full", "toy"))
    p.add_argument("--dataset", help='"synthetic" or a directory of sequences')
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="encode a sequence to a bitstream")
    _sequence_args(p)
    p.add_argument("--checkpoint", "-c", required=True)
    p.add_argument("--output", "-o", required=True)
    p.add_argument("--gop", type=int, default=10)
    p.add_argument("--recon", help="write encoder-side reconstructions (directory or .yuv)")
    p.add_argument("--report", help="per-frame bit report CSV")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decode a bitstream")
    p.add_argument("--input", "-i", required=True)
    p.add_argument("--checkpoint", "-c", required=True)
    p.add_argument("--output", "-o", required=True, help="PNG directory, .yuv file or .npy array")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="PSNR / MS-SSIM / bpp, or an RD curve over checkpoints")
    _sequence_args(p)
    p.add_argument("--decoded")
    p.add_argument("--bitstream")
    p.add_argument("--checkpoints", nargs="+", help="checkpoints in ascending lambda order")
    p.add_argument("--gop", type=int, default=10)
    p.add_argument("--curve", help="curve CSV output (label, bpp, psnr_db, msssim)")
    p.add_argument("--label", default="flowcodec")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bd", help="BD-rate and BD-quality between two curve CSVs")
    p.add_argument("anchor")
    p.add_argument("test")
    p.add_argument("--metric", choices=("psnr", "msssim_db"), default="psnr")
    p.set_defaults(func=cmd_bd)

    p = sub.add_parser("analyze", help="bit breakdown and flow-magnitude histogram")
    _sequence_args(p)
    p.add_argument("--checkpoint", "-c", required=True)
    p.add_argument("--gop", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("baseline-cmds", help="H.264 / H.265 reference command lines")
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--frames", type=int)
    p.add_argument("--dataset", choices=("HEVC", "UVG"), default="HEVC")
    p.add_argument("--gop", type=int)
    p.add_argument("--qualities", type=int, nargs="+", default=[15, 19, 23, 27])
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_baseline)

    for action in sub.choices.values():
        action.add_argument("--config", help="key = value file mirroring these flags")
    return parser


def _prescan(argv, commands):
    """(subcommand, config path) found in ``argv`` without full parsing."""
    command = next((tok for tok in argv if tok in commands), None)
    config = None
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            config = argv[i + 1]
        elif tok.startswith("--config="):
            config = tok.split("=", 1)[1]
    return command, config


def _apply_config(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    subparsers = parser._subparsers._group_actions[0].choices
    command, config = _prescan(argv, subparsers)
    if command is None or config is None:
        return parser.parse_args(argv)
    from .frame_io import read_keyvalue

    subparser = subparsers[command]
    known = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, raw in read_keyvalue(config).items():
        if key not in known or key in ("config", "help"):
            parser.error(f"{config}: unknown option {key!r} for {command}")
        action = known[key]
        if action.nargs in ("+", "*"):
            defaults[key] = [action.type(v) if action.type else v for v in raw.replace(",", " ").split()]
        elif isinstance(action, argparse._StoreTrueAction):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        else:
            defaults[key] = action.type(raw) if action.type else raw
    subparser.set_defaults(**defaults)
    for action in subparser._actions:
        if action.dest in defaults:
            action.required = False
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    args = _apply_config(parser, argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
