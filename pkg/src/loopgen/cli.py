"""Command line entry point: ``loopgen <command> ...``.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .alss import DEFAULT_STRIDES, AlssConfig, sample_reverse_strides, build_sequence
from .data import gen_synthetic, load_dataset, read_frames, read_mask, read_rgb, to_uint8, write_frames, write_manifest
from .errors import DataError, LoopGenError
from .metrics import evaluate
from .model import NetConfig, STAGE_GROUPS, init_unet, param_report, routing_preset
from .pipeline import generate_video
from .synth import SyntheticSpec, random_spec
from .train import StageConfig, begin_stage, load_state, run_stage


class UsageError(LoopGenError):
    exit_code = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _emit(record, fh=None) -> None:
    line = json.dumps(record, sort_keys=True)
    print(line, file=fh or sys.stdout)


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


# -- commands --------------------------------------------------------------------


def cmd_alss_sample(args) -> int:
    cfg = AlssConfig(s=args.s, f=args.f, allowed_strides=args.strides)
    rng = np.random.default_rng(args.seed)
    for _ in range(args.count):
        strides = sample_reverse_strides(cfg, rng)
        seq = build_sequence(cfg, strides)
        _emit({"indices": list(seq.indices), "turning_index": seq.turning_index, "reverse_strides": strides})
    return 0


def _load_specs(path: Path) -> list:
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read spec file {path}: {exc}") from None
    if isinstance(raw, dict):
        raw = raw.get("videos", [raw])
    try:
        return [SyntheticSpec(**item) for item in raw]
    except TypeError as exc:
        raise UsageError(f"{path}: {exc}") from None


def cmd_gen_data(args) -> int:
    out = Path(args.out)
    if args.spec:
        specs = _load_specs(Path(args.spec))
    else:
        rng = np.random.default_rng(args.seed)
        specs = [
            random_spec(rng, length=args.length, width=args.size, height=args.size) for _ in range(args.count)
        ]
    records = [gen_synthetic(spec, out, f"video_{i:04d}") for i, spec in enumerate(specs)]
    write_manifest(out / "manifest.jsonl", records)
    _emit({"manifest": str(out / "manifest.jsonl"), "videos": len(records)})
    return 0


def cmd_train(args) -> int:
    from .config import load_stage_config

    cfg = load_stage_config(
        args.config,
        stage=args.stage,
        iterations=args.iterations,
        manifest=args.manifest,
        out_dir=args.out,
        seed=args.seed,
    )
    if not cfg.manifest:
        raise UsageError("train needs a manifest (config key 'manifest' or --manifest)")
    previous = load_state(args.resume)[0] if args.resume else None
    state = begin_stage(cfg, previous)
    dataset = load_dataset(cfg.manifest)
    out_dir = cfg.out_dir or "runs"
    state, log = run_stage(cfg, state, dataset, out_dir=out_dir)
    losses = [r["loss"] for r in log]
    _emit(
        {
            "stage": cfg.stage,
            "iterations": state.iteration,
            "frames": cfg.frames,
            "first_loss": losses[0] if losses else None,
            "last_loss": losses[-1] if losses else None,
            "checkpoint": str(Path(out_dir) / f"stage{cfg.stage}_final.ckpt"),
        }
    )
    return 0


def cmd_generate(args) -> int:
    net, meta, _ = checkpoint.load(args.checkpoint)
    f = args.f or int(meta.get("f", 8))
    image = read_rgb(args.image)
    mask = read_mask(args.mask) if args.mask else None
    frames = generate_video(
        net, image, args.caption, f, num_steps=args.steps, seed=args.seed, mask=mask, init_mode=args.init
    )
    paths = write_frames(args.out, to_uint8(frames))
    _emit({"out": str(args.out), "frames": len(paths), "f": f})
    return 0


def cmd_evaluate(args) -> int:
    frames = read_frames(args.video_dir)
    image = read_rgb(args.input_image) if args.input_image else None
    record = evaluate(frames, image, video_id=args.video_id or Path(args.video_dir).name)
    if args.report:
        Path(args.report).parent.mkdir(parents=True, exist_ok=True)
        with open(args.report, "a") as fh:
            _emit(record, fh)
    _emit(record)
    return 0


def cmd_ablate_routing(args) -> int:
    dataset = load_dataset(args.manifest)
    presets = range(5) if args.preset == "all" else [int(args.preset)]
    out = Path(args.out)
    probe = dataset[0]
    for idx in presets:
        routing = routing_preset(idx)
        cfg = StageConfig.for_stage(
            1, iterations=args.iterations, routing_preset=idx, seed=args.seed, manifest=str(args.manifest)
        )
        state, log = run_stage(cfg, begin_stage(cfg), dataset, out_dir=out / f"preset_{idx}")
        frames = generate_video(
            state.net, probe.frames[0], probe.caption, cfg.f, num_steps=args.steps, seed=args.seed
        )
        write_frames(out / f"preset_{idx}" / "video", to_uint8(frames))
        tail = [r["loss"] for r in log[-max(1, len(log) // 10) :]]
        record = evaluate(frames, probe.frames[0], video_id=f"{probe.id}@preset{idx}")
        record.update(
            preset=idx,
            down=routing.down_source,
            middle=routing.middle_source,
            up=routing.up_source,
            final_loss=float(np.mean(tail)) if tail else None,
        )
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "ablation_report.jsonl", "a") as fh:
            _emit(record, fh)
        _emit(record)
    return 0


def cmd_params(args) -> int:
    if args.checkpoint:
        net = checkpoint.load(args.checkpoint)[0]
    else:
        net = init_unet(NetConfig(args.width, args.ctx_dim), seed=0)
    report = param_report(net)
    stages = {str(s): sum(report[g] for g in groups) for s, groups in STAGE_GROUPS.items()}
    _emit({"groups": report, "total": sum(report.values()), "stage_trainable": stages})
    return 0


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="loopgen", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("alss-sample", help="emit loop-structured frame index sequences")
    p.add_argument("--f", type=int, default=8)
    p.add_argument("--s", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--strides", type=_int_list, default=DEFAULT_STRIDES)
    p.set_defaults(func=cmd_alss_sample)

    p = sub.add_parser("gen-data", help="render a synthetic dataset and its manifest")
    p.add_argument("--spec", help="JSON file: one spec, a list, or {'videos': [...]}")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--length", type=int, default=43)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run one training stage")
    p.add_argument("--stage", type=int, choices=(1, 2, 3))
    p.add_argument("--config")
    p.add_argument("--resume", help="checkpoint of this stage (continue) or the previous one (start)")
    p.add_argument("--manifest")
    p.add_argument("--iterations", type=int)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="generate a looping clip from one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--caption", default="")
    p.add_argument("--mask")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--f", type=int, help="override the checkpoint's frame parameter")
    p.add_argument("--init", choices=("noise", "degraded"), default="noise")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="compute metrics for a directory of frames")
    p.add_argument("--video-dir", required=True)
    p.add_argument("--input-image")
    p.add_argument("--report")
    p.add_argument("--video-id")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate-routing", help="train and evaluate under routing presets")
    p.add_argument("--preset", choices=[str(i) for i in range(5)] + ["all"], default="all")
    p.add_argument("--manifest", required=True)
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--steps", type=int, default=25)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ablate_routing)

    p = sub.add_parser("params", help="parameter counts per group and per stage")
    p.add_argument("--checkpoint")
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--ctx-dim", type=int, default=32)
    p.set_defaults(func=cmd_params)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except LoopGenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FloatingPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
