#!/usr/bin/env python3
"""Run the full three-stage schedule on synthetic data and evaluate after each stage.

    python3 scripts/three_stage.py --out runs/staged --scale 0.1

``--scale`` multiplies the desk budgets (2000 / 1000 / 1000 iterations).
Stage 1 trains on 43-frame clips; stages 2 and 3 need 103-frame clips.
"""

import argparse
import json
from pathlib import Path

import numpy as np

from loopgen.data import load_dataset
from loopgen.metrics import evaluate
from loopgen.pipeline import generate_video
from loopgen.train import STAGE_DEFAULTS, StageConfig, begin_stage, run_stage, smoothed
from loopgen.cli import main as loopgen


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/staged")
    ap.add_argument("--scale", type=float, default=1.0)
    ap.add_argument("--videos", type=int, default=8)
    ap.add_argument("--steps", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out)
    for name, length in (("short", 43), ("long", 103)):
        if not (out / name / "manifest.jsonl").exists():
            loopgen(["gen-data", "--out", str(out / name), "--count", str(args.videos),
                     "--length", str(length), "--seed", str(args.seed)])
    short = load_dataset(out / "short/manifest.jsonl")
    long = load_dataset(out / "long/manifest.jsonl")
    probe = long[0]

    state = None
    for stage in (1, 2, 3):
        iters = max(1, int(STAGE_DEFAULTS[stage]["iterations"] * args.scale))
        cfg = StageConfig.for_stage(stage, iterations=iters, seed=args.seed, checkpoint_every=max(1, iters // 4))
        state = begin_stage(cfg, state)
        state, log = run_stage(cfg, state, short if stage == 1 else long, out_dir=out / f"stage{stage}")
        losses = [r["loss"] for r in log]
        window = min(100, len(losses))
        sm = smoothed(losses, window)
        frames = generate_video(state.net, probe.frames[0], probe.caption, cfg.f, num_steps=args.steps, seed=args.seed)
        rec = evaluate(frames, probe.frames[0], video_id=probe.id)
        print(json.dumps({"stage": stage, "iterations": iters, "loss_start": sm[0], "loss_end": sm[-1],
                          **{k: rec[k] for k in ("frames", "mse_f0", "fc", "motion", "loop_c")}}))
        np.save(out / f"stage{stage}/probe_video.npy", frames)


if __name__ == "__main__":
    main()
