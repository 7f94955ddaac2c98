#!/usr/bin/env python3
"""Stage-3 fine-tuning with different temporal-module subsets.

    python3 scripts/temm_subset_ablation.py --out runs/temm --iterations 200

Starts every variant from the same stage-2 state and reports trainable
parameter count and smoothed final loss. Variants: Q+V (the default),
Q+K+V, and the whole temporal module.
"""

import argparse
import json
from pathlib import Path

from loopgen.cli import main as loopgen
from loopgen.data import load_dataset
from loopgen.model import param_report
from loopgen.train import StageConfig, begin_stage, run_stage, smoothed

VARIANTS = {
    "QV": {"conv_in", "TEMM.Q", "TEMM.V"},
    "QKV": {"conv_in", "TEMM.Q", "TEMM.K", "TEMM.V"},
    "TEMM": {"conv_in", "TEMM.Q", "TEMM.K", "TEMM.V", "TEMM.other"},
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/temm")
    ap.add_argument("--iterations", type=int, default=200)
    ap.add_argument("--warmup", type=int, default=100, help="stage-1 and stage-2 iterations before branching")
    ap.add_argument("--videos", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out)
    if not (out / "data/manifest.jsonl").exists():
        loopgen(["gen-data", "--out", str(out / "data"), "--count", str(args.videos), "--length", "103",
                 "--seed", str(args.seed)])
    data = load_dataset(out / "data/manifest.jsonl")

    cfg1 = StageConfig.for_stage(1, iterations=args.warmup, seed=args.seed)
    s1, _ = run_stage(cfg1, begin_stage(cfg1), data)
    cfg2 = StageConfig.for_stage(2, iterations=args.warmup, seed=args.seed)
    s2, _ = run_stage(cfg2, begin_stage(cfg2, s1), data)

    counts = param_report(s2.net)
    for name, groups in VARIANTS.items():
        cfg = StageConfig.for_stage(3, iterations=args.iterations, trainable=groups, seed=args.seed)
        state = begin_stage(cfg, s2)
        state.net = state.net.copy()
        _, log = run_stage(cfg, state, data)
        losses = [r["loss"] for r in log]
        sm = smoothed(losses, min(50, len(losses)))
        print(json.dumps({"variant": name, "trainable_params": sum(counts[g] for g in groups),
                          "loss_start": sm[0], "loss_end": sm[-1]}))


if __name__ == "__main__":
    main()
