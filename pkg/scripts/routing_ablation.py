#!/usr/bin/env python3
"""Train a short stage 1 under each of the five cross-attention routings and compare.

    python3 scripts/routing_ablation.py --out runs/routing --iterations 300

Writes ``ablation_report.jsonl`` under ``--out`` and prints a table. At this
scale the numbers show that the presets are wired differently, not which
one is better.
"""

import argparse
import json
from pathlib import Path

from loopgen.cli import main as loopgen

COLUMNS = ("preset", "down", "middle", "up", "final_loss", "mse_f0", "fc", "motion", "loop_c")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/routing")
    ap.add_argument("--iterations", type=int, default=300)
    ap.add_argument("--steps", type=int, default=20)
    ap.add_argument("--videos", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out)
    data = out / "data"
    if not (data / "manifest.jsonl").exists():
        loopgen(["gen-data", "--out", str(data), "--count", str(args.videos), "--seed", str(args.seed)])
    report = out / "ablation_report.jsonl"
    report.unlink(missing_ok=True)
    code = loopgen(["ablate-routing", "--preset", "all", "--manifest", str(data / "manifest.jsonl"),
                    "--iterations", str(args.iterations), "--steps", str(args.steps), "--out", str(out),
                    "--seed", str(args.seed)])
    if code:
        raise SystemExit(code)

    rows = [json.loads(line) for line in report.read_text().splitlines()]
    print("\n" + " | ".join(f"{c:>10}" for c in COLUMNS))
    for r in rows:
        cells = [r[c] if not isinstance(r[c], float) else f"{r[c]:.4f}" for c in COLUMNS]
        print(" | ".join(f"{str(x):>10}" for x in cells))


if __name__ == "__main__":
    main()
