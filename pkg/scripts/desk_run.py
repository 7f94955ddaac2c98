#!/usr/bin/env python3
"""End-to-end smoke run: synthetic data, a short stage-1 run, generation, evaluation.

    python3 scripts/desk_run.py --out runs/desk --iterations 200

Prints one JSON line per phase and a final timing line.
"""

import argparse
import json
import sys
import time
from pathlib import Path

from loopgen.cli import main as loopgen


def step(name, argv):
    t0 = time.perf_counter()
    code = loopgen(argv)
    if code:
        sys.exit(f"{name} failed with exit code {code}")
    return time.perf_counter() - t0


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--iterations", type=int, default=200)
    ap.add_argument("--videos", type=int, default=8)
    ap.add_argument("--width", type=int, default=16, help="UNet width of the tiny network")
    ap.add_argument("--steps", type=int, default=25, help="sampler steps")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    conf = out / "stage1.conf"
    conf.write_text(f"stage = 1\nwidth = {args.width}\nctx_dim = {args.width}\nseed = {args.seed}\n")
    timings = {}
    timings["gen-data"] = step("gen-data", ["gen-data", "--out", str(out / "data"), "--count", str(args.videos),
                                            "--length", "43", "--size", "64", "--seed", str(args.seed)])
    timings["train"] = step("train", ["train", "--config", str(conf), "--manifest", str(out / "data/manifest.jsonl"),
                                      "--iterations", str(args.iterations), "--out", str(out / "stage1")])
    image = out / "data/video_0000/frames/frame_00000.png"
    caption = json.loads((out / "data/manifest.jsonl").read_text().splitlines()[0])["caption"]
    timings["generate"] = step("generate", ["generate", "--checkpoint", str(out / "stage1/stage1_final.ckpt"),
                                            "--image", str(image), "--caption", caption, "--out", str(out / "video"),
                                            "--steps", str(args.steps), "--seed", str(args.seed)])
    timings["evaluate"] = step("evaluate", ["evaluate", "--video-dir", str(out / "video"), "--input-image", str(image),
                                            "--report", str(out / "report.jsonl")])
    total = sum(timings.values())
    print(json.dumps({"timings_s": {k: round(v, 1) for k, v in timings.items()}, "total_s": round(total, 1),
                      "under_10_min": total < 600}))


if __name__ == "__main__":
    main()
