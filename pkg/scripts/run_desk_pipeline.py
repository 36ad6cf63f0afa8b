#!/usr/bin/env python3
"""End-to-end desk-scale pipeline: generate data, train briefly, track the
held-out sequences, evaluate, and run the attention scaling benchmark.

Usage: python scripts/run_desk_pipeline.py [workdir] [--steps N]
"""

import argparse
import os
import sys

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")  # stable benchmark timings

from bevsot.cli import main as bevsot  # noqa: E402


def sh(args):
    print(f"\n$ bevsot {' '.join(str(a) for a in args)}", flush=True)
    code = bevsot([str(a) for a in args])
    if code != 0:
        sys.exit(code)


def run(workdir: str, steps: int):
    data = os.path.join(workdir, "data")
    val = os.path.join(workdir, "val")
    run_dir = os.path.join(workdir, "run")
    trk = os.path.join(workdir, "tracklets")
    ev = os.path.join(workdir, "eval")

    sh(["gen", "--out", data, "--seed", 0])
    sh(["gen", "--out", val, "--seed", 9, "--set", "sequences=8"])
    sh(["train", "--out", run_dir, "--data", data, "--seed", 0,
        "--set", f"max_steps={steps}", "--set", "epochs=1000"])
    ckpt = os.path.join(run_dir, "checkpoint.bin")
    sh(["track", "--checkpoint", ckpt, "--data", val, "--out", trk, "--seed", 0])
    sh(["eval", "--pred", trk, "--gt", val, "--out", ev])
    sh(["bench", "--out", os.path.join(workdir, "bench")])
    sh(["gradcheck", "--samples", "4"])
    print(f"\nartifacts under {workdir}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("workdir", nargs="?", default="runs/desk_pipeline")
    ap.add_argument("--steps", type=int, default=200)
    args = ap.parse_args()
    run(args.workdir, args.steps)
