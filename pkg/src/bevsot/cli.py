"""Command-line operator surface: gen, train, track, eval, bench, gradcheck.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
failure. Every command is deterministic under a fixed seed, and every run
echoes its resolved configuration next to its outputs.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import config as cfgmod
from .bench import bench_attention, bench_csv
from .exceptions import ConfigError, DataFormatError, NumericError
from .gradcheck import gradcheck_params
from .metrics import ope, ope_csv
from .model import TrackerModel, motion_loss
from .params import load_checkpoint, save_checkpoint
from .scene import generate
from .seqio import (list_sequence_dirs, read_sequence, read_tracklet,
                    write_sequence, write_tracklet)
from .track import Tracklet, track_sequence, tracker_motion_model
from .train import make_training_samples, train


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(1)


def _add_config_args(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--preset", choices=["desk", "full"], default="desk",
                   help="desk (default) or the expensive full-scale preset")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--no-imm", action="store_true",
                   help="disable inter-frame motion gating (gate == 1)")
    p.add_argument("--no-dwc", action="store_true",
                   help="drop the shared depthwise conv from preprocessing")
    p.add_argument("--no-linear", action="store_true",
                   help="drop the shared linear layer from preprocessing")
    p.add_argument("--unshared", action="store_true",
                   help="separate previous-frame copies of CNN/linear/DWC weights")


def _build_config(args, base: cfgmod.RunConfig | None = None) -> cfgmod.RunConfig:
    cfg = base or cfgmod.RunConfig()
    if args.preset == "full":
        cfg = cfgmod.from_items(cfgmod.FULL_SCALE_OVERRIDES, cfg)
    if args.config:
        cfg = cfgmod.load_config(args.config, cfg)
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got '{item}'")
        key, val = item.split("=", 1)
        overrides[key.strip()] = val
    cfg = cfgmod.from_items(overrides, cfg)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.no_imm:
        cfg.imm = False
    if args.no_dwc:
        cfg.dwc = False
    if args.no_linear:
        cfg.linear = False
    if args.unshared:
        cfg.shared = False
    return cfg


def _run_dir(argout, tag) -> str:
    out = argout or os.path.join("runs", f"{tag}-{time.strftime('%Y%m%d-%H%M%S')}")
    os.makedirs(out, exist_ok=True)
    return out


def _generate_dataset(cfg: cfgmod.RunConfig, base_seed: int):
    n_static = round(cfg.static_fraction * cfg.sequences)
    seqs = []
    for i in range(cfg.sequences):
        seqs.append(generate(cfg.scene_config(seed=base_seed * 1000 + i,
                                              static=i < n_static)))
    return seqs


def cmd_gen(args) -> int:
    cfg = _build_config(args)
    out = _run_dir(args.out, "gen")
    cfgmod.save_config(cfg, os.path.join(out, "config.echo.cfg"))
    seqs = _generate_dataset(cfg, cfg.seed)
    for i, seq in enumerate(seqs):
        write_sequence(seq, os.path.join(out, f"seq_{i:03d}"),
                       meta={"seed": cfg.seed * 1000 + i})
    print(f"wrote {len(seqs)} sequences to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _build_config(args)
    out = _run_dir(args.out, "train")
    cfgmod.save_config(cfg, os.path.join(out, "config.echo.cfg"))
    model = TrackerModel(cfg.model_config(), seed=cfg.seed)
    if args.data:
        seqs = [read_sequence(d) for d in list_sequence_dirs(args.data)]
    else:
        seqs = _generate_dataset(cfg, cfg.seed)
    if cfg.crop_mode == "ratio":
        samples = make_training_samples(
            seqs, per_sequence_spec=lambda s: cfg.crop_spec(s.gt[0]))
    else:
        samples = make_training_samples(seqs, cfg.crop_spec())
    if not samples:
        raise DataFormatError("no training samples (are the sequences length >= 2?)")
    print(f"training on {len(samples)} frame pairs from {len(seqs)} sequences")

    log_path = os.path.join(out, "train_log.csv")
    n_alpha = len(model.alphas())
    with open(log_path, "w") as fh:
        cols = ["epoch", "lr", "loss"] + [f"alpha{s + 1}" for s in range(n_alpha)]
        fh.write(",".join(cols) + "\n")
        history = train(model, samples, cfg.train_settings(), log=print)
        for st in history:
            row = [str(st.epoch), repr(st.lr), repr(st.mean_loss)]
            row += [f"{a:.6f}" for a in st.alphas]
            fh.write(",".join(row) + "\n")
    ckpt = os.path.join(out, "checkpoint.bin")
    save_checkpoint(model.store, ckpt)
    print(f"checkpoint: {ckpt}")
    return 0


def cmd_track(args) -> int:
    cfg = _build_config(args)
    out = _run_dir(args.out, "track")
    cfgmod.save_config(cfg, os.path.join(out, "config.echo.cfg"))
    model = TrackerModel(cfg.model_config(), seed=cfg.seed)
    load_checkpoint(model.store, args.checkpoint)
    for seq_dir in list_sequence_dirs(args.data):
        seq = read_sequence(seq_dir)
        name = os.path.basename(os.path.normpath(seq_dir))
        spec = cfg.crop_spec(seq.gt[0]) if cfg.crop_mode == "ratio" else cfg.crop_spec()
        motion_model = tracker_motion_model(model, spec)
        tr = track_sequence(seq.frames, seq.gt[0], motion_model, sequence_id=name)
        tdir = os.path.join(out, name)
        os.makedirs(tdir, exist_ok=True)
        write_tracklet(tr.boxes, tr.coasted, os.path.join(tdir, "tracklet.txt"),
                       os.path.join(tdir, "tracklet.jsonl"))
        flagged = sum(tr.coasted)
        print(f"{name}: {len(tr.boxes)} boxes"
              + (f" ({flagged} coasted)" if flagged else ""))
    return 0


def cmd_eval(args) -> int:
    pairs = []
    if os.path.isfile(args.pred):
        pairs.append((args.pred, args.gt))
    else:
        for seq_dir in list_sequence_dirs(args.gt):
            name = os.path.basename(os.path.normpath(seq_dir))
            tfile = os.path.join(args.pred, name, "tracklet.txt")
            if not os.path.isfile(tfile):
                raise DataFormatError(f"no tracklet for sequence '{name}' under {args.pred}")
            pairs.append((tfile, seq_dir))
    out = _run_dir(args.out, "eval")
    successes, precisions = [], []
    for tfile, seq_dir in pairs:
        boxes = read_tracklet(tfile)
        seq = read_sequence(seq_dir)
        name = os.path.basename(os.path.normpath(seq_dir))
        result = ope(Tracklet(name, boxes, [False] * len(boxes)), seq.gt)
        with open(os.path.join(out, f"ope_{name}.csv"), "w") as fh:
            fh.write(ope_csv(result))
        successes.append(result.success_auc)
        precisions.append(result.precision_auc)
        print(f"{name}: success {result.success_auc:.4f} precision {result.precision_auc:.4f}")
    print(f"mean: success {np.mean(successes):.4f} precision {np.mean(precisions):.4f}")
    return 0


def cmd_bench(args) -> int:
    ns = [int(v) for v in args.ns.split(",")]
    records, slopes, report = bench_attention(ns, d=args.d, repeats=args.repeats,
                                              seed=args.seed or 0)
    out = _run_dir(args.out, "bench")
    with open(os.path.join(out, "bench.csv"), "w") as fh:
        fh.write(bench_csv(records))
    with open(os.path.join(out, "scaling_report.txt"), "w") as fh:
        fh.write(report)
    print(report, end="")
    expected = {"linear_core": 1.0, "softmax": 2.0, "motion_map": 2.0}
    ok = all(abs(slopes[k] - v) <= 0.15 for k, v in expected.items())
    return 0 if ok else 3


def cmd_gradcheck(args) -> int:
    # default to the small verification config; flags/files still override
    tiny = cfgmod.from_items({"grid": "16", "channels": "4", "head_trunk": "64"})
    cfg = _build_config(args, base=tiny)
    model = TrackerModel(cfg.model_config(), seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed + 1)
    model.randomize_all(rng)
    spec = cfg.crop_spec()
    seq = generate(cfg.scene_config(seed=cfg.seed + 2))
    sample = make_training_samples([seq], spec)[0]

    def f():
        pred = model.forward_clouds(sample.prev_pts, sample.curr_pts, spec)
        return motion_loss(pred, sample.target, model.config)

    t0 = time.perf_counter()
    errs = gradcheck_params(f, list(model.store.items()),
                            samples_per_param=args.samples, rng=rng)
    elapsed = time.perf_counter() - t0
    worst = max(errs.values())
    width = max(len(n) for n in errs)
    for name, err in errs.items():
        flag = "" if err < args.tol else "  <-- FAIL"
        print(f"{name:<{width}}  {err:.3e}{flag}")
    print(f"max relative error {worst:.3e} over {len(errs)} parameter groups "
          f"({elapsed:.1f}s)")
    return 0 if worst < args.tol else 3


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bevsot", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate labeled synthetic sequences")
    _add_config_args(g)
    g.add_argument("--out", help="output directory")
    g.set_defaults(fn=cmd_gen)

    t = sub.add_parser("train", help="train a tracker")
    _add_config_args(t)
    t.add_argument("--out", help="run directory")
    t.add_argument("--data", help="sequence directory (default: generate)")
    t.set_defaults(fn=cmd_train)

    k = sub.add_parser("track", help="run inference over sequences")
    _add_config_args(k)
    k.add_argument("--checkpoint", required=True)
    k.add_argument("--data", required=True, help="sequence dir or root of sequence dirs")
    k.add_argument("--out", help="output directory")
    k.set_defaults(fn=cmd_track)

    e = sub.add_parser("eval", help="one-pass evaluation of tracklets")
    e.add_argument("--pred", required=True, help="tracklet file or track output dir")
    e.add_argument("--gt", required=True, help="sequence dir or root")
    e.add_argument("--out", help="output directory for CSVs")
    e.set_defaults(fn=cmd_eval)

    b = sub.add_parser("bench", help="attention complexity scaling benchmark")
    b.add_argument("--ns", default="256,512,1024,2048", help="comma-separated token counts")
    b.add_argument("--d", type=int, default=16, help="head dimension")
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", help="output directory")
    b.set_defaults(fn=cmd_bench)

    c = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    _add_config_args(c)
    c.add_argument("--samples", type=int, default=6,
                   help="coordinates checked per parameter tensor")
    c.add_argument("--tol", type=float, default=1e-4)
    c.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
