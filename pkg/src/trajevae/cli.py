"""``trajevae`` command line: gen-data, train, sample, evaluate, selftest.

Exit codes: 0 success, 1 usage or configuration error, 2 data error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .checkpoint import CheckpointError, load_checkpoint
from .metrics import evaluate
from .model import ModelConfigError
from .motion_data import (
    FAMILIES, MotionDataError, PoseSequence, Skeleton, UnknownJointError, generate_synthetic,
    load_corpus, make_trajectories, save_corpus, select_named_joints,
)
from .training import NonFiniteLossError, TrainConfigError, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    for section in ("model", "train"):
        group = p.add_argument_group(f"{section} settings (override --config and --profile)")
        full = cfgmod.defaults(section, "full")
        desk = cfgmod.defaults(section, "desk")
        for name in cfgmod.field_types(section):
            note = f"default {full[name]}"
            if desk[name] != full[name]:
                note += f", desk {desk[name]}"
            group.add_argument(f"--{section}.{name}", dest=f"{section}.{name}", metavar="V",
                               default=argparse.SUPPRESS, help=note)


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="trajevae", description="Trajectory-conditioned motion generation.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic corpus", formatter_class=fmt)
    p.add_argument("--out", required=True, help="corpus file to write")
    p.add_argument("--sequences", type=int, default=100, help="number of records")
    p.add_argument("--frames", type=int, default=41, help="frames per record, initial pose included")
    p.add_argument("--joints", type=int, default=17, help="skeleton size")
    p.add_argument("--family", choices=FAMILIES, default="sinusoidal", help="motion family")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train a model", formatter_class=fmt)
    p.add_argument("--data", default=None, help="corpus file (or data.path in --config)")
    p.add_argument("--config", default=None, help="key = value file with model.*/train.*/data.* keys")
    p.add_argument("--out-dir", default=None, help="output directory (or data.out_dir, default 'run')")
    p.add_argument("--steps", type=int, default=None, help="shorthand for --train.total_steps")
    p.add_argument("--seed", type=int, default=None, help="shorthand for --train.seed")
    p.add_argument("--profile", choices=("full", "desk"), default="full",
                   help="base defaults: full-scale or small CPU widths")
    _add_config_flags(p)

    p = sub.add_parser("sample", help="generate motions for one corpus sequence", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="corpus holding the source sequence")
    p.add_argument("--sequence-id", required=True)
    p.add_argument("--joints", default="",
                   help="comma list of visible joints, e.g. rfoot,lfoot,rhand,lhand; empty means k=0")
    p.add_argument("--num-samples", type=int, default=1)
    p.add_argument("--mean", action="store_true", help="decode the prior mean once")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output file in corpus format")

    p = sub.add_parser("evaluate", help="metric table over a corpus", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--k-list", default="0,1,2,3,4", help="numbers of visible trajectories")
    p.add_argument("--num-samples", type=int, default=50, help="samples K per item")
    p.add_argument("--epsilon", type=float, default=0.5, help="initial-pose radius of multimodal groups")
    p.add_argument("--cross-pair", action="store_true", help="also run cross-pair evaluation")
    p.add_argument("--epsilon0", type=float, default=0.01, help="cross-pair matching radius")
    p.add_argument("--mean", action="store_true", help="use prior means instead of samples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="write the table as JSON")

    p = sub.add_parser("selftest", help="run built-in correctness checks", formatter_class=fmt)
    p.add_argument("--full", action="store_true", help="full instance counts (slower)")
    return parser


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected a comma list of integers, got {text!r}") from None


def cmd_gen_data(args) -> int:
    if args.sequences < 1 or args.frames < 2 or args.joints < 1:
        raise UsageError("--sequences >= 1, --frames >= 2 and --joints >= 1 are required")
    skeleton = Skeleton.with_joints(args.joints)
    seqs = generate_synthetic(args.sequences, args.frames, skeleton, args.family,
                              np.random.default_rng(args.seed))
    save_corpus(seqs, args.out)
    print(f"wrote {len(seqs)} records to {args.out}")
    return EXIT_OK


def resolve_train_config(args) -> cfgmod.RunConfig:
    file_values = cfgmod.read_file(args.config) if args.config else {}
    flags = {}
    for key in cfgmod.all_keys():
        text = getattr(args, key, None)
        if text is not None:
            flags[key] = cfgmod.parse_value(key, text)
    if args.steps is not None:
        flags["train.total_steps"] = args.steps
    if args.seed is not None:
        flags["train.seed"] = args.seed
    if args.data is not None:
        flags["data.path"] = args.data
    if args.out_dir is not None:
        flags["data.out_dir"] = args.out_dir
    run = cfgmod.resolve(file_values, flags, args.profile)
    if not run.data.path:
        raise UsageError("no corpus given: pass --data or set data.path in --config")
    return run


def cmd_train(args) -> int:
    run = resolve_train_config(args)
    corpus = load_corpus(run.data.path, joint_count=run.model.joints, min_frames=run.model.frames)
    if not corpus:
        raise MotionDataError(f"corpus {run.data.path} is empty")
    out_dir = Path(run.data.out_dir)
    result = train(corpus, run.model, run.train, out_dir=out_dir)
    losses = result.losses()
    print(f"trained {run.train.total_steps} steps; final loss {losses[-1]:.4f}; "
          f"checkpoint {out_dir / 'final.ckpt'}")
    return EXIT_OK


def _find(corpus: list[PoseSequence], seq_id: str) -> PoseSequence:
    for seq in corpus:
        if seq.id == seq_id:
            return seq
    raise MotionDataError(f"unknown sequence id {seq_id!r} in corpus")


def cmd_sample(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    cfg = model.config
    corpus = load_corpus(args.data, joint_count=cfg.joints)
    seq = _find(corpus, args.sequence_id)
    if seq.length < cfg.frames:
        raise MotionDataError(f"sequence {seq.id!r} has {seq.length} frames, model needs {cfg.frames}")
    if seq.length > cfg.frames:
        seq = seq.window(0, cfg.frames)
    skeleton = Skeleton.with_joints(cfg.joints)
    names = [n.strip() for n in args.joints.split(",") if n.strip()]
    try:
        mask = select_named_joints(names, skeleton)
    except UnknownJointError as exc:
        raise UsageError(str(exc)) from None
    if not args.mean and args.num_samples < 1:
        raise UsageError("--num-samples must be at least 1")
    mode = "mean" if args.mean else "sample"
    samples = model.generate(seq.initial_pose, make_trajectories(seq, mask), args.num_samples,
                             mode, np.random.default_rng(args.seed))
    visible = [skeleton.names[i] for i in mask.visible_joints]
    out = []
    for i, frames in enumerate(samples):
        meta = {"source_id": seq.id, "checkpoint": str(args.checkpoint), "mode": mode,
                "visible_joints": visible, "k": mask.k, "sample_index": i,
                "seed": None if args.mean else args.seed}
        out.append(PoseSequence(seq.initial_pose, frames, seq.fps, seq.action_label,
                                f"{seq.id}/sample-{i:03d}", meta))
    save_corpus(out, args.out)
    print(f"wrote {len(out)} records (k={mask.k}) to {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    corpus = load_corpus(args.data, joint_count=model.config.joints)
    k_list = _int_list(args.k_list)
    if not k_list:
        raise UsageError("--k-list is empty")
    if args.num_samples < 1 or args.epsilon <= 0 or args.epsilon0 <= 0:
        raise UsageError("--num-samples, --epsilon and --epsilon0 must be positive")
    try:
        table = evaluate(model, corpus, k_list, 1 if args.mean else args.num_samples, args.epsilon,
                         np.random.default_rng(args.seed), "mean" if args.mean else "sample",
                         cross_pair_epsilon0=args.epsilon0 if args.cross_pair else None)
    except MotionDataError as exc:
        raise UsageError(str(exc)) from None
    table.meta.update({"checkpoint": str(args.checkpoint), "data": str(args.data), "seed": args.seed})
    print(table.format())
    if args.out:
        Path(args.out).write_text(table.dumps() + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import main as selftest_main

    ok, text = selftest_main(fast=not args.full)
    print(text)
    return EXIT_OK if ok else EXIT_NUMERIC


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "sample": cmd_sample,
            "evaluate": cmd_evaluate, "selftest": cmd_selftest}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help or a usage error
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, cfgmod.ConfigError, ModelConfigError, TrainConfigError) as exc:
        print(f"trajevae: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteLossError as exc:
        print(f"trajevae: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (MotionDataError, CheckpointError, OSError, ValueError) as exc:
        print(f"trajevae: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
