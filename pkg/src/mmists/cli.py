"""Command-line interface: one executable with a subcommand per pipeline stage.

Every config key has a flag override (--<section>-<key>); flag values beat the
config file, which beats built-in defaults. --paper-mode applies the
full-scale hyperparameters before explicit flags are applied. Errors print a
single machine-parseable line `error:<Type>:<message>` and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import pipeline
from .config import RunConfig, field_specs, load_config
from .model import VARIANTS


def _bool_flag(raw):
    low = str(raw).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {raw!r}")


def _add_config_flags(parser):
    group = parser.add_argument_group("config overrides")
    for name, _section, _key, ftype in field_specs():
        flag = "--" + name.replace("_", "-")
        dest = f"cfg_{name}"
        if ftype in (bool, "bool"):
            group.add_argument(flag, dest=dest, type=_bool_flag, default=None,
                               metavar="BOOL")
        elif ftype in (int, "int"):
            group.add_argument(flag, dest=dest, type=int, default=None)
        elif ftype in (float, "float"):
            group.add_argument(flag, dest=dest, type=float, default=None)
        else:
            group.add_argument(flag, dest=dest, default=None)


def _add_common(parser, variant=False):
    parser.add_argument("--config", help="INI config file")
    parser.add_argument("--seed", type=int, default=None, help="root seed override")
    parser.add_argument("--data", help="dataset file (JSON lines)")
    parser.add_argument("--cache-dir", dest="cache_dir",
                        help="embedding cache dir (default: $MM_ISTS_CACHE)")
    parser.add_argument("--out", help="output file or directory")
    if variant:
        parser.add_argument("--variant", choices=VARIANTS, default="full")
    parser.add_argument("--paper-mode", action="store_true",
                        help="use the full-scale hyperparameter defaults")
    _add_config_flags(parser)


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.paper_mode:
        cfg.apply_paper_mode()
    if args.seed is not None:
        cfg.run_seed = args.seed
    for name, _section, _key, _ftype in field_specs():
        value = getattr(args, f"cfg_{name}", None)
        if value is not None:
            setattr(cfg, name, value)
    cfg.validate()
    return cfg


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mmists",
        description="Multimodal forecasting for irregularly sampled time series")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset file")
    _add_common(p)

    p = sub.add_parser("images", help="export irregularity images (MMI1)")
    _add_common(p)

    p = sub.add_parser("prompts", help="export text prompts (UTF-8)")
    _add_common(p)

    p = sub.add_parser("embed", help="fill an embedding cache synthetically")
    _add_common(p)

    p = sub.add_parser("train", help="train a model and save a checkpoint")
    _add_common(p, variant=True)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "test", "all"),
                   default="test")
    p.add_argument("--invert", action="store_true",
                   help="also report metrics in raw units")

    p = sub.add_parser("ablate", help="train the full model and all variants")
    _add_common(p)

    p = sub.add_parser("gradcheck", help="finite-difference check on a tiny model")
    _add_common(p)
    p.add_argument("--threshold", type=float, default=pipeline.GRADCHECK_THRESHOLD)
    p.add_argument("--eps", type=float, default=1e-6)

    p = sub.add_parser("dump-align", help="dump fusion attention and gating weights")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "test", "all"),
                   default="test")
    return parser


def _dispatch(args):
    cmd = args.command
    if cmd == "gen":
        return pipeline.run_gen(resolve_config(args), args.out), 0
    if cmd == "images":
        return pipeline.run_images(resolve_config(args), args.data, args.out), 0
    if cmd == "prompts":
        return pipeline.run_prompts(resolve_config(args), args.data, args.out), 0
    if cmd == "embed":
        return pipeline.run_embed(resolve_config(args), args.data, args.cache_dir), 0
    if cmd == "train":
        return pipeline.run_train(resolve_config(args), args.data, args.out,
                                  args.variant, args.cache_dir), 0
    if cmd == "eval":
        return pipeline.run_eval(args.data, args.checkpoint, args.split,
                                 args.cache_dir, args.invert), 0
    if cmd == "ablate":
        return pipeline.run_ablate(resolve_config(args), args.data, args.out,
                                   args.cache_dir), 0
    if cmd == "gradcheck":
        cfg = resolve_config(args)
        result = pipeline.run_gradcheck(cfg.run_seed, args.threshold, args.eps)
        return result, 0 if result["passed"] else 1
    if cmd == "dump-align":
        return pipeline.run_dump_align(args.data, args.checkpoint, args.out,
                                       args.split, args.cache_dir), 0
    raise ValueError(f"unknown command {cmd!r}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        result, code = _dispatch(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary, single-line report
        message = str(exc).replace("\n", " ")
        print(f"error:{type(exc).__name__}:{message}", file=sys.stderr)
        return 1
    print(json.dumps(result, indent=2, sort_keys=True))
    return code


if __name__ == "__main__":
    sys.exit(main())
