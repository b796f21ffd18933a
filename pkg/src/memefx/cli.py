"""Command-line entry point: ``memefx <subcommand> [options]``.

Exit codes: 0 success, 2 configuration or contract error, 3 data integrity error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from . import pipeline
from .config import EXAMPLE, RunConfig
from .data import generate_synthetic
from .errors import ContractError, DataError
from .extractors import ARCH_TAPS, FeatureTap
from .classifiers import FAMILIES

TAPS = [t.value for t in FeatureTap]


def _common(p, config=True):
    if config:
        p.add_argument("--config", required=True, help="YAML run configuration")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--out", help="override the output directory")


def build_parser():
    parser = argparse.ArgumentParser(prog="memefx", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="write a synthetic meme corpus and a config for it")
    _common(p, config=False)
    p.add_argument("--n-per-class", type=int, default=60)
    p.add_argument("--separability", type=float, default=0.9)
    p.add_argument("--image-size", type=int, default=32)

    p = sub.add_parser("preprocess", help="split, tokenize, build vocabulary, encode images")
    _common(p)

    p = sub.add_parser("train-extractor", help="train one multimodal extractor")
    _common(p)
    p.add_argument("--arch", required=True, choices=sorted(ARCH_TAPS))

    p = sub.add_parser("extract", help="write tapped feature files")
    _common(p)
    p.add_argument("--tap", required=True, choices=TAPS)
    p.add_argument("--split", nargs="+", default=["train", "test"], choices=pipeline.PARTS)

    for name, help_ in (("train-classifier", "fit classifiers on training features"),
                        ("evaluate-cv", "stratified k-fold macro-F1 on training features"),
                        ("evaluate-test", "macro-F1 of trained classifiers on test features")):
        p = sub.add_parser(name, help=help_)
        _common(p)
        p.add_argument("--tap", required=True, choices=TAPS)
        p.add_argument("--family", choices=FAMILIES, help="default: every classifier in the config")
        p.add_argument("--k", type=int, help="neighbours for --family knn")

    p = sub.add_parser("report", help="aggregate CV and test results into report.txt")
    _common(p)
    return parser


def _load(args):
    return RunConfig.load(args.config).with_overrides(args.seed, args.out)


def run(args):
    if args.command == "synth-data":
        out = args.out or "synthetic"
        seed = 0 if args.seed is None else args.seed
        generate_synthetic(out, args.n_per_class, args.separability, seed, image_size=args.image_size)
        with open(os.path.join(out, "config.yaml"), "w", encoding="utf-8") as fh:
            fh.write(EXAMPLE.replace("seed: 7", f"seed: {seed}").replace(
                "image_size: [32, 32]", f"image_size: [{args.image_size}, {args.image_size}]"))
        print(f"wrote synthetic corpus to {out}")
        return
    cfg = _load(args)
    if args.command == "preprocess":
        prepared = pipeline.preprocess(cfg)
        print(", ".join(f"{p}={len(i)}" for p, i in prepared.parts.items()))
    elif args.command == "train-extractor":
        ext = pipeline.train_extractor(cfg, args.arch)
        lg = ext.train_log_
        print(f"{args.arch}: stopped at epoch {lg.stopped_epoch}, best epoch {lg.best_epoch}, "
              f"val loss {lg.val_loss[lg.best_epoch - 1]:.6f}")
    elif args.command == "extract":
        for path in pipeline.extract(cfg, args.tap, args.split):
            print(path)
    elif args.command == "train-classifier":
        for path in pipeline.train_classifiers(cfg, args.tap, args.family, args.k):
            print(path)
    elif args.command == "evaluate-cv":
        for name, rep in pipeline.evaluate_cv(cfg, args.tap, args.family, args.k).items():
            print(f"{name}: mean {100 * rep.mean:.2f} min {100 * rep.min:.2f} "
                  f"max {100 * rep.max:.2f} std {100 * rep.std:.2f}")
    elif args.command == "evaluate-test":
        for name, score in pipeline.evaluate_test(cfg, args.tap, args.family, args.k).items():
            print(f"{name}: {100 * score:.2f}")
    elif args.command == "report":
        sys.stdout.write(pipeline.report(cfg))


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
