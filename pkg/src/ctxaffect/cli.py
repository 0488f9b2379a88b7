"""Command-line entry point.

Examples::

    ctxaffect --out runs/a gen-data
    ctxaffect --out runs/a train --stage text
    ctxaffect --out runs/a extract-features --modality text
    ctxaffect --out runs/a train --stage context-text
    ctxaffect --out runs/a evaluate --model context-text --split val
    ctxaffect grad-check
    ctxaffect --config configs/trend.txt --out runs/b pipeline
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import STAGES, Config, load_config
from .errors import CtxAffectError

log = logging.getLogger("ctxaffect")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctxaffect", description=__doc__.split("\n")[0])
    parser.add_argument("--config", type=Path, help="flat key = value config file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", type=Path, default=Path("run"), help="run directory (default: run)")
    parser.add_argument("--data", type=Path, help="dataset directory (default: <out>/data)")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", help="write a synthetic dataset")

    train = sub.add_parser("train", help="train one stage and write its checkpoint")
    train.add_argument("--stage", required=True, choices=STAGES)
    train.add_argument("--fusion", choices=("concat", "mcb"), help="fusion variant override")

    extract = sub.add_parser("extract-features", help="write stage-1 features for every utterance")
    extract.add_argument("--modality", choices=("text", "visual", "audio", "all"), default="all")

    ev = sub.add_parser("evaluate", help="print the metric report line of a trained model")
    ev.add_argument("--model", required=True,
                    help="checkpoint name, e.g. text, context-audio, fusion-mcb")
    ev.add_argument("--split", default="val", choices=("train", "val"))

    gc = sub.add_parser("grad-check", help="finite-difference check of every layer and stage loss")
    gc.add_argument("--seed", dest="gc_seed", type=int, default=0)

    pipe = sub.add_parser("pipeline", help="generate data (if absent), train all stages, report")
    pipe.add_argument("--fusions", default="concat,mcb", help="comma-separated fusion variants")
    return parser


def resolve_config(args) -> Config:
    config = load_config(args.config) if args.config else Config()
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    return config


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return _dispatch(args)
    except CtxAffectError as exc:
        log.error("%s", exc)
        return 2


def _dispatch(args) -> int:
    from . import pipeline

    config = resolve_config(args)
    data_dir = args.data or args.out / "data"

    if args.command == "gen-data":
        from .synthetic import generate_synthetic

        generate_synthetic(config, data_dir)
        return 0

    if args.command == "grad-check":
        from .gradcheck import run_gradient_suite

        results = run_gradient_suite(seed=args.gc_seed)
        failed = 0
        for r in results:
            print(r.line())
            failed += not r.passed
        return 1 if failed else 0

    if args.command == "pipeline":
        fusions = tuple(f for f in args.fusions.split(",") if f)
        report = pipeline.run_pipeline(config, data_dir, args.out, fusions)
        sys.stdout.write(report.read_text(encoding="utf-8"))
        return 0

    data = pipeline.load_dataset(data_dir, config)
    if args.command == "train":
        if args.fusion:
            config = config.replace(fusion=args.fusion)
        pipeline.train_stage(args.stage, config, data, args.out)
        return 0
    if args.command == "extract-features":
        modalities = pipeline.MODALITIES if args.modality == "all" else (args.modality,)
        for m in modalities:
            pipeline.extract_features(args.out, data, m)
        return 0
    if args.command == "evaluate":
        line = pipeline.evaluate(args.out, data, args.model, args.split)
        report = args.out / "eval" / f"{args.model}-{args.split}.csv"
        report.parent.mkdir(parents=True, exist_ok=True)
        pipeline.write_report([line], report)
        print(line)
        return 0
    raise AssertionError(args.command)


if __name__ == "__main__":
    sys.exit(main())
