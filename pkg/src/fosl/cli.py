"""``fosl`` command line.

Exit codes: 0 success, 1 usage error, 2 data or config error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import pipeline
from .exceptions import FoslError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON")
    common.add_argument("--out", help="run directory (default: config out_dir)")
    common.add_argument("--seed", type=int, help="override the config seed")

    p = _Parser(prog="fosl", description="Forced-oscillation source location from PMU time series.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="generate train and test corpora")
    s.add_argument("--keep-raw", action="store_true", help="also store noiseless full-length traces")

    sub.add_parser("select", parents=[common], help="forward quantity selection")

    s = sub.add_parser("train", parents=[common], help="learn metric and templates, write model")
    s.add_argument("--model", help="model file (default: <out>/model.json)")
    s.add_argument("--templates", type=int, help="templates per class")
    s.add_argument("--k", type=int, help="neighbors stored as the model default")
    s.add_argument("--skip-select", action="store_true", help="use the configured quantities")

    s = sub.add_parser("templates", parents=[common], help="rebuild templates of an existing model")
    s.add_argument("--model", help="model file (default: <out>/model.json)")
    s.add_argument("--templates", type=int, help="templates per class")

    s = sub.add_parser("classify", parents=[common], help="locate the source for one sample CSV")
    s.add_argument("--model", required=True)
    s.add_argument("--input", required=True, help="sample CSV")
    s.add_argument("--k", type=int)

    s = sub.add_parser("evaluate", parents=[common], help="score a model on the test corpus")
    s.add_argument("--model", help="model file (default: <out>/model.json)")
    s.add_argument("--k", type=int)
    return p


def _config(args) -> pipeline.PipelineConfig:
    cfg = pipeline.load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "templates", None) is not None:
        changes["templates"] = args.templates
    if args.command == "train" and args.k is not None:
        changes["k"] = args.k
    return replace(cfg, **changes) if changes else cfg


def _run(args) -> None:
    if args.command == "classify":
        bundle = pipeline.ModelBundle.load(args.model)
        record = pipeline.classify_file(bundle, args.input, args.k)
        print(f"predicted class: {record['predicted_class']}")
        for r in record["distances"][: record["k"]]:
            print(f"  G{r['label']}  shift {r['shift_s']:g} s  distance {r['distance']:.6g}")
        if args.out:
            Path(args.out).mkdir(parents=True, exist_ok=True)
            with open(Path(args.out) / "prediction.json", "w", encoding="utf-8", newline="\n") as fh:
                json.dump(record, fh, indent=1)
                fh.write("\n")
        return
    cfg = _config(args)
    if args.command == "simulate":
        train, test = pipeline.simulate(cfg, args.out, args.keep_raw)
        print(f"train: {len(train)} samples, test: {len(test)} samples")
    elif args.command == "select":
        doc = pipeline.select(cfg, args.out)
        print("selected:", ", ".join(doc["chosen_quantities"]))
    elif args.command == "train":
        bundle = pipeline.train(cfg, args.out, args.skip_select, args.model)
        meta = bundle.metric.training_meta
        print(
            f"quantities {', '.join(bundle.quantities)}; {meta['cycles_run']} cycles "
            f"({meta['stop_reason']}); {len(bundle.templates)} templates"
        )
    elif args.command == "templates":
        bundle = pipeline.rebuild_templates(cfg, args.out, args.model)
        print(f"{len(bundle.templates)} templates")
    elif args.command == "evaluate":
        _, _, table = pipeline.evaluate_run(cfg, args.out, args.model, args.k)
        print(table)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        _run(args)
    except FoslError as exc:
        print(f"fosl {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"fosl {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
