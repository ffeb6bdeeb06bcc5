"""edm3d command line: train, search, eval, predict, dataset-stats.

Exit codes: 0 success, 1 usage, 2 data/format, 3 numeric divergence.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import augment, layers
from .dataset import LabelMap, class_counts, decode_image, scan_dataset, stratified_split
from .errors import DataError, NumericDivergenceError
from .modelio import load_model, save_model
from .training import TrainConfig, depth_search, evaluate, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _add_training_flags(p):
    p.add_argument("--data", required=True, help="dataset root with one directory per class")
    p.add_argument("--task", required=True, choices=["binary", "multi"])
    p.add_argument("--epochs", required=True, type=int)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--depth", type=int, default=5)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--input-size", type=int, default=256)
    p.add_argument("--split", type=float, default=0.8, help="train fraction per class")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="edm3d", description="3D-printer fault detection CNN")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train one model")
    _add_training_flags(p)

    p = sub.add_parser("search", help="depth-pruning search")
    _add_training_flags(p)
    p.add_argument("--max-depth", type=int, default=10)
    p.add_argument("--threshold", type=float, default=0.90)
    p.add_argument("--report", required=True, help="CSV report to write")
    p.add_argument("--workers", type=int, default=1, help="train depths in parallel processes")

    p = sub.add_parser("eval", help="accuracy and confusion matrix on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--batch", type=int, default=32)

    p = sub.add_parser("predict", help="class probabilities for one image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)

    p = sub.add_parser("dataset-stats", help="per-class image counts")
    p.add_argument("--data", required=True)
    p.add_argument("--task", required=True, choices=["binary", "multi"])
    return ap


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        task=args.task, epochs=args.epochs, learning_rate=args.lr, momentum=args.momentum,
        batch_size=args.batch, seed=args.seed, input_size=args.input_size, depth=args.depth,
        threshold=getattr(args, "threshold", 0.90),
    )


def _split(args):
    return stratified_split(scan_dataset(args.data, args.task), args.split, args.seed)


def run_train(args, out) -> int:
    config = _train_config(args)
    split = _split(args)

    def report(epoch, loss, acc):
        print(f"epoch={epoch} loss={loss:.6f} test_acc={acc:.6f}", file=out, flush=True)

    model, metrics = train(config, split, on_epoch=report)
    save_model(model, args.out)
    print(f"final_test_acc={metrics.accuracy:.6f}", file=out)
    return EXIT_OK


def run_search(args, out) -> int:
    config = _train_config(args)
    split = _split(args)
    model, report = depth_search(config, split, args.max_depth, workers=args.workers)
    save_model(model, args.out)
    Path(args.report).write_text(report.to_csv())
    for r in report.records:
        print(f"depth={r.depth} params={r.params} test_acc={r.test_accuracy:.6f} passed={str(r.passed).lower()}", file=out)
    print(f"selected_depth={report.selected_depth} fallback={str(report.fallback_used).lower()}", file=out)
    return EXIT_OK


def run_eval(args, out) -> int:
    model = load_model(args.model)
    samples = scan_dataset(args.data, model.config.task)
    metrics = evaluate(model, samples, args.batch)
    print(f"accuracy={metrics.accuracy:.6f}", file=out)
    for name, row in zip(model.config.class_names, metrics.confusion):
        print("\t".join([name, *map(str, row)]), file=out)
    return EXIT_OK


def run_predict(args, out) -> int:
    model = load_model(args.model)
    x = augment.apply_eval(decode_image(args.image), model.config.input_size)[None]
    logits = model.forward(x)[0]
    probs = layers.softmax(logits[None].astype(np.float64))[0]
    # stable sort keeps lower class ids first among equal probabilities
    for i in sorted(range(len(probs)), key=lambda i: -probs[i]):
        print(f"{model.config.class_names[i]}\t{probs[i]:.6f}", file=out)
    print(f"predicted={model.config.class_names[int(np.argmax(logits))]}", file=out)
    return EXIT_OK


def run_dataset_stats(args, out) -> int:
    samples = scan_dataset(args.data, args.task)
    names = LabelMap(args.task).classes
    for name, n in zip(names, class_counts(samples, len(names))):
        print(f"{name}\t{n}", file=out)
    print(f"total\t{len(samples)}", file=out)
    return EXIT_OK


COMMANDS = {
    "train": run_train,
    "search": run_search,
    "eval": run_eval,
    "predict": run_predict,
    "dataset-stats": run_dataset_stats,
}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args, out)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except ValueError as e:
        # invalid hyperparameters or model shapes requested on the command line
        print(f"edm3d: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericDivergenceError as e:
        print(f"edm3d: numeric divergence: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as e:
        print(f"edm3d: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
