"""``mixcl`` command line.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Every artifact written here is a pure function of the flags, so repeating
a command gives byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from mixcl import __version__, models
from mixcl.autodiff import DomainError, ShapeError
from mixcl.data import DataError, list_datasets, load_dataset, znormalize
from mixcl.evaluation import accuracy, emit_report, one_nn_classify
from mixcl.models import WeightFormatError
from mixcl.optim import NonFiniteGradientError
from mixcl.pipeline import (
    FEATURE_METHODS,
    NumericalError,
    TrainConfig,
    TransferConfig,
    benchmark_run,
    extract_features,
    train_representation,
    transfer_finetune,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("mixcl")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _u64(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed {value} outside [0, 2^64)")
    return value


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _comma_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# feature CSV files: one row per sample, a label column then f0..f{D-1}


def write_features(path, feats: np.ndarray, labels) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label"] + [f"f{j}" for j in range(feats.shape[1])])
        for lab, row in zip(labels, feats):
            w.writerow([lab] + [_fmt(v) for v in row])


def read_features(path) -> tuple[np.ndarray, np.ndarray]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read feature file {path}: {exc.strerror}") from exc
    if not rows or not rows[0] or rows[0][0] != "label":
        raise DataError(f"{path}: feature file must start with a 'label' header column")
    width = len(rows[0]) - 1
    labels, values = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != width + 1:
            raise DataError(f"{path}:{lineno}: expected {width + 1} fields, found {len(row)}")
        try:
            values.append([float(v) for v in row[1:]])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        labels.append(row[0])
    if not labels:
        raise DataError(f"{path}: no samples")
    feats = np.array(values, dtype=np.float64).reshape(len(labels), width)
    if not np.all(np.isfinite(feats)):
        raise DataError(f"{path}: non-finite feature values")
    return feats, np.array(labels)


def _write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    cfg = TrainConfig(
        method=args.method,
        alpha=args.alpha,
        tau=args.tau,
        noise=args.noise,
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        seed=args.seed,
    )
    train, _ = load_dataset(args.dataset)
    result = train_representation(
        cfg, znormalize(train), callback=lambda epoch, loss: log.info("epoch %d loss %.6f", epoch, loss)
    )
    models.save_weights(result.encoder, args.out)
    if args.history:
        _write_json(args.history, {"method": cfg.method, "seed": cfg.seed, "loss": result.loss_history})
    log.info("wrote %s", args.out)
    return EXIT_OK


def cmd_features(args) -> int:
    if args.method == "encoder" and args.weights is None:
        raise UsageError("--method encoder requires --weights")
    train, test = load_dataset(args.dataset)
    data = train if args.split == "train" else test
    params = None
    if args.method != "hc":
        data = znormalize(data)
    if args.method == "encoder":
        params = models.load_weights(args.weights)
        if models.encoder_channels(params) != data.n_channels:
            raise DataError(
                f"weights expect {models.encoder_channels(params)} channels, dataset has {data.n_channels}"
            )
    feats = extract_features(args.method, data, params)
    inverse = {v: k for k, v in data.label_vocabulary.items()}
    write_features(args.out, feats, [inverse[int(i)] for i in data.labels])
    return EXIT_OK


def cmd_eval_1nn(args) -> int:
    ftr, ytr = read_features(args.train_feats)
    fte, yte = read_features(args.test_feats)
    if ftr.shape[1] != fte.shape[1]:
        raise DataError(f"train features have {ftr.shape[1]} columns, test features {fte.shape[1]}")
    pred = one_nn_classify(ftr, ytr, fte)
    _write_json(
        args.out,
        {
            "accuracy": accuracy(pred, yte),
            "n_train": int(ftr.shape[0]),
            "n_test": int(fte.shape[0]),
            "predictions": [str(p) for p in pred],
        },
    )
    return EXIT_OK


def cmd_transfer(args) -> int:
    pretext = None if args.pretext in (None, "none") else args.pretext
    if args.init == "pretrained" and pretext is None and args.weights is None:
        raise UsageError("--init pretrained needs --pretext <dir> or --weights <path>")
    cfg = TransferConfig(
        target=args.target,
        pretext=pretext,
        init=args.init,
        weights=args.weights,
        epochs=args.epochs,
        num_runs=args.runs,
        seed=args.seed,
        lr=args.lr,
        batch_size=args.batch_size,
        pretext_config=TrainConfig(method="mcl", epochs=args.pretext_epochs),
    )
    result = transfer_finetune(cfg)
    _write_json(args.out, result.to_dict())
    return EXIT_OK


def cmd_benchmark(args) -> int:
    root = Path(args.archive)
    if not root.is_dir():
        raise DataError(f"archive root {root} is not a directory")
    names = list_datasets(root) if args.datasets == ["all"] else args.datasets
    if not names:
        raise DataError(f"no datasets found under {root}")
    bad = [m for m in args.methods if m not in FEATURE_METHODS]
    if bad:
        raise UsageError(f"unknown method(s) {', '.join(bad)}; choose from {', '.join(FEATURE_METHODS)}")
    cfg = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, seed=args.seed, num_runs=args.runs
    )
    report = benchmark_run(root, names, args.methods, cfg, progress=log.info)
    emit_report(report, args.format, args.out)
    if report.failures and not report.rows:
        return EXIT_DATA
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mixcl", description="Mixup contrastive learning for time series.")
    p.add_argument("--version", action="version", version=f"mixcl {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="self-supervised training, writes encoder weights")
    t.add_argument("--method", choices=("mcl", "cl-gauss", "cl-drop", "ae"), default="mcl")
    t.add_argument("--dataset", required=True, help="dataset directory holding <Name>_TRAIN/_TEST")
    t.add_argument("--epochs", type=_positive_int, default=None)
    t.add_argument("--batch-size", type=_positive_int, default=64)
    t.add_argument("--alpha", type=float, default=0.2)
    t.add_argument("--tau", type=float, default=0.5)
    t.add_argument("--noise", type=float, default=0.25, help="gaussian variance or drop rate for CL baselines")
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--seed", type=_u64, default=0)
    t.add_argument("--out", required=True)
    t.add_argument("--history", default=None, help="optional JSON file for the per-epoch loss")
    t.set_defaults(func=cmd_train)

    f = sub.add_parser("features", help="write a feature CSV for one split")
    f.add_argument("--method", choices=("hc", "ed", "encoder"), required=True)
    f.add_argument("--weights", default=None)
    f.add_argument("--dataset", required=True)
    f.add_argument("--split", choices=("train", "test"), default="train")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_features)

    e = sub.add_parser("eval-1nn", help="1NN accuracy from two feature CSVs")
    e.add_argument("--train-feats", required=True)
    e.add_argument("--test-feats", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval_1nn)

    r = sub.add_parser("transfer", help="fine-tune FCN classifiers from random or pretrained init")
    r.add_argument("--pretext", default="none", help="pretext dataset directory or 'none'")
    r.add_argument("--target", required=True)
    r.add_argument("--init", choices=("random", "pretrained"), default="random")
    r.add_argument("--weights", default=None)
    r.add_argument("--epochs", type=_positive_int, default=100)
    r.add_argument("--pretext-epochs", type=_positive_int, default=None)
    r.add_argument("--runs", type=_positive_int, default=5)
    r.add_argument("--batch-size", type=_positive_int, default=64)
    r.add_argument("--lr", type=float, default=1e-3)
    r.add_argument("--seed", type=_u64, default=0)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_transfer)

    b = sub.add_parser("benchmark", help="1NN evaluation of several methods over an archive")
    b.add_argument("--archive", required=True)
    b.add_argument("--datasets", type=_comma_list, default=["all"])
    b.add_argument("--methods", type=_comma_list, default=list(FEATURE_METHODS))
    b.add_argument("--runs", type=_positive_int, default=5)
    b.add_argument("--epochs", type=_positive_int, default=None)
    b.add_argument("--batch-size", type=_positive_int, default=64)
    b.add_argument("--lr", type=float, default=1e-3)
    b.add_argument("--seed", type=_u64, default=0)
    b.add_argument("--out", required=True)
    b.add_argument("--format", choices=("csv", "json"), default="csv")
    b.set_defaults(func=cmd_benchmark)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"mixcl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, NonFiniteGradientError, DomainError, FloatingPointError) as exc:
        print(f"mixcl: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, WeightFormatError, ShapeError, KeyError, OSError) as exc:
        print(f"mixcl: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"mixcl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
