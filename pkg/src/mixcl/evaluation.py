"""1NN evaluation, ranking, significance testing and report files."""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import stdtr
from scipy.stats import rankdata

__all__ = [
    "one_nn_classify",
    "accuracy",
    "average_ranks",
    "rank_matrix",
    "paired_t_test",
    "EvalReport",
    "emit_report",
    "read_report",
]

SIGNIFICANCE_LEVEL = 0.05


def one_nn_classify(train_feats, train_labels, test_feats, chunk: int = 256) -> np.ndarray:
    """Label of the Euclidean-nearest training row for every test row.

    Distances are computed from explicit differences (no expansion of the
    square), so exact ties stay exact and resolve to the lowest training
    index.
    """
    train = np.asarray(train_feats, dtype=np.float64)
    test = np.asarray(test_feats, dtype=np.float64)
    labels = np.asarray(train_labels)
    if train.ndim != 2 or test.ndim != 2 or train.shape[1] != test.shape[1]:
        raise ValueError(f"feature widths differ: train {train.shape}, test {test.shape}")
    if train.shape[0] < 1:
        raise ValueError("1NN needs at least one training sample")
    if labels.shape[0] != train.shape[0]:
        raise ValueError(f"{labels.shape[0]} labels for {train.shape[0]} training rows")
    # keep the (chunk, Ntr, d) difference tensor around 32 MB
    step = max(1, min(chunk, (4_000_000 // max(1, train.size))))
    nearest = np.empty(test.shape[0], dtype=np.intp)
    for start in range(0, test.shape[0], step):
        block = test[start : start + step]
        d2 = ((block[:, None, :] - train[None, :, :]) ** 2).sum(axis=2)
        nearest[start : start + step] = np.argmin(d2, axis=1)
    return labels[nearest]


def accuracy(pred, truth) -> float:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction length {pred.shape} differs from truth length {truth.shape}")
    if pred.size == 0:
        raise ValueError("accuracy of an empty prediction set is undefined")
    return float(np.mean(pred == truth))


def rank_matrix(acc) -> np.ndarray:
    """Per-row ranks, best accuracy = M, ties share their mean rank."""
    acc = np.asarray(acc, dtype=np.float64)
    if acc.ndim != 2 or acc.shape[0] < 1 or acc.shape[1] < 2:
        raise ValueError(f"need a datasets x methods matrix with >= 2 methods, got shape {acc.shape}")
    if np.isnan(acc).any():
        row, col = np.argwhere(np.isnan(acc))[0]
        raise ValueError(f"NaN accuracy at dataset row {row}, method column {col}")
    return rankdata(acc, method="average", axis=1)


def average_ranks(acc) -> np.ndarray:
    return rank_matrix(acc).mean(axis=0)


def paired_t_test(a, b) -> tuple[float, float]:
    """Two-sided paired t-test of ``a - b``.

    The p-value comes from the Student-t CDF with n-1 degrees of freedom
    (``scipy.special.stdtr``, a regularized incomplete beta evaluation).
    Zero-variance differences give p = 1 when the mean is zero and p = 0
    otherwise, with t = 0 or +-inf respectively.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"paired samples must be equal-length vectors, got {a.shape} and {b.shape}")
    n = a.size
    if n < 2:
        raise ValueError("paired t-test needs at least two pairs")
    d = a - b
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0:
        if mean == 0:
            return 0.0, 1.0
        return math.copysign(math.inf, mean), 0.0
    t = mean / (sd / math.sqrt(n))
    p = 2.0 * stdtr(n - 1, -abs(t))
    return float(t), float(min(1.0, max(0.0, p)))


# ---------------------------------------------------------------------------
# reports


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass
class EvalReport:
    """Per-run accuracies plus the aggregates derived from them.

    ``rows`` are ``(dataset, method, seed, accuracy)`` tuples.  ``config``
    records the hyperparameters the run used; ``failures`` maps dataset to
    an error message for datasets that could not be evaluated.
    """

    rows: list[tuple[str, str, int, float]] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    failures: dict[str, str] = field(default_factory=dict)

    def add(self, dataset: str, method: str, seed: int, acc: float) -> None:
        if not 0.0 <= acc <= 1.0:
            raise ValueError(f"accuracy {acc} outside [0, 1]")
        self.rows.append((dataset, method, int(seed), float(acc)))

    @property
    def datasets(self) -> list[str]:
        return list(dict.fromkeys(r[0] for r in self.rows))

    @property
    def methods(self) -> list[str]:
        return list(dict.fromkeys(r[1] for r in self.rows))

    def mean_accuracy(self) -> dict[tuple[str, str], float]:
        groups: dict[tuple[str, str], list[float]] = {}
        for ds, m, _, acc in self.rows:
            groups.setdefault((ds, m), []).append(acc)
        return {key: float(np.mean(vals)) for key, vals in groups.items()}

    def accuracy_matrix(self) -> tuple[list[str], list[str], np.ndarray]:
        """Datasets x methods mean accuracies over datasets where every method ran."""
        means = self.mean_accuracy()
        methods = self.methods
        datasets = [ds for ds in self.datasets if all((ds, m) in means for m in methods)]
        mat = np.array([[means[(ds, m)] for m in methods] for ds in datasets]).reshape(len(datasets), len(methods))
        return datasets, methods, mat

    def average_ranks(self) -> dict[str, float]:
        datasets, methods, mat = self.accuracy_matrix()
        if len(methods) < 2 or not datasets:
            return {m: 1.0 for m in methods}
        return dict(zip(methods, (float(r) for r in average_ranks(mat))))

    def significance(self) -> list[dict]:
        """Pairwise t-tests across datasets on per-dataset mean accuracies."""
        datasets, methods, mat = self.accuracy_matrix()
        if len(datasets) < 2:
            return []
        out = []
        for i, j in itertools.combinations(range(len(methods)), 2):
            t, p = paired_t_test(mat[:, i], mat[:, j])
            out.append(
                {
                    "method_a": methods[i],
                    "method_b": methods[j],
                    "t": t,
                    "p": p,
                    "significant": bool(p < SIGNIFICANCE_LEVEL),
                }
            )
        return out

    def to_dict(self) -> dict:
        means = self.mean_accuracy()
        return {
            "rows": [{"dataset": d, "method": m, "seed": s, "accuracy": a} for d, m, s, a in self.rows],
            "mean_accuracy": [{"dataset": d, "method": m, "mean_accuracy": v} for (d, m), v in means.items()],
            "average_rank": [{"method": m, "average_rank": r} for m, r in self.average_ranks().items()],
            "significance": self.significance(),
            "significance_level": SIGNIFICANCE_LEVEL,
            "config": self.config,
            "failures": self.failures,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "EvalReport":
        rows = [(r["dataset"], r["method"], int(r["seed"]), float(r["accuracy"])) for r in payload.get("rows", [])]
        return cls(rows=rows, config=dict(payload.get("config", {})), failures=dict(payload.get("failures", {})))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dataset", "method", "seed", "accuracy"])
        for d, m, s, a in self.rows:
            w.writerow([d, m, s, _fmt(a)])
        if not self.rows:
            return buf.getvalue()
        w.writerow([])
        w.writerow(["# mean_accuracy"])
        w.writerow(["dataset", "method", "mean_accuracy"])
        for (d, m), v in self.mean_accuracy().items():
            w.writerow([d, m, _fmt(v)])
        w.writerow([])
        w.writerow(["# average_rank"])
        w.writerow(["method", "average_rank"])
        for m, r in self.average_ranks().items():
            w.writerow([m, _fmt(r)])
        sig = self.significance()
        if sig:
            w.writerow([])
            w.writerow([f"# significance (paired t-test across datasets, level {SIGNIFICANCE_LEVEL})"])
            w.writerow(["method_a", "method_b", "t", "p", "significant"])
            for s in sig:
                w.writerow([s["method_a"], s["method_b"], _fmt(s["t"]), _fmt(s["p"]), str(s["significant"]).lower()])
        if self.config:
            w.writerow([])
            w.writerow(["# config"])
            w.writerow(["key", "value"])
            for k in sorted(self.config):
                w.writerow([k, self.config[k]])
        if self.failures:
            w.writerow([])
            w.writerow(["# failures"])
            w.writerow(["dataset", "error"])
            for k in sorted(self.failures):
                w.writerow([k, self.failures[k]])
        return buf.getvalue()


def emit_report(report: EvalReport, fmt: str, path) -> None:
    if fmt == "csv":
        text = report.to_csv()
    elif fmt == "json":
        text = json.dumps(report.to_dict(), indent=2, sort_keys=False) + "\n"
    else:
        raise ValueError(f"unknown report format {fmt!r}; use csv or json")
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc.strerror}") from exc


def read_report(path) -> EvalReport:
    """Load a JSON report written by :func:`emit_report`."""
    return EvalReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
