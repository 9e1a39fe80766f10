"""UCR / UEA archive ingestion and the feature baselines that need no training.

Archive layout is ``<root>/<Name>/<Name>_TRAIN.tsv`` (UCR) or
``<Name>_TRAIN.ts`` (UEA), each with a matching ``_TEST`` file.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

__all__ = [
    "DataError",
    "TimeSeriesDataset",
    "read_ucr_tsv",
    "read_ts_file",
    "parse_ucr_tsv",
    "parse_ts_file",
    "impute_and_pad",
    "build_vocabulary",
    "load_dataset",
    "list_datasets",
    "znormalize",
    "handcrafted_features",
    "raw_features",
]


class DataError(ValueError):
    """Malformed or inconsistent dataset content."""


@dataclass(frozen=True)
class TimeSeriesDataset:
    """One split of a classification dataset.

    ``samples`` is (N, C, T) float64; ``labels`` are contiguous ints
    indexing ``classes`` (the original label tokens, in vocabulary order).
    ``lengths`` holds the unpadded length of every sample.
    """

    name: str
    split: str
    samples: np.ndarray
    labels: np.ndarray
    label_vocabulary: dict[str, int]
    lengths: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def n_channels(self) -> int:
        return self.samples.shape[1]

    @property
    def length(self) -> int:
        return self.samples.shape[2]

    @property
    def n_classes(self) -> int:
        return len(self.label_vocabulary)

    @property
    def classes(self) -> list[str]:
        return sorted(self.label_vocabulary, key=self.label_vocabulary.__getitem__)

    def __len__(self) -> int:
        return self.n_samples


# ---------------------------------------------------------------------------
# raw readers


def _parse_value(token: str, where: str) -> float:
    tok = token.strip()
    if tok == "?":
        return math.nan
    try:
        return float(tok)
    except ValueError:
        raise DataError(f"{where}: cannot parse {token!r} as a number") from None


def read_ucr_tsv(path) -> tuple[list[list[np.ndarray]], list[str]]:
    """Read a UCR file: one row per series, class label first.

    Rows are tab separated; comma-separated rows (older archive releases)
    are accepted too.  Returns per-sample channel lists and raw label tokens.
    """
    path = Path(path)
    records, labels = [], []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            tokens = line.split("\t") if "\t" in line else line.split(",")
            while tokens and not tokens[-1].strip():
                tokens.pop()
            if len(tokens) < 2:
                raise DataError(f"{path}:{lineno}: expected a label followed by values")
            label = tokens[0].strip()
            values = np.array([_parse_value(tok, f"{path}:{lineno}:{col}") for col, tok in enumerate(tokens[1:], start=2)])
            records.append([values])
            labels.append(_canonical_label(label))
    if not records:
        raise DataError(f"{path}: no series found")
    return records, labels


def _canonical_label(token: str) -> str:
    # "1" and "1.0" denote the same class in UCR files
    try:
        value = float(token)
    except ValueError:
        return token
    return str(int(value)) if value.is_integer() else token


def _header_bool(value: str, key: str, path) -> bool:
    v = value.strip().lower()
    if v not in ("true", "false"):
        raise DataError(f"{path}: {key} must be true or false, got {value!r}")
    return v == "true"


def read_ts_file(path) -> tuple[list[list[np.ndarray]], list[str], dict]:
    """Read a sktime/UEA ``.ts`` classification file.

    Returns per-sample channel lists, raw label tokens and the parsed
    header (keys lower-cased, ``classlabel`` holding the declared labels).
    """
    path = Path(path)
    header: dict = {}
    records: list[list[np.ndarray]] = []
    labels: list[str] = []
    in_data = False
    n_dims = None
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            where = f"{path}:{lineno}"
            if not in_data:
                if not line.startswith("@"):
                    raise DataError(f"{where}: data line before @data")
                key, _, rest = line[1:].partition(" ")
                key = key.lower()
                rest = rest.strip()
                if key == "data":
                    in_data = True
                elif key == "classlabel":
                    flag, _, names = rest.partition(" ")
                    if not _header_bool(flag, "@classLabel", path):
                        raise DataError(f"{where}: only classification files (@classLabel true) are supported")
                    header["classlabel"] = names.split()
                elif key in ("univariate", "equallength", "timestamps", "missing"):
                    header[key] = _header_bool(rest, f"@{key}", path)
                elif key in ("dimensions", "serieslength"):
                    try:
                        header[key] = int(rest)
                    except ValueError:
                        raise DataError(f"{where}: @{key} must be an integer") from None
                else:
                    header[key] = rest
                continue

            if header.get("timestamps"):
                raise DataError(f"{where}: time-stamped .ts data is not supported")
            parts = line.split(":")
            if len(parts) < 2:
                raise DataError(f"{where}: record has no class label")
            *dims, label = parts
            if n_dims is None:
                n_dims = len(dims)
            elif len(dims) != n_dims:
                raise DataError(f"{where}: record has {len(dims)} dimensions, earlier records have {n_dims}")
            channels = []
            for d, chunk in enumerate(dims, start=1):
                toks = [t for t in chunk.split(",") if t.strip()]
                channels.append(np.array([_parse_value(t, f"{where} dim {d}") for t in toks]))
            records.append(channels)
            labels.append(label.strip())

    if not in_data:
        raise DataError(f"{path}: missing @data section")
    if not records:
        raise DataError(f"{path}: no records after @data")
    if "classlabel" not in header:
        raise DataError(f"{path}: missing @classLabel header")
    if header.get("univariate") and n_dims != 1:
        raise DataError(f"{path}: @univariate true but records have {n_dims} dimensions")
    if "dimensions" in header and header["dimensions"] != n_dims:
        raise DataError(f"{path}: @dimensions {header['dimensions']} but records have {n_dims}")
    if header.get("equallength") and "serieslength" in header:
        want = header["serieslength"]
        for i, rec in enumerate(records):
            if any(len(ch) != want for ch in rec):
                raise DataError(f"{path}: record {i + 1} length differs from @seriesLength {want}")
    declared = set(header["classlabel"])
    for i, lab in enumerate(labels):
        if lab not in declared:
            raise DataError(f"{path}: record {i + 1} has undeclared class label {lab!r}")
    return records, labels, header


# ---------------------------------------------------------------------------
# assembly


def _label_sort_key(token: str):
    try:
        return (0, float(token), token)
    except ValueError:
        return (1, 0.0, token)


def build_vocabulary(labels) -> dict[str, int]:
    """Contiguous ids for the distinct labels, numeric labels in numeric order."""
    return {lab: i for i, lab in enumerate(sorted(set(labels), key=_label_sort_key))}


def impute_and_pad(records, target_length: int) -> tuple[np.ndarray, np.ndarray]:
    """Fill NaNs and pad ragged series into an (N, C, T) array.

    Interior gaps are linearly interpolated, leading and trailing gaps take
    the nearest observed value.  Short series are zero padded at the end;
    the second return value holds each sample's original length.
    """
    n = len(records)
    c = max(len(rec) for rec in records)
    out = np.zeros((n, c, target_length))
    lengths = np.zeros(n, dtype=np.int64)
    for i, rec in enumerate(records):
        if len(rec) != c:
            raise DataError(f"sample {i} has {len(rec)} channels, expected {c}")
        for j, series in enumerate(rec):
            series = np.asarray(series, dtype=np.float64)
            if series.size > target_length:
                raise DataError(f"sample {i} has length {series.size} > target length {target_length}")
            ok = ~np.isnan(series)
            if not ok.any():
                raise DataError(f"sample {i} channel {j} contains no observed values")
            if not ok.all():
                idx = np.arange(series.size)
                series = np.interp(idx, idx[ok], series[ok])
            out[i, j, : series.size] = series
            lengths[i] = max(lengths[i], series.size)
    return out, lengths


def _assemble(name, split, records, raw_labels, vocabulary, target_length) -> TimeSeriesDataset:
    unknown = sorted(set(raw_labels) - set(vocabulary), key=_label_sort_key)
    if unknown:
        raise DataError(f"{name} {split}: labels {unknown} are not in the training vocabulary")
    samples, lengths = impute_and_pad(records, target_length)
    labels = np.array([vocabulary[lab] for lab in raw_labels], dtype=np.int64)
    return TimeSeriesDataset(name, split, samples, labels, dict(vocabulary), lengths)


def _record_length(records) -> int:
    return max(len(ch) for rec in records for ch in rec)


def _split_of(path: Path) -> str:
    stem = path.stem.upper()
    return "test" if stem.endswith("_TEST") else "train"


def _name_of(path: Path) -> str:
    stem = path.stem
    for suffix in ("_TRAIN", "_TEST"):
        if stem.upper().endswith(suffix):
            return stem[: -len(suffix)]
    return stem


def parse_ucr_tsv(path, vocabulary: dict[str, int] | None = None, length: int | None = None) -> TimeSeriesDataset:
    """Load one UCR split; ``vocabulary``/``length`` let a test split follow its train split."""
    path = Path(path)
    records, labels = read_ucr_tsv(path)
    vocabulary = vocabulary if vocabulary is not None else build_vocabulary(labels)
    return _assemble(_name_of(path), _split_of(path), records, labels, vocabulary, length or _record_length(records))


def parse_ts_file(path, vocabulary: dict[str, int] | None = None, length: int | None = None) -> TimeSeriesDataset:
    path = Path(path)
    records, labels, header = read_ts_file(path)
    vocabulary = vocabulary if vocabulary is not None else build_vocabulary(header["classlabel"])
    name = header.get("problemname", _name_of(path))
    return _assemble(name, _split_of(path), records, labels, vocabulary, length or _record_length(records))


def _split_files(directory: Path) -> tuple[Path, Path, str]:
    name = directory.name
    for ext in (".tsv", ".ts", ".txt"):
        train = directory / f"{name}_TRAIN{ext}"
        test = directory / f"{name}_TEST{ext}"
        if train.exists() and test.exists():
            return train, test, ext
    raise DataError(f"{directory}: expected {name}_TRAIN/_TEST files with .tsv or .ts extension")


def load_dataset(directory) -> tuple[TimeSeriesDataset, TimeSeriesDataset]:
    """Load train and test splits sharing one length and label vocabulary."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"dataset directory {directory} does not exist")
    train_path, test_path, ext = _split_files(directory)
    if ext == ".ts":
        tr_records, tr_labels, header = read_ts_file(train_path)
        te_records, te_labels, _ = read_ts_file(test_path)
        vocabulary = build_vocabulary(header["classlabel"])
    else:
        tr_records, tr_labels = read_ucr_tsv(train_path)
        te_records, te_labels = read_ucr_tsv(test_path)
        vocabulary = build_vocabulary(tr_labels)
    length = max(_record_length(tr_records), _record_length(te_records))
    name = directory.name
    train = _assemble(name, "train", tr_records, tr_labels, vocabulary, length)
    test = _assemble(name, "test", te_records, te_labels, vocabulary, length)
    if train.n_channels != test.n_channels:
        raise DataError(f"{name}: train has {train.n_channels} channels, test has {test.n_channels}")
    return train, test


def list_datasets(root) -> list[str]:
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"archive root {root} does not exist")
    names = []
    for d in sorted(root.iterdir()):
        if d.is_dir():
            try:
                _split_files(d)
            except DataError:
                continue
            names.append(d.name)
    return names


# ---------------------------------------------------------------------------
# preprocessing and fixed features


def _valid_mask(dataset: TimeSeriesDataset) -> np.ndarray:
    t = np.arange(dataset.length)
    lengths = dataset.lengths if dataset.lengths is not None else np.full(dataset.n_samples, dataset.length)
    return (t[None, :] < lengths[:, None])[:, None, :]


def znormalize(dataset: TimeSeriesDataset) -> TimeSeriesDataset:
    """Zero mean, unit std per sample and channel over the observed timesteps.

    Channels with std below 1e-8 are only centred (hence all zero).
    Padding stays zero.
    """
    mask = _valid_mask(dataset)
    count = mask.sum(axis=2, keepdims=True)
    x = dataset.samples
    mean = np.where(mask, x, 0.0).sum(axis=2, keepdims=True) / count
    centred = np.where(mask, x - mean, 0.0)
    std = np.sqrt((centred**2).sum(axis=2, keepdims=True) / count)
    scaled = np.divide(centred, std, out=np.zeros_like(centred), where=std >= 1e-8)
    return replace(dataset, samples=scaled)


def handcrafted_features(dataset: TimeSeriesDataset) -> np.ndarray:
    """(max, min, population variance, mean) per channel -> (N, 4C)."""
    mask = _valid_mask(dataset)
    x = dataset.samples
    count = mask.sum(axis=2)
    mx = np.where(mask, x, -np.inf).max(axis=2)
    mn = np.where(mask, x, np.inf).min(axis=2)
    mean = np.where(mask, x, 0.0).sum(axis=2) / count
    var = np.where(mask, (x - mean[:, :, None]) ** 2, 0.0).sum(axis=2) / count
    return np.stack([mx, mn, var, mean], axis=2).reshape(dataset.n_samples, -1)


def raw_features(dataset: TimeSeriesDataset) -> np.ndarray:
    """Channel-major flattening, (N, C, T) -> (N, C*T)."""
    return dataset.samples.reshape(dataset.n_samples, -1).copy()
