"""Desk-scale datasets: seeded Gaussian blobs and CSV ingestion, with stratified 80/20 splits.

All randomness comes from ``numpy.random.default_rng`` (PCG64). Blob generation
seeds one generator with ``seed`` and draws, in order: the ``(K, D)`` class
centers from N(0, 1) scaled by ``center_scale``, then the ``(K * per_class, D)``
noise block from N(0, spread^2), then the split shuffle. CSV splits seed a
generator with ``split_seed``. Any language with PCG64 reproduces the bytes.
"""

import csv
import io
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyFile, InvalidParams, LabelOutOfRange, ParseError

TRAIN_FRACTION = 0.8


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    train_idx: np.ndarray
    val_idx: np.ndarray

    def __post_init__(self):
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise InvalidParams("features must be (N, D) with one label per row")
        if not np.all(np.isfinite(self.features)):
            raise InvalidParams("features contain NaN or inf")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise LabelOutOfRange(f"labels must lie in [0, {self.n_classes})")
        if len(self.train_idx) + len(self.val_idx) != len(self.labels):
            raise InvalidParams("train and val splits must partition the samples")
        for arr in (self.features, self.labels, self.train_idx, self.val_idx):
            arr.setflags(write=False)

    @property
    def n_samples(self):
        return len(self.labels)

    @property
    def n_features(self):
        return self.features.shape[1]

    @property
    def train(self):
        return self.features[self.train_idx], self.labels[self.train_idx]

    @property
    def val(self):
        return self.features[self.val_idx], self.labels[self.val_idx]


def stratified_split(labels, n_classes, rng, train_fraction=TRAIN_FRACTION):
    """Shuffle each class independently and send ``round(0.8 * n_c)`` of it to train."""
    train, val = [], []
    for c in range(n_classes):
        members = np.flatnonzero(labels == c)
        members = members[rng.permutation(len(members))]
        cut = int(round(train_fraction * len(members)))
        train.append(members[:cut])
        val.append(members[cut:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


def generate_blobs(n_classes, per_class, n_features, spread, seed=0, center_scale=1.0):
    if n_classes < 2 or per_class < 2 or n_features < 1:
        raise InvalidParams(
            f"need K >= 2, per_class >= 2, D >= 1; got {n_classes}, {per_class}, {n_features}")
    if spread < 0 or not np.isfinite(spread):
        raise InvalidParams(f"spread must be a finite non-negative number, got {spread}")
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, 1.0, size=(n_classes, n_features)) * center_scale
    noise = rng.normal(0.0, 1.0, size=(n_classes * per_class, n_features)) * spread
    labels = np.repeat(np.arange(n_classes), per_class)
    features = centers[labels] + noise
    train_idx, val_idx = stratified_split(labels, n_classes, rng)
    return Dataset(features, labels, n_classes, train_idx, val_idx)


def _is_number(cell):
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_csv(path, label_column=-1, split_seed=0):
    """Read a numeric CSV; one column holds integer class labels.

    ``label_column`` is a column index (negative counts from the end) or a header
    name. A header row is assumed when any cell of the first row is non-numeric.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if not rows:
        raise EmptyFile(f"{path} has no rows")

    header = None
    if not all(_is_number(c) for c in rows[0]):
        header = [c.strip() for c in rows[0]]
        rows = rows[1:]
        if not rows:
            raise EmptyFile(f"{path} has a header but no data rows")
    width = len(header) if header else len(rows[0])

    if isinstance(label_column, str) and not label_column.lstrip("-").isdigit():
        if header is None or label_column not in header:
            raise ParseError(f"label column {label_column!r} not found in header")
        col = header.index(label_column)
    else:
        col = int(label_column)
        if not -width <= col < width:
            raise ParseError(f"label column {col} out of range for {width} columns")
        col %= width

    offset = 2 if header else 1
    values = np.empty((len(rows), width), dtype=np.float64)
    for r, row in enumerate(rows):
        if len(row) != width:
            raise ParseError(f"expected {width} cells, found {len(row)}", row=r + offset)
        for c, cell in enumerate(row):
            cell = cell.strip()
            if cell == "":
                raise ParseError("missing value", row=r + offset, column=c + 1)
            try:
                values[r, c] = float(cell)
            except ValueError:
                raise ParseError(f"non-numeric cell {cell!r}", row=r + offset, column=c + 1) from None
            if not np.isfinite(values[r, c]):
                raise ParseError(f"non-finite cell {cell!r}", row=r + offset, column=c + 1)

    raw_labels = values[:, col]
    if np.any(raw_labels != np.round(raw_labels)) or np.any(raw_labels < 0):
        bad = int(np.flatnonzero((raw_labels != np.round(raw_labels)) | (raw_labels < 0))[0])
        raise LabelOutOfRange(f"row {bad + offset}: label {raw_labels[bad]!r} is not a class index")
    labels = raw_labels.astype(np.int64)
    features = np.delete(values, col, axis=1)
    if features.shape[1] == 0:
        raise ParseError("no feature columns besides the label")
    n_classes = int(labels.max()) + 1
    if n_classes < 2:
        raise LabelOutOfRange("need at least two classes")
    missing = sorted(set(range(n_classes)) - set(labels.tolist()))
    if missing:
        warnings.warn(f"{path}: classes {missing} have no samples", stacklevel=2)
    train_idx, val_idx = stratified_split(labels, n_classes, np.random.default_rng(split_seed))
    return Dataset(features, labels, n_classes, train_idx, val_idx)


def write_csv(dataset, path, header=True):
    """Write features plus a trailing ``label`` column, using ``repr`` for floats."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if header:
            writer.writerow([f"x{i}" for i in range(dataset.n_features)] + ["label"])
        for x, y in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(v)) for v in x] + [int(y)])
    return path
