"""Synthetic datasets and a small CSV interchange format.

The CSV layout is one header row ``x0,...,x{d-1},label`` followed by
one row per sample; features are floats, labels are non-negative ints.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DatasetFormatError, ShapeError
from .linalg import Array, require_finite


@dataclass
class Dataset:
    features: Array
    labels: Array
    num_classes: int
    name: str = ""
    seed: int | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ShapeError(
                f"features must be 2-D, got shape {self.features.shape}"
            )
        if self.labels.shape != (self.features.shape[0],):
            raise ShapeError(
                f"labels must have shape ({self.features.shape[0]},), "
                f"got {self.labels.shape}"
            )
        require_finite(self.features, "features")
        if self.num_classes < 2:
            raise ShapeError(
                f"num_classes must be at least 2, got {self.num_classes}"
            )
        if len(self.labels) and (
            self.labels.min() < 0 or self.labels.max() >= self.num_classes
        ):
            raise ShapeError(
                f"labels must lie in [0, {self.num_classes}), "
                f"got range [{self.labels.min()}, {self.labels.max()}]"
            )

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def d_x(self) -> int:
        return self.features.shape[1]


def make_two_spirals(n: int, noise: float = 0.05, seed: int = 0,
                     turns: float = 1.0, r0: float = 0.2) -> Dataset:
    """Two interleaved planar spirals, n/2 points per class.

    Class 1 is the point reflection of class 0, so no linear separator
    does better than chance.  Keep ``turns`` integral: fractional turn
    counts leave an angular sector where one class dominates, which a
    linear classifier can exploit.  Gaussian noise with the given
    standard deviation is added to both coordinates.
    """
    if n < 2 or n % 2 != 0:
        raise ShapeError(f"n must be a positive even number, got {n}")
    if noise < 0.0:
        raise ShapeError(f"noise must be non-negative, got {noise}")
    m = n // 2
    rng = np.random.default_rng(seed)
    t = (np.arange(m) + 0.5) / m
    r = r0 + (1.0 - r0) * t
    phi = 2.0 * np.pi * turns * t
    arm = np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)
    features = np.concatenate([arm, -arm], axis=0)
    features = features + noise * rng.standard_normal(features.shape)
    labels = np.concatenate([np.zeros(m, dtype=np.int64),
                             np.ones(m, dtype=np.int64)])
    return Dataset(features, labels, 2, name="two-spirals", seed=seed)


def save_dataset_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{i}" for i in range(ds.d_x)] + ["label"])
        for row, label in zip(ds.features, ds.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def load_dataset_csv(path, num_classes: int | None = None) -> Dataset:
    """Read a dataset CSV, validating shape and label range.

    When ``num_classes`` is omitted it is inferred as max(label) + 1.
    Malformed rows raise DatasetFormatError naming the 1-based line.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError(f"{path}: empty file") from None
        if len(header) < 2 or header[-1] != "label":
            raise DatasetFormatError(
                f"{path}: line 1: header must be x0,...,label"
            )
        d_x = len(header) - 1
        feats: list[list[float]] = []
        labels: list[int] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d_x + 1:
                raise DatasetFormatError(
                    f"{path}: line {lineno}: expected {d_x + 1} fields, "
                    f"got {len(row)}"
                )
            try:
                feats.append([float(v) for v in row[:-1]])
            except ValueError:
                raise DatasetFormatError(
                    f"{path}: line {lineno}: non-numeric feature"
                ) from None
            try:
                label = int(row[-1])
            except ValueError:
                raise DatasetFormatError(
                    f"{path}: line {lineno}: non-integer label"
                ) from None
            if label < 0:
                raise DatasetFormatError(
                    f"{path}: line {lineno}: negative label {label}"
                )
            labels.append(label)
    if not feats:
        raise DatasetFormatError(f"{path}: no data rows")
    features = np.asarray(feats, dtype=np.float64)
    if not np.all(np.isfinite(features)):
        raise DatasetFormatError(f"{path}: non-finite feature values")
    label_arr = np.asarray(labels, dtype=np.int64)
    inferred = int(label_arr.max()) + 1
    if num_classes is None:
        num_classes = max(inferred, 2)
    elif inferred > num_classes:
        raise DatasetFormatError(
            f"{path}: label {label_arr.max()} out of range for "
            f"num_classes={num_classes}"
        )
    return Dataset(features, label_arr, num_classes, name=str(path))
