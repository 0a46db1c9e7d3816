"""Tabular data with a missingness mask: CSV I/O, 6:2:2 splits, standardization.

Rows are reached through :meth:`MaskedDataset.subset`, which records every
access in ``access_log`` so callers can prove the test split was not read
before evaluation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

SPLITS = ("train", "valid", "test")
DEFAULT_MISSING_TOKENS = ("", "NA", "NaN", "nan")


class DataFormatError(ValueError):
    pass


@dataclass
class MaskedDataset:
    values: np.ndarray
    mask: np.ndarray
    columns: list = field(default_factory=list)
    split: np.ndarray | None = None
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    standardized: bool = False
    original: np.ndarray | None = field(default=None, repr=False)
    access_log: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=np.float64)
        if self.values.shape != self.mask.shape or self.values.ndim != 2:
            raise ValueError(f"values {self.values.shape} and mask {self.mask.shape} must be equal 2-D shapes")
        if not self.columns:
            self.columns = [f"x{j + 1}" for j in range(self.values.shape[1])]

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def rows(self, split: str) -> np.ndarray:
        if self.split is None:
            raise ValueError("dataset has no split assignment")
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return np.flatnonzero(self.split == split)

    def subset(self, split: str, stage: str = "") -> tuple[np.ndarray, np.ndarray]:
        """(values, mask) of one split; the read is logged as ``(stage, split)``."""
        idx = self.rows(split)
        self.access_log.append((stage, split))
        return self.values[idx], self.mask[idx]

    def test_reads(self) -> list:
        return [entry for entry in self.access_log if entry[1] == "test"]

    def observed_means(self, split: str = "train", stage: str = "") -> np.ndarray:
        vals, mask = self.subset(split, stage) if self.split is not None else (self.values, self.mask)
        counts = mask.sum(axis=0)
        if np.any(counts == 0):
            raise ValueError(f"columns {np.flatnonzero(counts == 0).tolist()} have no observed {split} values")
        return np.where(mask == 1, vals, 0.0).sum(axis=0) / counts


def _parse_cell(token: str, missing: set, row: int, col: int) -> float:
    t = token.strip()
    if t in missing:
        return math.nan
    try:
        return float(t)
    except ValueError:
        raise DataFormatError(f"non-numeric cell {token!r} at row {row}, column {col}") from None


def load_csv(path, missing_tokens=DEFAULT_MISSING_TOKENS, header="infer", delimiter=",", drop_columns=()) -> MaskedDataset:
    """Read a rectangular numeric CSV; missing tokens become masked cells.

    ``header="infer"`` treats the first row as column names when none of its
    cells parse as numbers. ``drop_columns`` (names or indices) removes e.g. a
    class label column.
    """
    missing = set(missing_tokens)
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh, delimiter=delimiter)]
    if rows and rows[-1] == []:
        rows.pop()
    if not rows:
        raise DataFormatError(f"{path} is empty")
    columns = []
    if header == "infer":
        def numeric(t):
            try:
                float(t)
                return True
            except ValueError:
                return False

        header = not any(numeric(t.strip()) for t in rows[0]) and any(t.strip() not in missing for t in rows[0])
    if header:
        columns = [t.strip() for t in rows[0]]
        rows = rows[1:]
    width = len(columns) if columns else len(rows[0])
    data = np.empty((len(rows), width))
    first_line = 2 if columns else 1
    for i, row in enumerate(rows):
        if len(row) != width:
            raise DataFormatError(f"ragged row {i + first_line}: {len(row)} cells, expected {width}")
        for j, tok in enumerate(row):
            data[i, j] = _parse_cell(tok, missing, i + first_line, j + 1)
    if not columns:
        columns = [f"x{j + 1}" for j in range(width)]
    if drop_columns:
        drop = {columns.index(c) if isinstance(c, str) else int(c) % width for c in drop_columns}
        keep = [j for j in range(width) if j not in drop]
        data, columns = data[:, keep], [columns[j] for j in keep]
    mask = (~np.isnan(data)).astype(np.float64)
    return MaskedDataset(np.where(mask == 1, data, 0.0), mask, columns)


def write_matrix_csv(path, values, mask=None, columns=None) -> None:
    """Write values with empty cells where ``mask == 0``; floats use repr for exact round trips."""
    values = np.asarray(values, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if columns is not None:
            w.writerow(columns)
        for i in range(values.shape[0]):
            w.writerow(
                "" if (mask is not None and mask[i, j] == 0) else repr(float(values[i, j]))
                for j in range(values.shape[1])
            )


def write_csv(dataset: MaskedDataset, path, header=True) -> None:
    write_matrix_csv(path, dataset.values, dataset.mask, dataset.columns if header else None)


def split(dataset: MaskedDataset, seed) -> MaskedDataset:
    """Seeded permutation cut 60/20/20 into train/valid/test."""
    n = dataset.n
    if n < 5:
        raise ValueError("need at least 5 rows to split 6:2:2")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(0.6 * n))
    n_valid = int(round(0.2 * n))
    labels = np.empty(n, dtype=object)
    labels[perm[:n_train]] = "train"
    labels[perm[n_train:n_train + n_valid]] = "valid"
    labels[perm[n_train + n_valid:]] = "test"
    return replace(dataset, split=labels.astype(str), access_log=[])


def split_sizes(dataset: MaskedDataset) -> tuple[int, int, int]:
    return tuple(int(np.sum(dataset.split == s)) for s in SPLITS)


def standardize(dataset: MaskedDataset, stage: str = "standardize") -> MaskedDataset:
    """Center and scale observed cells by training-split observed statistics.

    Population standard deviation; columns with fewer than two observed
    training values or zero spread keep std = 1.
    """
    if dataset.standardized:
        return dataset
    if dataset.split is not None:
        vals, mask = dataset.subset("train", stage)
    else:
        vals, mask = dataset.values, dataset.mask
    p = dataset.p
    mean, std = np.zeros(p), np.ones(p)
    for j in range(p):
        obs = vals[mask[:, j] == 1, j]
        if obs.size:
            mean[j] = obs.mean()
        if obs.size >= 2:
            s = obs.std()
            if s > 1e-12:
                std[j] = s
    out = np.where(dataset.mask == 1, (dataset.values - mean) / std, dataset.values)
    return replace(
        dataset,
        values=out,
        mean=mean,
        std=std,
        standardized=True,
        original=dataset.values.copy(),
        access_log=dataset.access_log,
    )


def apply_standardization(dataset: MaskedDataset, mean, std) -> MaskedDataset:
    """Standardize with stored statistics (e.g. from a checkpoint) instead of recomputing them."""
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if mean.shape != (dataset.p,) or std.shape != (dataset.p,):
        raise ValueError(f"statistics for {mean.shape[0]} columns, data has {dataset.p}")
    out = np.where(dataset.mask == 1, (dataset.values - mean) / std, dataset.values)
    return replace(
        dataset,
        values=out,
        mean=mean,
        std=std,
        standardized=True,
        original=dataset.values.copy(),
        access_log=dataset.access_log,
    )


def destandardize(dataset: MaskedDataset) -> MaskedDataset:
    if not dataset.standardized:
        return dataset
    out = np.where(dataset.mask == 1, dataset.values * dataset.std + dataset.mean, dataset.values)
    return replace(dataset, values=out, standardized=False, original=None, access_log=dataset.access_log)


def to_original_scale(values, dataset: MaskedDataset) -> np.ndarray:
    """Map a standardized matrix (all cells) back to the original scale."""
    if dataset.mean is None:
        return np.asarray(values)
    return np.asarray(values) * dataset.std + dataset.mean


def write_split(dataset: MaskedDataset, path) -> None:
    Path(path).write_text("split\n" + "".join(f"{s}\n" for s in dataset.split))


def read_split(path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "split":
        raise DataFormatError(f"{path} is not a split assignment file")
    labels = np.asarray(lines[1:])
    if not set(labels) <= set(SPLITS):
        raise DataFormatError(f"unknown split labels in {path}")
    return labels
