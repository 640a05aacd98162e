"""Dataset ingestion, normalization, and sliding-window batching.

A dataset is a plain CSV whose first column is a date stamp and whose
remaining columns are numeric variates. It is split chronologically into
train/validation/test segments; windows are served per segment and never
straddle a boundary.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .validation import check_lengths

EPS_STD = 1e-8

# Fixed community splits for the ETT benchmark family: 12/4/4 months by row
# count. Hourly files use 8640/2880/2880 rows; 15-minute files 4x that.
ETT_SPLITS = {
    "etth1": (8640, 2880, 2880),
    "etth2": (8640, 2880, 2880),
    "ettm1": (34560, 11520, 11520),
    "ettm2": (34560, 11520, 11520),
}

DEFAULT_TRAIN_FRAC = 0.7
DEFAULT_VAL_FRAC = 0.1


@dataclass(frozen=True)
class SeriesFrame:
    """A full multivariate series with chronological split boundaries.

    values has one row per timestep and one column per variate. The three
    boundaries delimit train rows [0, train_end), validation rows
    [train_end, val_end), and test rows [val_end, test_end); rows beyond
    test_end exist in the file but are unused (ETT convention).
    """

    values: np.ndarray
    variate_names: tuple
    timestamps: tuple
    train_end: int
    val_end: int
    test_end: int

    def __post_init__(self):
        T, k = self.values.shape
        if k < 1:
            raise ValueError("series needs at least one variate")
        if not (0 < self.train_end < self.val_end < self.test_end <= T):
            raise ValueError(
                f"invalid split boundaries ({self.train_end}, {self.val_end}, "
                f"{self.test_end}) for T={T}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("series contains NaN or infinite values")

    @property
    def n_timesteps(self):
        return self.values.shape[0]

    @property
    def n_variates(self):
        return self.values.shape[1]

    def split_bounds(self, split: str):
        """Row range [start, end) of one of the three segments."""
        bounds = {
            "train": (0, self.train_end),
            "val": (self.train_end, self.val_end),
            "test": (self.val_end, self.test_end),
        }
        if split not in bounds:
            raise ValueError(f"unknown split {split!r}, expected train/val/test")
        return bounds[split]

    def train_values(self):
        return self.values[: self.train_end]

    def with_values(self, values: np.ndarray) -> "SeriesFrame":
        if values.shape != self.values.shape:
            raise ValueError("replacement values must keep the original shape")
        return SeriesFrame(
            values=values,
            variate_names=self.variate_names,
            timestamps=self.timestamps,
            train_end=self.train_end,
            val_end=self.val_end,
            test_end=self.test_end,
        )


def _resolve_splits(path: str, T: int, train_frac, val_frac):
    """Split row counts: fixed ETT convention when the filename matches, else fractions."""
    stem = os.path.splitext(os.path.basename(path))[0].lower()
    if stem in ETT_SPLITS:
        n_train, n_val, n_test = ETT_SPLITS[stem]
        if n_train + n_val + n_test <= T:
            return n_train, n_train + n_val, n_train + n_val + n_test
        warnings.warn(
            f"{os.path.basename(path)} has only {T} rows, fewer than the fixed "
            f"ETT convention needs; falling back to fractional splits"
        )
    # Clamp so every segment stays nonempty even for tiny files.
    train_end = min(max(1, int(T * train_frac)), T - 2)
    val_end = min(max(train_end + 1, train_end + int(T * val_frac)), T - 1)
    return train_end, val_end, T


def load_csv(path, date_column: str = "date", train_frac: float = DEFAULT_TRAIN_FRAC,
             val_frac: float = DEFAULT_VAL_FRAC, split_rows=None) -> SeriesFrame:
    """Load a benchmark CSV into a SeriesFrame.

    Args:
        path: CSV file; first column is the date column, the rest numeric variates.
        date_column: header name of the date column.
        train_frac, val_frac: chronological split fractions (ignored for
            ETT-family filenames, which use the fixed 12/4/4-month row counts).
        split_rows: optional explicit (train_end, val_end[, test_end]) row
            indices overriding both conventions.

    Raises:
        FileNotFoundError: missing file.
        ValueError: non-numeric or missing cell (named by row and column),
            or fewer than 2 data rows.
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(f"dataset file not found: {path}")
    df = pd.read_csv(path)
    if date_column not in df.columns:
        raise ValueError(f"date column {date_column!r} not found in {path}")
    timestamps = tuple(str(v) for v in df[date_column].values)
    data = df.drop(columns=[date_column])
    if data.shape[1] < 1:
        raise ValueError(f"{path} has no variate columns besides {date_column!r}")
    if data.shape[0] < 2:
        raise ValueError(f"{path} has fewer than 2 data rows")

    numeric = data.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna()
    if bad.values.any():
        row = int(np.argmax(bad.values.any(axis=1)))
        col = data.columns[int(np.argmax(bad.values[row]))]
        raw = data.iloc[row][col]
        what = "missing value" if pd.isna(raw) else f"non-numeric value {raw!r}"
        # +2: header line plus 1-based indexing, so the message matches the file.
        raise ValueError(f"{what} in column {col!r}, file row {row + 2} of {path}")

    values = numeric.values.astype(np.float64)
    T = values.shape[0]
    if split_rows is not None:
        if len(split_rows) == 2:
            train_end, val_end = split_rows
            test_end = T
        else:
            train_end, val_end, test_end = split_rows
    else:
        train_end, val_end, test_end = _resolve_splits(path, T, train_frac, val_frac)

    return SeriesFrame(
        values=values,
        variate_names=tuple(str(c) for c in data.columns),
        timestamps=timestamps,
        train_end=int(train_end),
        val_end=int(val_end),
        test_end=int(test_end),
    )


class Normalizer:
    """Per-variate standardization fitted on the train split only.

    Follows the fit/transform/inverse_transform idiom. Stds are population
    stds floored at EPS_STD so constant variates stay usable.
    """

    def __init__(self):
        self.mean_ = None
        self.std_ = None

    def fit(self, frame: SeriesFrame) -> "Normalizer":
        train = frame.train_values()
        if train.shape[0] == 0:
            raise ValueError("train split is empty")
        self.mean_ = train.mean(axis=0)
        std = train.std(axis=0)
        degenerate = std < EPS_STD
        if degenerate.any():
            names = [frame.variate_names[i] for i in np.flatnonzero(degenerate)]
            warnings.warn(f"zero-variance variate(s) {names}; std floored at {EPS_STD}")
        self.std_ = np.maximum(std, EPS_STD)
        return self

    def transform(self, values: np.ndarray) -> np.ndarray:
        self._check_fitted()
        return (values - self.mean_) / self.std_

    def inverse_transform(self, values: np.ndarray) -> np.ndarray:
        self._check_fitted()
        return values * self.std_ + self.mean_

    def transform_frame(self, frame: SeriesFrame) -> SeriesFrame:
        return frame.with_values(self.transform(frame.values))

    def to_dict(self):
        self._check_fitted()
        return {"mean": self.mean_.tolist(), "std": self.std_.tolist()}

    @classmethod
    def from_dict(cls, d):
        norm = cls()
        norm.mean_ = np.asarray(d["mean"], dtype=np.float64)
        norm.std_ = np.asarray(d["std"], dtype=np.float64)
        return norm

    def _check_fitted(self):
        if self.mean_ is None:
            raise RuntimeError("Normalizer is not fitted")


# Domain-type alias: the fitted stats (mean_, std_) live on the transformer.
NormStats = Normalizer


def fit_normalizer(frame: SeriesFrame) -> Normalizer:
    return Normalizer().fit(frame)


@dataclass(frozen=True)
class WindowBatch:
    """A batch of sliding windows: lookbacks (B, l, k) and targets (B, h, k)."""

    lookbacks: np.ndarray
    targets: np.ndarray

    @property
    def size(self):
        return self.lookbacks.shape[0]


def window_starts(frame: SeriesFrame, split: str, l: int, h: int) -> np.ndarray:
    """Start rows of every stride-1 window that fits inside the split."""
    check_lengths(l, h)
    start, end = frame.split_bounds(split)
    n = (end - start) - l - h + 1
    if n < 1:
        raise ValueError(
            f"split {split!r} has {end - start} rows, too short for lookback "
            f"{l} + horizon {h}"
        )
    return np.arange(start, start + n)


def windows(frame: SeriesFrame, split: str, l: int, h: int, batch_size: int = 32,
            shuffle_seed=None, columns=None):
    """Yield WindowBatch objects covering one split with stride 1.

    Batches are served in chronological order unless shuffle_seed is given
    (deterministic permutation of window order). The last partial batch is
    kept. columns optionally restricts to a subset of variate indices.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    starts = window_starts(frame, split, l, h)
    if shuffle_seed is not None:
        starts = np.random.default_rng(shuffle_seed).permutation(starts)
    values = frame.values if columns is None else frame.values[:, columns]
    offs_l = np.arange(l)
    offs_h = np.arange(l, l + h)
    for i in range(0, len(starts), batch_size):
        chunk = starts[i:i + batch_size]
        yield WindowBatch(
            lookbacks=values[chunk[:, None] + offs_l],
            targets=values[chunk[:, None] + offs_h],
        )


def count_windows(frame: SeriesFrame, split: str, l: int, h: int) -> int:
    return len(window_starts(frame, split, l, h))
