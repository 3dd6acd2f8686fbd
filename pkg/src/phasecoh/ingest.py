"""Loading, scaling, windowing, and splitting of labeled sensor CSVs.

The on-disk format is a plain CSV with a header row: numeric sensor
columns, one label column (normal/attack strings or 0/1), and an
optional integer timestamp column. Standardization statistics are
always fitted on training rows only and applied everywhere else, so
attack data never leaks into the scaler.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

STD_FLOOR = 1e-8

_LABEL_MAP = {"normal": 0, "attack": 1, "0": 0, "1": 1, "0.0": 0, "1.0": 1}


class IngestError(ValueError):
    pass


@dataclass
class TimeSeriesFrame:
    """A labeled multivariate series: T x C readings in engineering units."""

    values: np.ndarray
    labels: np.ndarray
    channel_names: list
    timestamps: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.channel_names = list(self.channel_names)
        t = self.values.shape[0]
        if self.values.ndim != 2:
            raise IngestError(f"values must be T x C, got shape {self.values.shape}")
        if self.labels.shape != (t,) or self.timestamps.shape != (t,):
            raise IngestError(
                f"labels/timestamps must have length {t}, got "
                f"{self.labels.shape} and {self.timestamps.shape}")
        if self.values.shape[1] != len(self.channel_names):
            raise IngestError(
                f"{len(self.channel_names)} channel names for "
                f"{self.values.shape[1]} columns")
        if not np.isin(self.labels, (0, 1)).all():
            raise IngestError("labels must be 0 (normal) or 1 (attack)")
        if t > 1 and not (np.diff(self.timestamps) > 0).all():
            raise IngestError("timestamps must be strictly increasing")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def slice_rows(self, start: int, stop: int) -> "TimeSeriesFrame":
        return TimeSeriesFrame(self.values[start:stop], self.labels[start:stop],
                               self.channel_names, self.timestamps[start:stop])


@dataclass
class Scaler:
    """Per-channel standardization: (x - mean) / std with std floored."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise IngestError("scaler mean/std must be matching 1-D vectors")
        if (self.std < STD_FLOOR).any():
            raise IngestError(f"scaler std below floor {STD_FLOOR}")

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def inverse(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y, dtype=np.float64) * self.std + self.mean


@dataclass
class SensorWindow:
    """One scaled W x C slice; label 1 iff any covered timestep is an attack."""

    data: np.ndarray
    start_index: int
    label: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise IngestError(f"window data must be W x C, got {self.data.shape}")
        if self.label not in (0, 1):
            raise IngestError(f"window label must be 0 or 1, got {self.label}")


@dataclass
class SplitSpec:
    """Chronological split fractions and window strides.

    eval_stride defaults to the window size (non-overlapping) when None.
    """

    train_frac: float = 0.75
    val_frac: float = 0.10
    holdout_frac: float = 0.15
    train_stride: int = 5
    eval_stride: int | None = None

    def validate(self) -> None:
        fracs = (self.train_frac, self.val_frac, self.holdout_frac)
        if any(f <= 0 for f in fracs):
            raise IngestError(f"split fractions must be positive, got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise IngestError(f"split fractions must sum to 1, got {sum(fracs)}")
        if self.train_stride < 1:
            raise IngestError(f"train_stride must be >= 1, got {self.train_stride}")
        if self.eval_stride is not None and self.eval_stride < 1:
            raise IngestError(f"eval_stride must be >= 1, got {self.eval_stride}")


@dataclass
class Splits:
    """Window sets produced by :func:`make_splits`, plus the train-fitted scaler."""

    train: list
    val: list
    holdout: list
    attack: list
    scaler: Scaler
    boundaries: dict = field(default_factory=dict)


def load_csv(path, label_column: str, drop_columns=(),
             timestamp_column: str | None = None) -> TimeSeriesFrame:
    """Parse a labeled sensor CSV into a TimeSeriesFrame.

    Column names are taken from the header (whitespace-stripped). Labels
    accept normal/attack (case-insensitive) or 0/1. Every remaining
    column must be numeric; a bad cell is reported with its 1-based data
    row and column name.
    """
    drop = set(drop_columns)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        rows = list(reader)
    if not rows:
        raise IngestError(f"{path}: no data rows")
    if label_column not in header:
        raise IngestError(
            f"{path}: label column {label_column!r} not found; "
            f"columns are {header}")
    unknown = drop - set(header)
    if unknown:
        raise IngestError(f"{path}: drop columns not present: {sorted(unknown)}")
    if timestamp_column is not None and timestamp_column not in header:
        raise IngestError(f"{path}: timestamp column {timestamp_column!r} not found")

    label_idx = header.index(label_column)
    ts_idx = header.index(timestamp_column) if timestamp_column else None
    sensor_idx = [i for i, name in enumerate(header)
                  if name not in drop and i != label_idx and i != ts_idx]
    if not sensor_idx:
        raise IngestError(f"{path}: no sensor columns remain after dropping")

    n_rows = len(rows)
    values = np.empty((n_rows, len(sensor_idx)))
    labels = np.empty(n_rows, dtype=np.int64)
    timestamps = np.empty(n_rows, dtype=np.int64)
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise IngestError(
                f"{path}: row {r + 1} has {len(row)} cells, expected {len(header)}")
        raw_label = row[label_idx].strip().lower()
        if raw_label not in _LABEL_MAP:
            raise IngestError(
                f"{path}: row {r + 1}: unrecognized label {row[label_idx]!r} "
                f"(expected normal/attack or 0/1)")
        labels[r] = _LABEL_MAP[raw_label]
        if ts_idx is not None:
            try:
                timestamps[r] = int(row[ts_idx])
            except ValueError:
                raise IngestError(
                    f"{path}: row {r + 1}: non-integer timestamp "
                    f"{row[ts_idx]!r}") from None
        else:
            timestamps[r] = r
        for c, i in enumerate(sensor_idx):
            try:
                values[r, c] = float(row[i])
            except ValueError:
                raise IngestError(
                    f"{path}: row {r + 1}, column {header[i]!r}: "
                    f"non-numeric value {row[i]!r}") from None
    names = [header[i] for i in sensor_idx]
    return TimeSeriesFrame(values, labels, names, timestamps)


def fit_scaler(frame: TimeSeriesFrame, rows: range) -> Scaler:
    """Per-channel mean/std over the given row range (population convention).

    Zero-variance channels get their std floored at 1e-8 rather than
    being dropped, keeping the channel count stable.
    """
    if len(rows) == 0:
        raise IngestError("cannot fit a scaler on an empty row range")
    if rows.start < 0 or rows.stop > frame.n_rows or rows.step != 1:
        raise IngestError(
            f"row range {rows} invalid for frame with {frame.n_rows} rows")
    block = frame.values[rows.start:rows.stop]
    mean = block.mean(axis=0)
    std = block.std(axis=0)  # divide-by-N
    return Scaler(mean=mean, std=np.maximum(std, STD_FLOOR))


def slice_windows(frame: TimeSeriesFrame, scaler: Scaler,
                  window_size: int, stride: int) -> list:
    """Scaled sliding windows starting at 0, stride, 2*stride, ...

    The trailing partial window is discarded. A window is labeled attack
    iff any covered timestep carries an attack label.
    """
    if stride < 1:
        raise IngestError(f"stride must be >= 1, got {stride}")
    if frame.n_rows < window_size:
        raise IngestError(
            f"frame has {frame.n_rows} rows, needs at least {window_size}")
    scaled = scaler.apply(frame.values)
    out = []
    for start in range(0, frame.n_rows - window_size + 1, stride):
        block = frame.labels[start:start + window_size]
        out.append(SensorWindow(data=scaled[start:start + window_size],
                                start_index=start,
                                label=int(block.max())))
    return out


def make_splits(frame: TimeSeriesFrame, attack_frame: TimeSeriesFrame,
                spec: SplitSpec, window_size: int) -> Splits:
    """Chronological train/val/holdout windows plus attack windows.

    The normal frame must carry only normal labels and is cut
    contiguously in time (train, then val, then holdout). The scaler is
    fitted on the train rows only and applied to every split including
    the attack frame. Train windows use train_stride; all evaluation
    windows use eval_stride (default: non-overlapping).
    """
    spec.validate()
    if frame.labels.any():
        raise IngestError("normal frame contains attack labels")
    if attack_frame.channel_names != frame.channel_names:
        raise IngestError(
            f"attack frame channels {attack_frame.channel_names} do not match "
            f"normal frame channels {frame.channel_names}")
    t = frame.n_rows
    n1 = int(t * spec.train_frac)
    n2 = int(t * (spec.train_frac + spec.val_frac))
    eval_stride = spec.eval_stride if spec.eval_stride is not None else window_size
    scaler = fit_scaler(frame, range(0, n1))
    train = slice_windows(frame.slice_rows(0, n1), scaler, window_size,
                          spec.train_stride)
    val = slice_windows(frame.slice_rows(n1, n2), scaler, window_size, eval_stride)
    holdout = slice_windows(frame.slice_rows(n2, t), scaler, window_size,
                            eval_stride)
    attack = slice_windows(attack_frame, scaler, window_size, eval_stride)
    return Splits(train=train, val=val, holdout=holdout, attack=attack,
                  scaler=scaler,
                  boundaries={"train_rows": [0, n1], "val_rows": [n1, n2],
                              "holdout_rows": [n2, t],
                              "train_stride": spec.train_stride,
                              "eval_stride": eval_stride})
