"""Feature dataset loading, normalization, and epoch planning.

Two on-disk formats are supported:

* CSV: one sample per line, comma-separated decimal floats, optionally a
  final integer label column (declare with label_col="last").
* Packed binary: magic b"HDH1", u32-LE row count, u32-LE dim, u8 has_labels,
  then rows*dim little-endian float32 values row-major, then (if has_labels)
  rows little-endian int32 labels.

All values are converted to float64 in memory. Normalization maps every
dimension into [-1, 1] (the encoder stack reconstructs through tanh, so
inputs outside that range can never be reconstructed) and records the
per-dimension shift/scale so queries are transformed identically.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, ConfigError, FormatError, ParseError, ShapeError

PACKED_MAGIC = b"HDH1"

NORM_MODES = ("minmax_symmetric", "zscore_clamped")


@dataclass(frozen=True)
class NormStats:
    """Per-dimension affine transform: normalized = (raw - shift) * scale.

    zscore_clamped additionally clamps the result to [-1, 1]. Constant
    dimensions get scale 0 and therefore map to 0.
    """

    mode: str
    shift: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        if self.mode not in NORM_MODES + ("identity",):
            raise ConfigError(f"unknown normalization mode {self.mode!r}")
        for name in ("shift", "scale"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.shift.shape != self.scale.shape or self.shift.ndim != 1:
            raise ShapeError("shift and scale must be 1-D vectors of equal length")

    def apply(self, raw: np.ndarray) -> np.ndarray:
        raw = np.asarray(raw, dtype=np.float64)
        if raw.shape[-1] != self.shift.shape[0]:
            raise ShapeError(
                f"expected dimension {self.shift.shape[0]}, got {raw.shape[-1]}"
            )
        out = (raw - self.shift) * self.scale
        if self.mode == "zscore_clamped":
            out = np.clip(out, -1.0, 1.0)
        return out

    @classmethod
    def identity(cls, dim: int) -> "NormStats":
        return cls("identity", np.zeros(dim), np.ones(dim))


@dataclass(frozen=True)
class FeatureMatrix:
    """An immutable N x d matrix of finite feature values.

    labels, when present, is an int array of length N. norm_stats records
    the transform already applied to values (None for raw data).
    """

    values: np.ndarray
    labels: np.ndarray | None = None
    norm_stats: NormStats | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[0] < 1 or vals.shape[1] < 1:
            raise ShapeError(f"feature matrix must be 2-D and non-empty, got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise FormatError("feature matrix contains non-finite values")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        if self.labels is not None:
            labs = np.asarray(self.labels, dtype=np.int64)
            if labs.shape != (vals.shape[0],):
                raise ShapeError(
                    f"labels must have length {vals.shape[0]}, got {labs.shape}"
                )
            labs.flags.writeable = False
            object.__setattr__(self, "labels", labs)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def load_features(path, format: str = "csv", label_col: str | None = None) -> FeatureMatrix:
    """Load a feature file. format is "csv" or "packed-binary".

    label_col="last" treats the final CSV column as an integer class label;
    the packed format carries its own has_labels flag.
    """
    if format == "csv":
        return _load_csv(path, label_col)
    if format == "packed-binary":
        return _load_packed(path)
    raise ConfigError(f"unknown feature format {format!r}")


def _load_csv(path, label_col):
    if label_col not in (None, "last"):
        raise ConfigError(f"label_col must be None or 'last', got {label_col!r}")
    rows = []
    labels = [] if label_col == "last" else None
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if width is None:
                width = len(cells)
                if label_col == "last" and width < 2:
                    raise FormatError(
                        f"{path}: need at least 2 columns with a label column"
                    )
            elif len(cells) != width:
                raise FormatError(
                    f"{path}: row {lineno} has {len(cells)} columns, expected {width}"
                )
            if labels is not None:
                feat_cells, label_cell = cells[:-1], cells[-1]
            else:
                feat_cells, label_cell = cells, None
            row = []
            for colno, cell in enumerate(feat_cells, start=1):
                try:
                    row.append(float(cell))
                except ValueError:
                    raise ParseError(
                        f"{path}: cannot parse {cell.strip()!r} at row {lineno}, "
                        f"column {colno}",
                        row=lineno,
                        col=colno,
                    ) from None
            if label_cell is not None:
                try:
                    labels.append(int(label_cell))
                except ValueError:
                    raise ParseError(
                        f"{path}: cannot parse label {label_cell.strip()!r} at row "
                        f"{lineno}, column {width}",
                        row=lineno,
                        col=width,
                    ) from None
            rows.append(row)
    if not rows:
        raise FormatError(f"{path}: no data rows")
    values = np.array(rows, dtype=np.float64)
    labs = np.array(labels, dtype=np.int64) if labels is not None else None
    return FeatureMatrix(values, labs)


def _load_packed(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 13:
        raise FormatError(f"{path}: too short for a packed feature file")
    if blob[:4] != PACKED_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {PACKED_MAGIC!r}")
    n, d = struct.unpack_from("<II", blob, 4)
    has_labels = blob[12]
    if has_labels not in (0, 1):
        raise FormatError(f"{path}: has_labels byte must be 0 or 1, got {has_labels}")
    if n < 1 or d < 1:
        raise FormatError(f"{path}: empty matrix ({n} x {d})")
    need = 13 + 4 * n * d + (4 * n if has_labels else 0)
    if len(blob) < need:
        raise FormatError(f"{path}: expected {need} bytes, got {len(blob)}")
    values = np.frombuffer(blob, dtype="<f4", count=n * d, offset=13)
    values = values.reshape(n, d).astype(np.float64)
    labels = None
    if has_labels:
        labels = np.frombuffer(blob, dtype="<i4", count=n, offset=13 + 4 * n * d)
        labels = labels.astype(np.int64)
    return FeatureMatrix(values, labels)


def save_packed(m: FeatureMatrix, path) -> None:
    """Write the packed-binary representation of a FeatureMatrix."""
    with open(path, "wb") as fh:
        fh.write(PACKED_MAGIC)
        fh.write(struct.pack("<IIB", m.rows, m.dim, 1 if m.labels is not None else 0))
        fh.write(m.values.astype("<f4").tobytes())
        if m.labels is not None:
            fh.write(m.labels.astype("<i4").tobytes())


def normalize(m: FeatureMatrix, mode: str = "minmax_symmetric") -> FeatureMatrix:
    """Map every dimension into [-1, 1] and record the transform.

    Already-normalized matrices (norm_stats set) are returned unchanged,
    which makes normalization idempotent.
    """
    if mode not in NORM_MODES:
        raise ConfigError(f"unknown normalization mode {mode!r}")
    if m.norm_stats is not None:
        return m
    vals = m.values
    if mode == "minmax_symmetric":
        lo = vals.min(axis=0)
        hi = vals.max(axis=0)
        shift = (lo + hi) / 2.0
        half = (hi - lo) / 2.0
        scale = np.where(half > 0, 1.0 / np.where(half > 0, half, 1.0), 0.0)
    else:
        shift = vals.mean(axis=0)
        std = vals.std(axis=0)
        scale = np.where(std > 0, 1.0 / np.where(std > 0, std, 1.0), 0.0)
    stats = NormStats(mode, shift, scale)
    return FeatureMatrix(stats.apply(vals), m.labels, stats)


@dataclass(frozen=True)
class EpochPlan:
    """A seeded partition of row indices into fixed-size training batches.

    order is a permutation of all row indices; the first
    epoch_count * batch_size entries form the batches, leftover rows are
    dropped for this plan.
    """

    epoch_count: int
    batch_size: int
    order: np.ndarray
    seed: int

    def __post_init__(self):
        order = np.asarray(self.order, dtype=np.int64)
        order.flags.writeable = False
        object.__setattr__(self, "order", order)

    def batch_indices(self, m: int) -> np.ndarray:
        if not 0 <= m < self.epoch_count:
            raise ShapeError(f"batch index {m} out of range 0..{self.epoch_count - 1}")
        start = m * self.batch_size
        return self.order[start: start + self.batch_size]

    def batches(self):
        for m in range(self.epoch_count):
            yield self.batch_indices(m)


def plan_epochs(m: FeatureMatrix, epoch_count: int, batch_size: int, seed: int) -> EpochPlan:
    """Plan epoch_count disjoint batches of batch_size rows each."""
    if epoch_count < 1 or batch_size < 1:
        raise ConfigError("epoch_count and batch_size must be >= 1")
    need = epoch_count * batch_size
    if need > m.rows:
        raise CapacityError(
            f"plan needs {epoch_count} x {batch_size} = {need} rows, "
            f"matrix has {m.rows}"
        )
    order = np.random.default_rng(seed).permutation(m.rows)
    return EpochPlan(epoch_count, batch_size, order, seed)
