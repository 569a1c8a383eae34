"""Time-series containers, CSV ingestion and multi-asset alignment.

Integer tick positions are the canonical index for every computation; the
``timestamps`` carried by a series are metadata (calendar dates or ticks).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


def _as_timestamps(ts) -> np.ndarray:
    arr = np.asarray(ts)
    if arr.dtype.kind in "US" or arr.dtype == object:
        try:
            return arr.astype("datetime64[D]")
        except ValueError as exc:
            raise DataError(f"malformed timestamp: {exc}") from None
    if arr.dtype.kind == "f":
        if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
            raise DataError("float timestamps must be integral ticks")
        return arr.astype(np.int64)
    return arr


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """An immutable, strictly increasing, finite-valued series."""

    timestamps: np.ndarray
    values: np.ndarray
    name: str = ""

    def __post_init__(self):
        ts = _as_timestamps(self.timestamps)
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 1 or ts.ndim != 1:
            raise DataError("timestamps and values must be 1-d")
        if len(vals) < 1:
            raise DataError("a TimeSeries needs at least one value")
        if len(ts) != len(vals):
            raise DataError(f"{len(ts)} timestamps for {len(vals)} values")
        if len(ts) > 1 and not np.all(ts[1:] > ts[:-1]):
            raise DataError("timestamps must be strictly increasing")
        if not np.all(np.isfinite(vals)):
            raise DataError(f"non-finite values in series {self.name!r}")
        ts = ts.copy()
        ts.flags.writeable = False
        vals.flags.writeable = False
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_values(cls, values, name: str = "", start: int = 0) -> "TimeSeries":
        values = np.asarray(values, dtype=float)
        return cls(np.arange(start, start + len(values)), values, name)

    def __len__(self) -> int:
        return len(self.values)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __getitem__(self, item) -> "TimeSeries":
        if isinstance(item, slice):
            return TimeSeries(self.timestamps[item], self.values[item], self.name)
        raise TypeError("TimeSeries supports slicing only; use .values for scalars")

    def with_values(self, values, name: str | None = None) -> "TimeSeries":
        return TimeSeries(self.timestamps, values, self.name if name is None else name)

    def equals(self, other: "TimeSeries") -> bool:
        return (
            np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True, eq=False)
class AssetPanel:
    """Named series sharing one timestamp axis once aligned.

    ``fill_mask`` marks values produced by forward-filling (outer alignment).
    """

    series: Mapping[str, TimeSeries]
    asset_class: Mapping[str, str] = field(default_factory=dict)
    fill_mask: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.series:
            raise DataError("panel needs at least one asset")
        object.__setattr__(self, "series", dict(self.series))
        object.__setattr__(self, "asset_class", dict(self.asset_class))
        object.__setattr__(self, "fill_mask", {k: np.asarray(v, bool) for k, v in self.fill_mask.items()})

    @classmethod
    def from_matrix(cls, values, names: Iterable[str] | None = None, timestamps=None) -> "AssetPanel":
        values = np.asarray(values, dtype=float)
        if values.ndim != 2:
            raise DataError("matrix must be (ticks, assets)")
        n, k = values.shape
        names = list(names) if names is not None else [f"asset{i}" for i in range(k)]
        if len(names) != k:
            raise DataError("one name per column required")
        ts = np.arange(n) if timestamps is None else timestamps
        return cls({nm: TimeSeries(ts, values[:, i], nm) for i, nm in enumerate(names)})

    @property
    def names(self) -> list[str]:
        return list(self.series)

    def __len__(self) -> int:
        return len(self.series)

    def is_aligned(self) -> bool:
        axes = [s.timestamps for s in self.series.values()]
        return all(len(a) == len(axes[0]) and np.array_equal(a, axes[0]) for a in axes[1:])

    @property
    def timestamps(self) -> np.ndarray:
        if not self.is_aligned():
            raise DataError("panel is not aligned; call align() first")
        return next(iter(self.series.values())).timestamps

    def matrix(self) -> np.ndarray:
        """Values as a (ticks, assets) array in asset order."""
        if not self.is_aligned():
            raise DataError("panel is not aligned; call align() first")
        return np.column_stack([s.values for s in self.series.values()])

    def subset(self, names: Iterable[str]) -> "AssetPanel":
        names = list(names)
        return AssetPanel(
            {n: self.series[n] for n in names},
            {n: self.asset_class[n] for n in names if n in self.asset_class},
            {n: self.fill_mask[n] for n in names if n in self.fill_mask},
        )


def diff(prices, log: bool = False):
    """Price changes ``D_t = S_t - S_{t-1}``.

    A ``TimeSeries`` input returns a ``TimeSeries`` stamped at ``t``; array
    input returns an array. ``log=True`` differences log prices instead.
    """
    vals = np.asarray(prices, dtype=float)
    if vals.ndim != 1 or len(vals) < 2:
        raise DataError("diff needs a 1-d series of length >= 2")
    if log:
        if np.any(vals <= 0):
            raise DataError("log mode requires strictly positive prices")
        vals = np.log(vals)
    d = np.diff(vals)
    if isinstance(prices, TimeSeries):
        return TimeSeries(prices.timestamps[1:], d, prices.name)
    return d


def cumulate(changes, s0: float = 0.0) -> np.ndarray:
    """Inverse of ``diff``: prices ``S_0, S_0 + D_1, ...``."""
    d = np.asarray(changes, dtype=float)
    return np.concatenate([[s0], s0 + np.cumsum(d)])


def align(panel: AssetPanel, policy: str = "inner") -> AssetPanel:
    """Put all assets on one timestamp axis.

    ``inner`` keeps common timestamps only. ``outer`` takes the union,
    forward-fills gaps and flags each filled value in ``fill_mask``; rows
    before the latest first observation cannot be filled and are dropped.
    """
    if policy not in ("inner", "outer"):
        raise ValueError(f"unknown alignment policy {policy!r}")
    series = panel.series
    if policy == "inner":
        common = None
        for s in series.values():
            common = s.timestamps if common is None else np.intersect1d(common, s.timestamps)
        if common is None or len(common) == 0:
            raise DataError("empty timestamp intersection under inner alignment")
        out, masks = {}, {}
        for name, s in series.items():
            keep = np.isin(s.timestamps, common)
            out[name] = TimeSeries(s.timestamps[keep], s.values[keep], s.name)
            prior = panel.fill_mask.get(name)
            masks[name] = np.zeros(len(common), bool) if prior is None else prior[keep]
        return AssetPanel(out, panel.asset_class, masks)

    union = np.unique(np.concatenate([s.timestamps for s in series.values()]))
    start = max(s.timestamps[0] for s in series.values())
    union = union[union >= start]
    out, masks = {}, {}
    for name, s in series.items():
        pos = np.searchsorted(s.timestamps, union, side="right") - 1
        exact = s.timestamps[pos] == union
        prior = panel.fill_mask.get(name)
        filled = ~exact if prior is None else (~exact | prior[pos])
        out[name] = TimeSeries(union, s.values[pos], s.name)
        masks[name] = filled
    return AssetPanel(out, panel.asset_class, masks)


def _parse_timestamp(raw: str):
    raw = raw.strip()
    try:
        return int(raw)
    except ValueError:
        return np.datetime64(raw, "D")


def load_csv(
    path,
    column_spec: Mapping[str, str] | Iterable[str] | None = None,
    *,
    timestamp_column: str | None = None,
    delimiter: str = ",",
    missing: str = "reject",
    join: str = "inner",
    asset_class: Mapping[str, str] | None = None,
) -> AssetPanel:
    """Read a wide CSV (one timestamp column, one column per asset).

    ``column_spec`` maps CSV column -> asset name (a plain list keeps the
    column names); by default every non-timestamp column is an asset. Rows
    may come in any order; repeated timestamps are rejected. ``missing="reject"`` raises on blank or
    non-numeric cells, naming the row; ``missing="skip"`` treats them as gaps
    that ``join`` ("inner" or "outer") later resolves.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    if missing not in ("reject", "skip"):
        raise ValueError(f"unknown missing-value policy {missing!r}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = list(reader)

    ts_col = timestamp_column or header[0]
    if ts_col not in header:
        raise DataError(f"{path}: no timestamp column {ts_col!r}")
    ts_idx = header.index(ts_col)
    if column_spec is None:
        column_spec = {h: h for h in header if h != ts_col}
    elif not isinstance(column_spec, Mapping):
        column_spec = {c: c for c in column_spec}
    if not column_spec:
        raise DataError(f"{path}: no value columns")
    for col in column_spec:
        if col not in header:
            raise DataError(f"{path}: missing column {col!r}")

    stamps: list = []
    row_of: list[int] = []
    cols: dict[str, list[float]] = {c: [] for c in column_spec}
    for lineno, row in enumerate(rows, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            stamps.append(_parse_timestamp(row[ts_idx]))
        except (ValueError, IndexError):
            raise DataError(f"{path}: malformed timestamp at row {lineno}") from None
        row_of.append(lineno)
        for col in column_spec:
            j = header.index(col)
            cell = row[j].strip() if j < len(row) else ""
            try:
                v = float(cell)
                if not np.isfinite(v):
                    raise ValueError
            except ValueError:
                if missing == "reject":
                    raise DataError(
                        f"{path}: non-numeric value {cell!r} in column {col!r} at row {lineno}"
                    ) from None
                v = np.nan
            cols[col].append(v)

    if not stamps:
        raise DataError(f"{path}: no data rows")
    ts = np.array(stamps)
    order = np.argsort(ts, kind="stable")
    ts = ts[order]
    dup = np.flatnonzero(ts[1:] == ts[:-1])
    if len(dup):
        raise DataError(f"{path}: repeated timestamp {ts[dup[0]]} at row {row_of[order[dup[0] + 1]]}")
    series = {}
    for col, asset in column_spec.items():
        vals = np.asarray(cols[col])[order]
        ok = np.isfinite(vals)
        if not ok.any():
            raise DataError(f"{path}: column {col!r} has no numeric values")
        series[asset] = TimeSeries(ts[ok], vals[ok], asset)
    panel = AssetPanel(series, asset_class or {})
    return align(panel, join)


def write_csv(path, header: list[str], columns: list, fmt=repr) -> None:
    """Write columns of equal length; floats via ``repr`` for round-tripping."""
    n = len(columns[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(n):
            w.writerow([_fmt(c[i], fmt) for c in columns])


def _fmt(v, fmt):
    if isinstance(v, (float, np.floating)):
        return fmt(float(v))
    if isinstance(v, np.generic):
        return str(v.item())
    return str(v)
