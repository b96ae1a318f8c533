"""Balanced panel container, CSV ingestion and difference/lag transforms.

Series are stored as ``n x T`` float matrices (row = unit, column = time).
Only the order of the time ids matters; their spacing is never used.
"""

from __future__ import annotations

import operator
import re
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .exceptions import (
    DuplicateObservation,
    LagTooDeep,
    MissingColumn,
    MissingValue,
    NonNumericCell,
    TooShort,
    UnbalancedPanel,
)

__all__ = [
    "PanelData",
    "TransformedPanel",
    "load_csv",
    "from_frame",
    "first_difference",
    "build_lag",
    "transform",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


def _sort_key(ids: Sequence[str]):
    # numeric-looking ids sort numerically, everything else lexically
    try:
        return [float(v) for v in ids]
    except ValueError:
        return list(ids)


@dataclass(frozen=True)
class PanelData:
    """Strongly balanced panel of named series.

    Attributes
    ----------
    unit_ids : tuple of str
        Sorted unit identifiers, one per row.
    time_ids : tuple of float
        Strictly increasing time points, one per column.
    series : mapping
        Variable name -> read-only ``n x T`` matrix. Missing cells are NaN.
    """

    unit_ids: tuple
    time_ids: tuple
    series: Mapping[str, np.ndarray]
    id_name: str = "id"
    time_name: str = "time"

    def __post_init__(self):
        n, T = len(self.unit_ids), len(self.time_ids)
        if len(set(self.unit_ids)) != n:
            raise DuplicateObservation("unit ids are not unique")
        if T > 1 and np.any(np.diff(np.asarray(self.time_ids, dtype=float)) <= 0):
            raise ValueError("time ids must be strictly increasing")
        frozen = {}
        for name, values in self.series.items():
            values = np.asarray(values, dtype=float)
            if values.shape != (n, T):
                raise UnbalancedPanel(
                    f"series {name!r} has shape {values.shape}, expected {(n, T)}")
            frozen[name] = _frozen(values)
        object.__setattr__(self, "series", MappingProxyType(frozen))

    @property
    def n(self) -> int:
        return len(self.unit_ids)

    @property
    def T(self) -> int:
        return len(self.time_ids)

    @property
    def variables(self) -> list[str]:
        return list(self.series)

    def missing_mask(self, name: str) -> np.ndarray:
        return np.isnan(self[name])

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.series[name]
        except KeyError:
            raise MissingColumn(f"variable {name!r} not in panel") from None

    def require(self, names: Sequence[str]) -> None:
        """Raise if any of ``names`` is absent or has a missing cell."""
        for name in names:
            mask = self.missing_mask(name)
            if mask.any():
                i, t = np.argwhere(mask)[0]
                raise MissingValue(
                    f"{name!r} is missing for unit {self.unit_ids[i]!r} at time "
                    f"{self.time_ids[t]!r} ({int(mask.sum())} missing cells)")

    def select_units(self, keep: np.ndarray) -> "PanelData":
        keep = np.asarray(keep, dtype=bool)
        return PanelData(
            tuple(u for u, k in zip(self.unit_ids, keep) if k),
            self.time_ids,
            {k: v[keep] for k, v in self.series.items()},
            self.id_name,
            self.time_name,
        )

    def where(self, expr: str) -> "PanelData":
        """Keep observations satisfying ``column op constant``.

        The predicate must keep or drop whole units, since the result has to
        stay balanced. Supported operators: ``== != < <= > >=``.
        """
        column, op, value = _parse_predicate(expr)
        keep_obs = op(self[column], value)
        keep_units = keep_obs.all(axis=1)
        if np.any(keep_obs.any(axis=1) & ~keep_units):
            raise UnbalancedPanel(
                f"filter {expr!r} drops some but not all periods of a unit")
        return self.select_units(keep_units)


_OPS = {
    "==": operator.eq, "!=": operator.ne, "<=": operator.le,
    ">=": operator.ge, "<": operator.lt, ">": operator.gt,
}
_PREDICATE = re.compile(r"^\s*([A-Za-z_][\w.]*)\s*(==|!=|<=|>=|<|>)\s*(\S+)\s*$")


def _parse_predicate(expr: str):
    m = _PREDICATE.match(expr)
    if m is None:
        raise ValueError(f"cannot parse filter {expr!r}; expected 'column op constant'")
    column, op, value = m.groups()
    try:
        const = float(value)
    except ValueError:
        raise ValueError(f"filter constant {value!r} is not numeric") from None
    return column, _OPS[op], const


def from_frame(df: pd.DataFrame, id_col: str, time_col: str) -> PanelData:
    """Build a PanelData from a long-format frame (one row per unit-time)."""
    for col in (id_col, time_col):
        if col not in df.columns:
            raise MissingColumn(f"column {col!r} not found")
    df = df.copy()
    df[id_col] = df[id_col].astype(str).str.strip()
    times = pd.to_numeric(df[time_col], errors="coerce")
    if times.isna().any():
        raise NonNumericCell(f"time column {time_col!r} has non-numeric or empty cells")
    df[time_col] = times

    values = {}
    for col in df.columns:
        if col in (id_col, time_col):
            continue
        raw = df[col]
        num = pd.to_numeric(raw, errors="coerce")
        blank = raw.isna() | (raw.astype(str).str.strip() == "")
        bad = num.isna() & ~blank
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise NonNumericCell(
                f"column {col!r} has non-numeric value {raw.iloc[row]!r} at data row {row + 1}")
        values[col] = num.astype(float)

    dup = df.duplicated([id_col, time_col])
    if dup.any():
        row = df.loc[dup].iloc[0]
        raise DuplicateObservation(
            f"duplicate observation for unit {row[id_col]!r} at time {row[time_col]!r}")

    units = list(df[id_col].unique())
    units = [u for _, u in sorted(zip(_sort_key(units), units))]
    time_ids = sorted(df[time_col].unique())
    n, T = len(units), len(time_ids)
    if len(df) != n * T:
        counts = df.groupby(id_col)[time_col].nunique()
        short = counts[counts < T]
        raise UnbalancedPanel(
            f"panel is not strongly balanced: {len(short)} unit(s) miss time points "
            f"(first: {short.index[0]!r} has {int(short.iloc[0])} of {T})")

    uidx = pd.Index(units).get_indexer(df[id_col])
    tidx = pd.Index(time_ids).get_indexer(df[time_col])
    series = {}
    for col, num in values.items():
        mat = np.full((n, T), np.nan)
        mat[uidx, tidx] = num.to_numpy()
        series[col] = mat
    return PanelData(tuple(units), tuple(float(t) for t in time_ids), series,
                     id_name=id_col, time_name=time_col)


def load_csv(path, id_col: str, time_col: str) -> PanelData:
    """Read a long-format CSV into a balanced PanelData.

    Empty cells are kept as missing; :meth:`PanelData.require` rejects them
    for the variables a model actually uses.
    """
    df = pd.read_csv(path, dtype=str, keep_default_na=False, na_values=[""],
                     encoding="utf-8")
    df.columns = [c.strip() for c in df.columns]
    return from_frame(df, id_col, time_col)


def first_difference(series: np.ndarray) -> np.ndarray:
    """``out[:, t] = series[:, t + 1] - series[:, t]``."""
    series = np.asarray(series, dtype=float)
    if series.ndim < 2 or series.shape[1] < 2:
        raise TooShort("first difference needs at least two periods")
    return series[:, 1:] - series[:, :-1]


def build_lag(series: np.ndarray, k: int = 1) -> np.ndarray:
    """Shift ``series`` right by ``k`` periods; the first ``k`` columns are NaN."""
    series = np.asarray(series, dtype=float)
    if k < 1:
        raise ValueError("lag order must be positive")
    if k >= series.shape[1]:
        raise LagTooDeep(f"lag {k} needs more than {series.shape[1]} periods")
    out = np.full_like(series, np.nan)
    out[:, k:] = series[:, :-k]
    return out


@dataclass(frozen=True)
class TransformedPanel:
    """Levels and first differences of the model variables.

    ``x`` stacks the regressors along the last axis, with the lagged
    dependent variable first for dynamic models. Column ``t`` of ``dy`` and
    ``dx`` holds the change from period ``t`` to ``t + 1`` (0-based).
    """

    y: np.ndarray
    x: np.ndarray
    q: np.ndarray
    x_names: tuple
    dynamic: bool
    source: PanelData = field(repr=False)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def T(self) -> int:
        return self.y.shape[1]

    @property
    def dy(self) -> np.ndarray:
        return first_difference(self.y)

    @property
    def dx(self) -> np.ndarray:
        return self.x[:, 1:, :] - self.x[:, :-1, :]

    @property
    def first_available(self) -> int:
        """First 0-based column at which every regressor level exists."""
        return 1 if self.dynamic else 0


def transform(panel: PanelData, depvar: str, threshold_var: str,
              regressors: Sequence[str], dynamic: bool = True) -> TransformedPanel:
    """Assemble levels of y, q and the regressor block from a panel."""
    panel.require([depvar, threshold_var, *regressors])
    y = panel[depvar]
    cols, names = [], []
    if dynamic:
        cols.append(build_lag(y, 1))
        names.append(f"L.{depvar}")
    for name in regressors:
        cols.append(panel[name])
        names.append(name)
    x = np.stack(cols, axis=-1) if cols else np.empty(y.shape + (0,))
    return TransformedPanel(_frozen(y), _frozen(x), _frozen(panel[threshold_var]),
                            tuple(names), dynamic, panel)
