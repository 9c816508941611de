"""
Panels of term-structure observations on a common time/maturity lattice.

All panels share a :class:`GridSpec`: dates are ``i * delta_n`` for
``i = 0..n_steps`` and maturities are ``j * delta_n`` for ``j = 0..m_cells``
with ``m_cells = max_maturity / delta_n``. The same step is used in both
directions, which is what makes difference returns line up with the
roll-down of the forward curve.

Column conventions
------------------
* Yield and log-price panels have ``m_cells + 1`` columns (maturity 0 included).
* Forward panels store cell integrals ``F[i, k] = int_{k dn}^{(k+1) dn} f_{i dn}(u) du``
  and may carry extra columns beyond ``m_cells`` (shift headroom).
* Difference-return panels have ``m_cells - 1`` columns; column ``c`` belongs to
  the maturity cell ``[c dn, (c+1) dn]``.
"""

from __future__ import annotations

import csv
import datetime as _dt
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

__all__ = [
    "GridSpec",
    "YieldPanel",
    "LogBondPanel",
    "ForwardPanel",
    "DifferenceReturnPanel",
    "yields_to_log_prices",
    "log_prices_to_yields",
    "forwards_to_log_prices",
    "difference_returns",
    "project_onto_pcs",
    "higher_order_difference_returns",
    "read_yields_csv",
    "write_panel_csv",
]

_GRID_TOL = 1e-9


@dataclass(frozen=True)
class GridSpec:
    """Shared time and maturity discretization.

    Parameters
    ----------
    delta_n : float
        Step in years, used for both time and maturity.
    n_steps : int
        Number of time increments; the panel has ``n_steps + 1`` dates.
    max_maturity : float
        Largest maturity ``M`` in years. ``M / delta_n`` must be an integer.
    """

    delta_n: float
    n_steps: int
    max_maturity: float

    def __post_init__(self):
        if not (self.delta_n > 0 and math.isfinite(self.delta_n)):
            raise ConfigError(f"delta_n must be positive, got {self.delta_n}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ConfigError(f"n_steps must be a positive integer, got {self.n_steps}")
        object.__setattr__(self, "n_steps", int(self.n_steps))
        ratio = self.max_maturity / self.delta_n
        if abs(ratio - round(ratio)) > _GRID_TOL * max(1.0, ratio) or round(ratio) < 1:
            raise ConfigError(
                f"max_maturity / delta_n = {ratio!r} is not a positive integer"
            )

    @classmethod
    def from_horizon(cls, delta_n: float, horizon: float, max_maturity: float) -> "GridSpec":
        steps = horizon / delta_n
        if abs(steps - round(steps)) > _GRID_TOL * max(1.0, steps):
            raise ConfigError(f"horizon / delta_n = {steps!r} is not an integer")
        return cls(delta_n, int(round(steps)), max_maturity)

    @property
    def m_cells(self) -> int:
        return int(round(self.max_maturity / self.delta_n))

    @property
    def horizon(self) -> float:
        return self.n_steps * self.delta_n

    @property
    def maturities(self) -> np.ndarray:
        return np.arange(self.m_cells + 1) * self.delta_n

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.delta_n


def _frozen_array(values, name) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True)
    if arr.ndim != 2:
        raise DataError(f"{name} values must be a 2-d matrix, got shape {arr.shape}")
    bad = ~np.isfinite(arr)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise DataError(
            f"{name} has {int(bad.sum())} non-finite entries; first at row {i}, column {j}"
        )
    arr.flags.writeable = False
    return arr


def _check_dates(dates, rows):
    if dates is None:
        return None
    dates = np.asarray(dates)
    if dates.shape != (rows,):
        raise DataError(f"expected {rows} date labels, got {dates.shape}")
    return dates


@dataclass(frozen=True, eq=False)
class YieldPanel:
    """Continuously compounded yields ``y[i, j]`` at date ``i dn``, maturity ``j dn``."""

    grid: GridSpec
    values: np.ndarray
    dates: np.ndarray | None = None

    def __post_init__(self):
        vals = _frozen_array(self.values, "YieldPanel")
        expected = (self.grid.n_steps + 1, self.grid.m_cells + 1)
        if vals.shape != expected:
            raise DataError(f"YieldPanel shape {vals.shape} != {expected}")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "dates", _check_dates(self.dates, vals.shape[0]))


@dataclass(frozen=True, eq=False)
class LogBondPanel:
    """Log zero-coupon prices ``P[i, j] = log P_{i dn}(j dn)``; column 0 is identically 0."""

    grid: GridSpec
    values: np.ndarray
    dates: np.ndarray | None = None

    def __post_init__(self):
        vals = _frozen_array(self.values, "LogBondPanel")
        expected = (self.grid.n_steps + 1, self.grid.m_cells + 1)
        if vals.shape != expected:
            raise DataError(f"LogBondPanel shape {vals.shape} != {expected}")
        if np.any(np.abs(vals[:, 0]) > 1e-12):
            raise DataError("log price at maturity 0 must be 0 on every date")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "dates", _check_dates(self.dates, vals.shape[0]))


@dataclass(frozen=True, eq=False)
class ForwardPanel:
    """Cell integrals of the forward curve, ``F[i, k]`` over ``[k dn, (k+1) dn]``.

    Columns past ``grid.m_cells`` are simulation headroom and are not part of
    the observed maturity range.
    """

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        vals = _frozen_array(self.values, "ForwardPanel")
        if vals.shape[0] != self.grid.n_steps + 1:
            raise DataError(f"ForwardPanel has {vals.shape[0]} dates, expected {self.grid.n_steps + 1}")
        object.__setattr__(self, "values", vals)

    @property
    def internal_cells(self) -> int:
        return self.values.shape[1]

    def observed(self) -> np.ndarray:
        """The first ``m_cells`` columns (maturities up to ``M``)."""
        return self.values[:, : self.grid.m_cells]


@dataclass(frozen=True, eq=False)
class DifferenceReturnPanel:
    """Difference returns ``d[r, c]``.

    Row ``r`` is the return from date ``row_offset + r`` to the next date;
    column ``c`` belongs to the maturity cell ``[c dn, (c+1) dn]``.
    """

    grid: GridSpec
    values: np.ndarray
    row_offset: int = 0
    dates: np.ndarray | None = None

    def __post_init__(self):
        vals = _frozen_array(self.values, "DifferenceReturnPanel")
        if vals.shape[1] != self.grid.m_cells - 1:
            raise DataError(
                f"DifferenceReturnPanel has {vals.shape[1]} columns, expected {self.grid.m_cells - 1}"
            )
        if vals.shape[0] < 1 or self.row_offset + vals.shape[0] > self.grid.n_steps:
            raise DataError("difference-return rows exceed the grid's time range")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "dates", _check_dates(self.dates, vals.shape[0]))

    @property
    def delta_n(self) -> float:
        return self.grid.delta_n

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def period_length(self) -> float:
        """Length in years of the time span covered by the rows."""
        return self.n_rows * self.grid.delta_n

    def select(self, rows: slice) -> "DifferenceReturnPanel":
        """Sub-panel of the given (local) rows, keeping absolute row indices."""
        start, stop, step = rows.indices(self.n_rows)
        if step != 1 or stop <= start:
            raise DataError(f"invalid row selection {rows}")
        dates = None if self.dates is None else self.dates[start:stop]
        return DifferenceReturnPanel(
            self.grid, self.values[start:stop], self.row_offset + start, dates
        )


def yields_to_log_prices(y: YieldPanel) -> LogBondPanel:
    """``log P_t(x) = -x * y_t(x)`` on the grid."""
    logp = -y.values * y.grid.maturities[None, :]
    logp[:, 0] = 0.0
    return LogBondPanel(y.grid, logp, y.dates)


def log_prices_to_yields(p: LogBondPanel) -> YieldPanel:
    """Inverse of :func:`yields_to_log_prices`.

    The yield at maturity 0 is undefined; it is filled with the shortest
    available yield.
    """
    x = p.grid.maturities
    y = np.empty_like(p.values)
    y[:, 1:] = -p.values[:, 1:] / x[None, 1:]
    y[:, 0] = y[:, 1]
    return YieldPanel(p.grid, y, p.dates)


def forwards_to_log_prices(f: ForwardPanel) -> LogBondPanel:
    """``log P_t(j dn) = -sum_{k < j} F[t, k]``, exact for cell integrals."""
    m = f.grid.m_cells
    if f.values.shape[1] < m:
        raise DataError(f"forward panel has {f.values.shape[1]} maturity columns, need {m}")
    logp = np.zeros((f.values.shape[0], m + 1))
    np.cumsum(-f.values[:, :m], axis=1, out=logp[:, 1:])
    return LogBondPanel(f.grid, logp)


def difference_returns(p: LogBondPanel) -> DifferenceReturnPanel:
    """Returns of buying the ``(j+1) dn`` bond and shorting the ``j dn`` bond.

    ``d[i, j-1] = P[i+1, j] - P[i, j+1] - P[i+1, j-1] + P[i, j]`` for
    ``j = 1..m-1``. Every available date pair contributes a row, so the
    panel has ``n_steps`` rows. Entries smaller than the floating-point
    error bound of the sum are set to zero.
    """
    P = p.values
    if P.shape[0] < 2 or P.shape[1] < 3:
        raise DataError(f"need at least 2 dates and 3 maturities, got shape {P.shape}")
    d = (P[1:, 1:-1] - P[:-1, 2:]) - (P[1:, :-2] - P[:-1, 1:-1])
    # entries below the rounding error of the four-term sum are exact zeros
    # (e.g. a flat yield curve), not signal
    bound = 4 * np.finfo(float).eps * (
        np.abs(P[1:, 1:-1]) + np.abs(P[:-1, 2:]) + np.abs(P[1:, :-2]) + np.abs(P[:-1, 1:-1])
    )
    d[np.abs(d) <= bound] = 0.0
    dates = None if p.dates is None else p.dates[1:]
    return DifferenceReturnPanel(p.grid, d, 0, dates)


def project_onto_pcs(p: LogBondPanel, d: int) -> LogBondPanel:
    """Replace log-price increments by their projection onto the top ``d`` PCs.

    The principal components are eigenvectors of
    ``(1/N) sum_i (P_i - P_{i-1})(P_i - P_{i-1})'``. Levels are rebuilt by
    cumulative summation from the first observed curve, which is kept exactly.
    """
    if int(d) != d or d < 1:
        raise ConfigError(f"number of components must be a positive integer, got {d}")
    P = p.values
    if d > P.shape[1]:
        raise ConfigError(f"d = {d} exceeds the maturity count {P.shape[1]}")
    inc = np.diff(P, axis=0)
    cov = inc.T @ inc / inc.shape[0]
    _, vecs = np.linalg.eigh(cov)
    top = vecs[:, ::-1][:, : int(d)]
    proj = (inc @ top) @ top.T
    out = np.empty_like(P)
    out[0] = P[0]
    out[1:] = P[0] + np.cumsum(proj, axis=0)
    out[:, 0] = 0.0
    return LogBondPanel(p.grid, out, p.dates)


def higher_order_difference_returns(d: DifferenceReturnPanel, lag: int) -> np.ndarray:
    """Windowed sums ``(d_L)[i, j] = sum_{l=0}^{L} d[i, j + l]``.

    These are the returns of buying the ``(j + L + 1) dn`` bond and shorting
    the ``j dn`` bond. The result has ``L`` fewer columns than ``d``.
    """
    if int(lag) != lag or lag < 0:
        raise ConfigError(f"lag must be a non-negative integer, got {lag}")
    lag = int(lag)
    vals = d.values
    width = vals.shape[1] - lag
    if width < 1:
        raise ConfigError(f"lag {lag} leaves no maturities in a panel with {vals.shape[1]} columns")
    csum = np.zeros((vals.shape[0], vals.shape[1] + 1))
    np.cumsum(vals, axis=1, out=csum[:, 1:])
    if lag == 0:
        return vals.copy()
    out = csum[:, lag + 1 :] - csum[:, :width]
    return out


# --------------------------------------------------------------------- CSV


def read_yields_csv(path, delta_n: float, max_maturity: float | None = None) -> YieldPanel:
    """Load a long-format CSV with header ``date,maturity_years,yield``.

    Maturities are snapped to the nearest multiple of ``delta_n``. Duplicate
    (date, maturity) cells and missing cells are rejected. A missing
    maturity-0 column is allowed; it carries no information because
    ``log P(0) = 0``.
    """
    path = Path(path)
    if not delta_n > 0:
        raise ConfigError("delta_n must be positive")
    cells: dict[tuple[_dt.date, int], tuple[float, int]] = {}
    errors = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip().lower() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if header[:3] != ["date", "maturity_years", "yield"]:
            raise DataError(f"{path}: header must be date,maturity_years,yield, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                date = _dt.date.fromisoformat(row[0].strip())
                mat = float(row[1])
                yld = float(row[2])
                if not (math.isfinite(mat) and math.isfinite(yld)) or mat < 0:
                    raise ValueError("non-finite or negative value")
            except (ValueError, IndexError) as exc:
                errors.append(f"line {lineno}: {exc}")
                continue
            k = int(round(mat / delta_n))
            if abs(mat - k * delta_n) > delta_n / 2 + 1e-12:
                errors.append(f"line {lineno}: maturity {mat} off grid")
                continue
            if (date, k) in cells:
                errors.append(
                    f"line {lineno}: duplicate cell ({date}, {k * delta_n:g}) first seen on line {cells[(date, k)][1]}"
                )
                continue
            cells[(date, k)] = (yld, lineno)
    if errors:
        shown = "; ".join(errors[:10])
        more = f" (+{len(errors) - 10} more)" if len(errors) > 10 else ""
        raise DataError(f"{path}: {len(errors)} bad rows: {shown}{more}")
    if not cells:
        raise DataError(f"{path}: no data rows")
    dates = sorted({d for d, _ in cells})
    if max_maturity is None:
        m = max(k for _, k in cells)
    else:
        m = int(round(max_maturity / delta_n))
    if len(dates) < 2:
        raise DataError(f"{path}: need at least two dates")
    grid = GridSpec(delta_n, len(dates) - 1, m * delta_n)
    values = np.full((len(dates), m + 1), np.nan)
    index = {d: i for i, d in enumerate(dates)}
    for (date, k), (yld, _) in cells.items():
        if k <= m:
            values[index[date], k] = yld
    missing = np.isnan(values[:, 1:])
    if missing.any():
        i, j = np.argwhere(missing)[0]
        raise DataError(
            f"{path}: {int(missing.sum())} missing cells; first at date {dates[i]}, maturity {(j + 1) * delta_n:g}"
        )
    zero_missing = np.isnan(values[:, 0])
    values[zero_missing, 0] = values[zero_missing, 1]
    labels = np.array([d.isoformat() for d in dates])
    return YieldPanel(grid, values, labels)


def write_panel_csv(panel, path) -> Path:
    """Write a panel in wide format: first column date, then one column per maturity."""
    path = Path(path)
    vals = panel.values
    dn = panel.grid.delta_n
    if isinstance(panel, DifferenceReturnPanel):
        mats = (np.arange(vals.shape[1]) + 1) * dn
        offset = panel.row_offset + 1
    elif isinstance(panel, ForwardPanel):
        mats = (np.arange(vals.shape[1]) + 1) * dn
        offset = 0
    else:
        mats = np.arange(vals.shape[1]) * dn
        offset = 0
    dates = getattr(panel, "dates", None)
    if dates is None:
        dates = [f"{(offset + i) * dn:.10g}" for i in range(vals.shape[0])]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date"] + [f"{x:.10g}" for x in mats])
        for label, row in zip(dates, vals):
            w.writerow([label] + [repr(float(v)) for v in row])
    return path
