"""
Realized covariation of difference returns and its truncated variants.

Every kernel returned here is scaled by ``dn ** -2`` so that it estimates
the quadratic covariation of the driving process directly, cell by cell.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .curve_panel import DifferenceReturnPanel
from .errors import ConfigError, DataError, NumericalError
from .kernel_space import StepKernel, hs_norm
from .truncation_rule import TruncationSpec

__all__ = [
    "CovariationResult",
    "LongRunVolatility",
    "realized_covariation",
    "truncated_covariation",
    "yearwise_covariations",
    "long_time_average",
    "clt_asymptotic_variance",
    "clt_entry_variance",
]

IDENTITY_TOL = 1e-10


def _row_slice(d: DifferenceReturnPanel, rows) -> slice:
    if rows is None:
        return slice(0, d.n_rows)
    if isinstance(rows, range):
        if rows.step != 1:
            raise DataError("row ranges must be contiguous")
        rows = slice(rows.start, rows.stop)
    if not isinstance(rows, slice):
        raise DataError(f"rows must be a slice or range, got {type(rows).__name__}")
    start, stop, step = rows.indices(d.n_rows)
    if step != 1:
        raise DataError("row ranges must be contiguous")
    if stop <= start:
        raise DataError(f"empty row range {rows}")
    return slice(start, stop)


def _gram(rows: np.ndarray, dn: float) -> StepKernel:
    factor = rows / dn
    return StepKernel.from_gram_factor(factor, dn)


def realized_covariation(d: DifferenceReturnPanel, rows=None) -> StepKernel:
    """``dn^-2 * sum_i d_i d_i'`` over the selected rows.

    Parameters
    ----------
    d : DifferenceReturnPanel
    rows : slice or range, optional
        Local row range; defaults to every row.
    """
    sl = _row_slice(d, rows)
    return _gram(d.values[sl], d.delta_n)


@dataclass(frozen=True, eq=False)
class CovariationResult:
    """Total, truncated and jump kernels from one estimation run.

    Attributes
    ----------
    kernel, truncated_kernel, jump_kernel : StepKernel
    flagged : ndarray of int
        Absolute row indices (panel ``row_offset`` included) exceeding the
        threshold.
    spec : TruncationSpec
    rows : slice
        Local rows of the source panel used in the estimate.
    """

    kernel: StepKernel
    truncated_kernel: StepKernel
    jump_kernel: StepKernel
    flagged: np.ndarray
    spec: TruncationSpec
    rows: slice
    period_length: float

    @property
    def n_rows(self) -> int:
        return self.rows.stop - self.rows.start

    @property
    def ratio(self) -> float:
        """``||truncated|| / ||total||``; 1 when nothing was removed."""
        total = hs_norm(self.kernel)
        if len(self.flagged) == 0:
            return 1.0
        if total == 0:
            return 1.0
        return hs_norm(self.truncated_kernel) / total

    def manifest(self) -> dict:
        u = self.spec.u_n
        return {
            "rows_used": self.n_rows,
            "rows_flagged": int(len(self.flagged)),
            "u_n": float(u) if math.isfinite(u) else "inf",
            "g_kind": self.spec.g_kind,
            "hs_norm_total": hs_norm(self.kernel),
            "hs_norm_truncated": hs_norm(self.truncated_kernel),
            "ratio": self.ratio,
        }


def _check_identity(total: StepKernel, trunc: StepKernel, jump_rows: np.ndarray, dn: float):
    """Verify ``total = truncated + sum of flagged outer products`` cellwise."""
    direct = jump_rows.T @ jump_rows / dn**2
    scale = np.maximum(np.abs(total.values), np.abs(trunc.values))
    floor = 1e-14 * float(np.max(scale)) if scale.size else 0.0
    err = np.abs(total.values - trunc.values - direct)
    bad = err > IDENTITY_TOL * scale + floor
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        raise NumericalError(
            f"total != truncated + jump at cell ({i}, {j}): error {err[i, j]:.3e}"
        )


def truncated_covariation(
    d: DifferenceReturnPanel, spec: TruncationSpec, rows=None
) -> CovariationResult:
    """Split the realized covariation into continuous and jump parts.

    Rows with ``g(d_i / dn) > u_n`` are excluded from the truncated kernel.
    The jump kernel is the difference of the total and truncated kernels,
    and the identity ``total = truncated + jump`` is checked cellwise.
    """
    if not isinstance(spec, TruncationSpec):
        raise ConfigError(f"expected a TruncationSpec, got {type(spec).__name__}")
    sl = _row_slice(d, rows)
    dn = d.delta_n
    R = d.values[sl]
    flags = spec.flags(R, dn)
    total = _gram(R, dn)
    if flags.any():
        trunc = _gram(R[~flags], dn)
    else:
        trunc = total
    # the jump part is the difference; the check re-sums the flagged rows
    jump = StepKernel(total.values - trunc.values, dn)
    _check_identity(total, trunc, R[flags], dn)
    flagged = np.nonzero(flags)[0] + sl.start + d.row_offset
    return CovariationResult(
        kernel=total,
        truncated_kernel=trunc,
        jump_kernel=jump,
        flagged=flagged,
        spec=spec,
        rows=sl,
        period_length=R.shape[0] * dn,
    )


def yearwise_covariations(
    d: DifferenceReturnPanel,
    boundaries: Sequence[int],
    spec_builder: Callable[[DifferenceReturnPanel], TruncationSpec],
    workers: int | None = None,
) -> list[CovariationResult]:
    """Per-period truncated covariations with rules rebuilt from each period.

    Parameters
    ----------
    d : DifferenceReturnPanel
    boundaries : sequence of int
        Increasing local row indices ``b_0 < b_1 < ... < b_k``; period ``p``
        covers rows ``b_p .. b_{p+1} - 1``.
    spec_builder : callable
        Maps a period sub-panel to its :class:`TruncationSpec`.
    workers : int, optional
        Thread count for independent periods.
    """
    b = [int(x) for x in boundaries]
    if len(b) < 2:
        raise DataError("need at least two boundaries")
    if b[0] < 0 or b[-1] > d.n_rows or any(y <= x for x, y in zip(b, b[1:])):
        raise DataError(f"boundaries must increase within [0, {d.n_rows}], got {b}")
    for x, y in zip(b, b[1:]):
        if y - x < 2:
            raise DataError(f"period [{x}, {y}) has fewer than 2 rows")

    def one(bounds):
        x, y = bounds
        sub = d.select(slice(x, y))
        res = truncated_covariation(sub, spec_builder(sub))
        return CovariationResult(
            res.kernel, res.truncated_kernel, res.jump_kernel, res.flagged,
            res.spec, slice(x, y), res.period_length,
        )

    pairs = list(zip(b, b[1:]))
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, pairs))
    return [one(p) for p in pairs]


@dataclass(frozen=True, eq=False)
class LongRunVolatility:
    """Time average of per-period truncated kernels."""

    kernel: StepKernel
    per_period: tuple


def long_time_average(results: Sequence) -> LongRunVolatility:
    """Arithmetic mean of the truncated kernels (or raw kernels) supplied."""
    kernels = [r.truncated_kernel if isinstance(r, CovariationResult) else r for r in results]
    if not kernels:
        raise DataError("need at least one period")
    first = kernels[0]
    acc = np.zeros_like(first.values)
    for k in kernels:
        first._check_compatible(k)
        acc += k.values
    return LongRunVolatility(StepKernel(acc / len(kernels), first.delta_n), tuple(kernels))


def clt_asymptotic_variance(q_minus: StepKernel, T: float, coords) -> float:
    """Plug-in asymptotic covariance at ``(x, z, w, y)``.

    ``(q(x, z) q(w, y) + q(x, w) q(z, y)) / T`` with ``q`` the truncated
    (``dn^-2``-scaled) kernel over a period of length ``T``. The result
    approximates the variance of ``sqrt(n) * (q(x, y) - [X, X](x, y))``
    when ``(x, z, w, y) = (x, y, x, y)``.
    """
    if not T > 0:
        raise ConfigError(f"T must be positive, got {T}")
    x, z, w, y = coords
    q = q_minus.value_at
    return float((q(x, z) * q(w, y) + q(x, w) * q(z, y)) / T)


def clt_entry_variance(q_minus: StepKernel, T: float, x: float, y: float) -> float:
    """Asymptotic variance of the kernel entry at ``(x, y)``."""
    return clt_asymptotic_variance(q_minus, T, (x, y, x, y))
