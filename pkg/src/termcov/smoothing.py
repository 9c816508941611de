"""
Penalized quintic B-spline smoothing of sparse, noisy log-price curves.

Each date is fitted separately by minimizing

    sum_l (y_l - s(x_l))^2 + lam * int s'''(x)^2 dx

over quintic splines on a uniform knot grid. The smoothing parameter is
chosen from a log-spaced grid by the Bayesian information criterion
``N log(RSS / N) + log(N) * edf``, where ``edf`` is the trace of the hat
matrix.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import BSpline
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .errors import ConfigError, DataError

__all__ = ["PenalizedSpline", "SplineFit"]


class SplineFit:
    """Result of one penalized fit."""

    __slots__ = ("spline", "lam", "edf", "rss", "bic")

    def __init__(self, spline: BSpline, lam: float, edf: float, rss: float, bic: float):
        self.spline = spline
        self.lam = lam
        self.edf = edf
        self.rss = rss
        self.bic = bic

    def __call__(self, x):
        return self.spline(x)


@lru_cache(maxsize=16)
def _knots_and_penalty(upper: float, n_interior: int, degree: int, order: int):
    inner = np.linspace(0.0, upper, n_interior + 2)
    t = np.r_[[0.0] * degree, inner, [upper] * degree]
    nb = len(t) - degree - 1
    nodes, weights = leggauss(degree + 1)
    breaks = np.unique(t)
    deriv = BSpline(t, np.eye(nb), degree).derivative(order)
    omega = np.zeros((nb, nb))
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        x = 0.5 * (lo + hi) + 0.5 * (hi - lo) * nodes
        w = 0.5 * (hi - lo) * weights
        D = deriv(x)
        omega += D.T @ (D * w[:, None])
    omega = 0.5 * (omega + omega.T)
    t.flags.writeable = False
    omega.flags.writeable = False
    return t, omega


class PenalizedSpline:
    """Quintic smoothing spline with a derivative penalty and BIC selection.

    Parameters
    ----------
    upper : float
        Right end of the fitting interval ``[0, upper]``.
    n_interior : int
        Number of uniformly spaced interior knots.
    degree : int
        Spline degree, 5 by default.
    penalty_order : int
        Derivative order in the roughness penalty.
    lambdas : array_like, optional
        Relative smoothing parameters. They are multiplied by
        ``tr(B'B) / tr(Omega)`` for each date so that the grid is
        scale-free. Defaults to 0 followed by 33 values from ``1e-10`` to
        ``1e6``; the unpenalized candidate lets exact cubics through, since
        they are not in the penalty's null space.
    """

    def __init__(
        self,
        upper: float,
        n_interior: int,
        degree: int = 5,
        penalty_order: int = 3,
        lambdas=None,
    ):
        if not upper > 0:
            raise ConfigError("upper end of the interval must be positive")
        if n_interior < 0:
            raise ConfigError("n_interior must be non-negative")
        if penalty_order > degree:
            raise ConfigError("penalty order cannot exceed the degree")
        self.upper = float(upper)
        self.degree = int(degree)
        self.n_interior = int(n_interior)
        self.penalty_order = int(penalty_order)
        self.knots, self.penalty = _knots_and_penalty(
            self.upper, self.n_interior, self.degree, self.penalty_order
        )
        self.n_basis = len(self.knots) - self.degree - 1
        if lambdas is None:
            lambdas = np.r_[0.0, np.logspace(-10, 6, 33)]
        lambdas = np.asarray(lambdas, dtype=float)
        if lambdas.ndim != 1 or lambdas.size < 1 or np.any(lambdas < 0):
            raise ConfigError("lambdas must be a non-empty list of non-negative values")
        self.lambdas = lambdas

    @classmethod
    def for_observation_count(cls, upper: float, n_obs: int, **kw) -> "PenalizedSpline":
        """Knot grid with ``ceil(n_obs / 4)`` interior knots."""
        return cls(upper, int(math.ceil(n_obs / 4)), **kw)

    def design(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.min() < 0 or x.max() > self.upper * (1 + 1e-12):
            raise DataError(f"abscissae outside [0, {self.upper:g}]")
        x = np.clip(x, 0.0, self.upper)
        return BSpline.design_matrix(x, self.knots, self.degree).toarray()

    def fit(self, x, y, lam: float | None = None) -> SplineFit:
        """Fit one curve; ``lam`` fixes the relative smoothing parameter."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        N = y.size
        if x.shape != y.shape or N < self.degree + 2:
            raise DataError(f"need at least {self.degree + 2} points, got {N}")
        B = self.design(x)
        BtB = B.T @ B
        Bty = B.T @ y
        scale = np.trace(BtB) / np.trace(self.penalty)
        # floor keeps log(RSS) finite on exact data
        rss_floor = N * (1e-15 * max(1.0, float(np.max(np.abs(y))))) ** 2
        grid = self.lambdas if lam is None else np.array([lam], dtype=float)
        best = None
        for rel in grid:
            A = BtB + rel * scale * self.penalty
            try:
                cf = cho_factor(A, check_finite=False)
                c = cho_solve(cf, Bty, check_finite=False)
                edf = float(np.trace(cho_solve(cf, BtB, check_finite=False)))
            except LinAlgError:
                c, *_ = np.linalg.lstsq(A, Bty, rcond=None)
                edf = float(np.trace(np.linalg.pinv(A) @ BtB))
            r = y - B @ c
            rss = max(float(r @ r), rss_floor)
            bic = N * math.log(rss / N) + math.log(N) * edf
            if best is None or bic < best[0]:
                best = (bic, c, rel, edf, rss)
        bic, c, rel, edf, rss = best
        return SplineFit(BSpline(self.knots, c, self.degree, extrapolate=False), rel, edf, rss, bic)
