"""
Truncation functions and the data-driven threshold rule.

A difference-return row ``d_i`` is treated as the step function with cell
heights ``d_i / dn``. Rows whose truncation function exceeds the threshold
``u_n`` are attributed to jumps and excluded from the continuous estimate.

The rule works in two passes. A preliminary kernel is built from the 75%
of rows with the smallest l2 norm and rescaled so that its leading
eigenvalue agrees with a robust (interquartile) scale estimate. Its
spectrum then defines a Mahalanobis-type norm whose square is roughly
chi-square with ``d + 1`` degrees of freedom, and ``u_n`` is a multiple of
the corresponding standard deviation with a slowly vanishing rate.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .curve_panel import DifferenceReturnPanel
from .errors import ConfigError, DataError, NumericalError
from .kernel_space import StepKernel, eigendecompose, _dimension_from_quotients

__all__ = [
    "MahalanobisParams",
    "TruncationSpec",
    "PreliminaryEstimate",
    "g_l2",
    "g_mahalanobis",
    "niqr",
    "preliminary_estimate",
    "build_rule",
]

log = logging.getLogger(__name__)

QUARTILE_Z = float(norm.ppf(0.75))
MIN_ROWS = 8


@dataclass(frozen=True, eq=False)
class MahalanobisParams:
    """Spectral data defining the Mahalanobis truncation function.

    Attributes
    ----------
    eigenvalues : ndarray, shape (d,)
        Leading operator eigenvalues, all strictly positive.
    eigenfunctions : ndarray, shape (m, d)
        Cell heights of the matching L2-orthonormal eigenfunctions.
    tail_mass : float
        Sum of the remaining eigenvalues, strictly positive.
    power : int
        Exponent of the eigenvalues in the denominators. ``1`` is the
        chi-square calibrated default; ``2`` is the alternative reading kept
        for experiments.
    """

    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    tail_mass: float
    power: int = 1

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=float).ravel()
        E = np.asarray(self.eigenfunctions, dtype=float)
        if E.ndim == 1:
            E = E[:, None]
        if lam.size < 1:
            raise ConfigError("Mahalanobis truncation needs at least one component")
        if E.shape[1] != lam.size:
            raise ConfigError(f"{lam.size} eigenvalues but {E.shape[1]} eigenfunctions")
        if np.any(~(lam > 0)):
            raise ConfigError("leading eigenvalues must be strictly positive")
        if not (self.tail_mass > 0 and math.isfinite(self.tail_mass)):
            raise ConfigError(f"tail mass must be positive and finite, got {self.tail_mass}")
        if self.power not in (1, 2):
            raise ConfigError(f"power must be 1 or 2, got {self.power}")
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "eigenfunctions", E)
        object.__setattr__(self, "tail_mass", float(self.tail_mass))

    @property
    def d(self) -> int:
        return self.eigenvalues.size


def g_l2(rows, delta_n: float):
    """Euclidean norm of ``row / dn``; works row-wise on a matrix."""
    rows = np.asarray(rows, dtype=float)
    return np.linalg.norm(rows, axis=-1) / delta_n


def g_mahalanobis(rows, params: MahalanobisParams, delta_n: float):
    """Mahalanobis-type norm of the step function with heights ``row / dn``.

    ``g^2 = sum_i <h, e_i>^2 / lam_i + ||h - P_d h||^2 / tail_mass`` where
    ``P_d`` projects onto the leading ``d`` eigenfunctions. Vectorized over
    the leading axis.
    """
    rows = np.asarray(rows, dtype=float)
    single = rows.ndim == 1
    R = rows[None, :] if single else rows
    E = params.eigenfunctions
    if R.shape[1] != E.shape[0]:
        raise DataError(f"row length {R.shape[1]} does not match eigenfunction length {E.shape[0]}")
    # <h, e_i> = dn * sum_j (row_j / dn) e_i[j]
    coef = R @ E
    total = np.einsum("ij,ij->i", R, R) / delta_n
    resid = np.clip(total - np.einsum("ij,ij->i", coef, coef), 0.0, None)
    p = params.power
    g2 = (coef**2 / params.eigenvalues**p).sum(axis=1) + resid / params.tail_mass**p
    g = np.sqrt(g2)
    return float(g[0]) if single else g


def niqr(x) -> float:
    """Normalized interquartile range, a robust Gaussian standard deviation."""
    q25, q75 = np.percentile(np.asarray(x, dtype=float), [25, 75])
    return float((q75 - q25) / (2.0 * QUARTILE_Z))


@dataclass(frozen=True, eq=False)
class TruncationSpec:
    """A truncation function together with its threshold.

    Rows ``d_i`` with ``g(d_i / dn) > u_n`` are flagged.
    """

    u_n: float
    g_kind: str = "l2"
    mahalanobis: MahalanobisParams | None = None
    l: float | None = None
    w_exponent: float = 0.49
    rho_star: float | None = None
    kept_fraction: float | None = None
    warnings: tuple = ()

    def __post_init__(self):
        if not self.u_n > 0:
            raise ConfigError(f"threshold must be positive, got {self.u_n}")
        if self.g_kind not in ("l2", "mahalanobis"):
            raise ConfigError(f"unknown truncation function {self.g_kind!r}")
        if self.g_kind == "mahalanobis" and self.mahalanobis is None:
            raise ConfigError("Mahalanobis truncation requires spectral parameters")
        object.__setattr__(self, "warnings", tuple(self.warnings))

    @classmethod
    def no_truncation(cls) -> "TruncationSpec":
        return cls(u_n=math.inf, g_kind="l2", l=math.inf)

    @property
    def d(self) -> int | None:
        return None if self.mahalanobis is None else self.mahalanobis.d

    def g(self, rows, delta_n: float):
        if self.g_kind == "l2":
            return g_l2(rows, delta_n)
        return g_mahalanobis(rows, self.mahalanobis, delta_n)

    def flags(self, rows, delta_n: float) -> np.ndarray:
        """Boolean mask of rows exceeding the threshold."""
        rows = np.asarray(rows, dtype=float)
        if math.isinf(self.u_n):
            return np.zeros(rows.shape[0], dtype=bool)
        return np.atleast_1d(self.g(rows, delta_n) > self.u_n)

    def with_multiplier(self, l: float) -> "TruncationSpec":
        """Same truncation function with the threshold rescaled to multiplier ``l``."""
        if self.l is None or not math.isfinite(self.l):
            raise ConfigError("spec has no finite multiplier to rescale")
        return TruncationSpec(
            u_n=self.u_n * l / self.l,
            g_kind=self.g_kind,
            mahalanobis=self.mahalanobis,
            l=l,
            w_exponent=self.w_exponent,
            rho_star=self.rho_star,
            kept_fraction=self.kept_fraction,
            warnings=self.warnings,
        )

    def to_dict(self) -> dict:
        mp = self.mahalanobis
        return {
            "l": _json_float(self.l),
            "g_kind": self.g_kind,
            "d": None if mp is None else mp.d,
            "u_n": _json_float(self.u_n),
            "w_exponent": self.w_exponent,
            "eigenvalues": None if mp is None else [float(v) for v in mp.eigenvalues],
            "tail_mass": None if mp is None else mp.tail_mass,
            "power": None if mp is None else mp.power,
            "rho_star": self.rho_star,
            "kept_fraction": self.kept_fraction,
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _json_float(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else str(x)


@dataclass(frozen=True, eq=False)
class PreliminaryEstimate:
    """Robustly rescaled first-pass estimate of the instantaneous covariance."""

    kernel: StepKernel
    rho_star: float
    kept_fraction: float
    kept_mask: np.ndarray
    threshold: float
    degenerate: bool = False
    warnings: tuple = ()


def _rows_and_dn(d) -> tuple[np.ndarray, float]:
    if isinstance(d, DifferenceReturnPanel):
        return d.values, d.delta_n
    raise DataError(f"expected a DifferenceReturnPanel, got {type(d).__name__}")


def preliminary_estimate(d: DifferenceReturnPanel) -> PreliminaryEstimate:
    """First-pass covariance estimate with robust rescaling.

    Steps
    -----
    1. Keep rows whose l2 norm of ``row / dn`` is at most the nearest-rank
       75th percentile, and average their Gram kernel over the period length.
    2. Project every row onto the leading eigenfunction of that kernel and
       compare the squared normalized IQR of the projections to ``dn`` times
       the leading eigenvalue. The ratio ``rho_star`` undoes the downward
       bias from discarding the largest rows.
    3. Return the kernel multiplied by ``rho_star``.

    A zero IQR leaves the kernel unscaled (``rho_star = 1``) and records a
    warning; a non-positive leading eigenvalue raises ``NumericalError``.
    """
    rows, dn = _rows_and_dn(d)
    N = rows.shape[0]
    if N < MIN_ROWS:
        raise DataError(f"preliminary estimate needs at least {MIN_ROWS} rows, got {N}")
    g = g_l2(rows, dn)
    threshold = float(np.sort(g)[math.ceil(0.75 * N) - 1])
    keep = g <= threshold
    period = N * dn
    kept = rows[keep]
    factor = kept / (dn * math.sqrt(period))
    kernel = StepKernel.from_gram_factor(factor, dn)
    spec = eigendecompose(kernel, n_components=1)
    lam1 = float(spec.eigenvalues[0])
    if not lam1 > 0:
        raise NumericalError(f"preliminary kernel has non-positive leading eigenvalue {lam1:.3e}")
    # <p_n(row / dn), e_1> for every row
    proj = rows @ spec.eigenfunctions[:, 0]
    q25, q75 = np.percentile(proj, [25, 75])
    iqr = float(q75 - q25)
    warnings = []
    degenerate = False
    if iqr <= 0:
        rho = 1.0
        degenerate = True
        msg = "zero interquartile range of leading projections; rescaling skipped"
        warnings.append(msg)
        log.warning(msg)
    else:
        rho = iqr**2 / (4.0 * QUARTILE_Z**2 * dn * lam1)
    return PreliminaryEstimate(
        kernel=kernel * rho,
        rho_star=float(rho),
        kept_fraction=float(keep.mean()),
        kept_mask=keep,
        threshold=threshold,
        degenerate=degenerate,
        warnings=tuple(warnings),
    )


def build_rule(
    d: DifferenceReturnPanel,
    l: float,
    explained: float = 0.90,
    w_exponent: float = 0.49,
    power: int = 1,
) -> TruncationSpec:
    """Data-driven truncation rule.

    Parameters
    ----------
    d : DifferenceReturnPanel
        Rows used both for the preliminary estimate and later for flagging.
    l : float
        Threshold multiplier, typically 3, 4 or 5. ``math.inf`` disables
        truncation.
    explained : float
        Fraction of the preliminary kernel's trace that the Mahalanobis
        leading block must explain.
    w_exponent : float
        Rate exponent in ``u_n = l * sqrt(d + 1) * dn ** w``, in ``(0, 0.5)``.
    power : int
        Eigenvalue exponent of the Mahalanobis denominators.

    Returns
    -------
    TruncationSpec
    """
    if not 0.0 < w_exponent < 0.5:
        raise ConfigError(f"w_exponent must lie in (0, 0.5), got {w_exponent}")
    if not 0.0 < explained < 1.0:
        raise ConfigError(f"explained fraction must lie in (0, 1), got {explained}")
    if not l > 0:
        raise ConfigError(f"multiplier l must be positive, got {l}")
    if math.isinf(l):
        return TruncationSpec.no_truncation()
    rows, dn = _rows_and_dn(d)
    pre = preliminary_estimate(d)
    spec = eigendecompose(pre.kernel)
    lam = spec.eigenvalues
    if lam[0] <= 0:
        raise NumericalError("preliminary kernel is not positive")
    lam_c = np.clip(lam, 0.0, None)
    k = _dimension_from_quotients(lam_c, explained)
    tail = float(lam_c[k:].sum())
    u_n = l * math.sqrt(k + 1) * dn**w_exponent
    warnings = list(pre.warnings)
    # eigenvalues at roundoff level count as zero
    floor = 1e-12 * lam[0]
    if not tail > floor or np.any(lam[:k] <= floor):
        msg = f"zero tail mass beyond {k} components; falling back to the l2 truncation function"
        warnings.append(msg)
        log.warning(msg)
        return TruncationSpec(
            u_n=u_n,
            g_kind="l2",
            l=l,
            w_exponent=w_exponent,
            rho_star=pre.rho_star,
            kept_fraction=pre.kept_fraction,
            warnings=warnings,
        )
    params = MahalanobisParams(lam[:k].copy(), spec.eigenfunctions[:, :k].copy(), tail, power)
    return TruncationSpec(
        u_n=u_n,
        g_kind="mahalanobis",
        mahalanobis=params,
        l=l,
        w_exponent=w_exponent,
        rho_star=pre.rho_star,
        kept_fraction=pre.kept_fraction,
        warnings=warnings,
    )
