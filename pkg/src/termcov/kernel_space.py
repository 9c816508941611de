"""
Piecewise-constant symmetric kernels on ``[0, M]^2``.

A :class:`StepKernel` with value matrix ``V`` on cells of width ``dn``
represents the integral operator ``(T h)(x) = int k(x, y) h(y) dy``. In the
orthonormal basis ``1_cell / sqrt(dn)`` that operator is the matrix
``dn * V``, which is how spectra are computed here.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError, NumericalError

__all__ = [
    "StepKernel",
    "SpectralDecomposition",
    "hs_norm",
    "eigendecompose",
    "explained_dimension",
    "dimension_profile",
    "project_kernel",
    "relative_error",
    "write_kernel_csv",
    "read_kernel_csv",
    "write_surface_triplets",
]

log = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-10
ORTHO_TOL = 1e-8
NEG_EIG_TOL = 1e-8


class StepKernel:
    """Symmetric step kernel.

    Parameters
    ----------
    values : array_like, shape (m, m)
        Kernel value on each cell pair. Inputs whose relative asymmetry is
        below ``1e-10`` are symmetrized, larger asymmetry is rejected.
    delta_n : float
        Cell width.
    gram_factor : array_like, shape (r, m), optional
        A matrix ``A`` with ``values == A.T @ A``. When supplied the spectrum
        is computed from a thin SVD of ``A``, which is much cheaper than a
        dense eigensolve when ``r << m``. The caller guarantees the identity.
    """

    __slots__ = ("_values", "delta_n", "_factor", "_m")

    def __init__(self, values, delta_n: float, gram_factor=None):
        if not delta_n > 0:
            raise ConfigError(f"delta_n must be positive, got {delta_n}")
        self.delta_n = float(delta_n)
        if gram_factor is not None:
            gram_factor = np.asarray(gram_factor, dtype=float)
            if gram_factor.ndim != 2:
                raise DataError("gram_factor must be a 2-d matrix")
            if not np.all(np.isfinite(gram_factor)):
                raise DataError("gram_factor contains non-finite entries")
        self._factor = gram_factor
        if values is None:
            if gram_factor is None:
                raise DataError("either values or gram_factor is required")
            self._values = None
            self._m = gram_factor.shape[1]
            return
        v = np.array(values, dtype=float, copy=True)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise DataError(f"kernel values must be a square matrix, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DataError("kernel values contain non-finite entries")
        scale = np.max(np.abs(v)) if v.size else 0.0
        asym = np.max(np.abs(v - v.T)) if v.size else 0.0
        if asym > SYMMETRY_TOL * max(scale, np.finfo(float).tiny):
            raise DataError(f"kernel is not symmetric (max asymmetry {asym:.3e}, scale {scale:.3e})")
        if asym > 0:
            v = 0.5 * (v + v.T)
        v.flags.writeable = False
        self._values = v
        self._m = v.shape[0]
        if gram_factor is not None and gram_factor.shape[1] != self._m:
            raise DataError("gram_factor must have shape (r, m_cells)")

    @classmethod
    def from_gram_factor(cls, factor, delta_n: float) -> "StepKernel":
        """Kernel ``factor.T @ factor`` whose dense values are formed on first use."""
        return cls(None, delta_n, gram_factor=factor)

    @property
    def values(self) -> np.ndarray:
        if self._values is None:
            A = self._factor
            v = A.T @ A
            v = 0.5 * (v + v.T)
            v.flags.writeable = False
            self._values = v
        return self._values

    @property
    def m_cells(self) -> int:
        return self._m

    @property
    def is_materialized(self) -> bool:
        return self._values is not None

    @property
    def gram_factor(self):
        return self._factor

    @property
    def max_maturity(self) -> float:
        return self.m_cells * self.delta_n

    def _check_compatible(self, other: "StepKernel"):
        if not isinstance(other, StepKernel):
            raise TypeError(f"expected StepKernel, got {type(other).__name__}")
        if other.m_cells != self.m_cells or abs(other.delta_n - self.delta_n) > 1e-12 * self.delta_n:
            raise DataError(
                f"grid mismatch: ({self.m_cells}, {self.delta_n}) vs ({other.m_cells}, {other.delta_n})"
            )

    def __add__(self, other: "StepKernel") -> "StepKernel":
        self._check_compatible(other)
        return StepKernel(self.values + other.values, self.delta_n)

    def __sub__(self, other: "StepKernel") -> "StepKernel":
        self._check_compatible(other)
        return StepKernel(self.values - other.values, self.delta_n)

    def __mul__(self, c: float) -> "StepKernel":
        c = float(c)
        if self._factor is not None and c >= 0:
            f = self._factor * np.sqrt(c)
            if self._values is None:
                return StepKernel(None, self.delta_n, f)
            return StepKernel(self._values * c, self.delta_n, f)
        return StepKernel(self.values * c, self.delta_n)

    __rmul__ = __mul__

    def __neg__(self) -> "StepKernel":
        return StepKernel(-self.values, self.delta_n)

    def __truediv__(self, c: float) -> "StepKernel":
        return self * (1.0 / float(c))

    def __repr__(self):
        return f"StepKernel(m_cells={self.m_cells}, delta_n={self.delta_n:g}, hs_norm={hs_norm(self):.6g})"

    def value_at(self, x: float, y: float) -> float:
        """Kernel value at the point ``(x, y)`` in ``[0, M]^2``."""
        m = self.m_cells
        M = self.max_maturity
        for z in (x, y):
            if not (0.0 <= z <= M * (1 + 1e-12)):
                raise ConfigError(f"coordinate {z} outside [0, {M:g}]")
        i = min(int(x / self.delta_n), m - 1)
        j = min(int(y / self.delta_n), m - 1)
        return float(self.values[i, j])


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """Eigenpairs of a step-kernel operator.

    Attributes
    ----------
    eigenvalues : ndarray, shape (k,)
        Descending operator eigenvalues.
    eigenfunctions : ndarray, shape (m, k)
        Column ``i`` holds the cell heights of eigenfunction ``i``; columns
        are orthonormal in ``L^2``, i.e. ``dn * E.T @ E = I``.
    delta_n : float
    """

    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    delta_n: float

    def __len__(self):
        return len(self.eigenvalues)

    def top(self, d: int) -> "SpectralDecomposition":
        return SpectralDecomposition(self.eigenvalues[:d], self.eigenfunctions[:, :d], self.delta_n)

    def reconstruct(self) -> StepKernel:
        E = self.eigenfunctions
        return StepKernel((E * self.eigenvalues) @ E.T, self.delta_n)

    def matrix_vectors(self) -> np.ndarray:
        """Unit-norm matrix eigenvectors (cell heights times ``sqrt(dn)``)."""
        return self.eigenfunctions * np.sqrt(self.delta_n)


def _thin_factor(k: StepKernel):
    A = k.gram_factor
    if A is not None and A.shape[0] < k.m_cells:
        return A
    return None


def hs_norm(k: StepKernel) -> float:
    """Hilbert-Schmidt norm, equal to the ``L^2([0, M]^2)`` norm of the kernel."""
    A = _thin_factor(k)
    if A is not None and not k.is_materialized:
        # ||A'A||_F = ||A A'||_F
        return float(k.delta_n * np.linalg.norm(A @ A.T))
    return float(k.delta_n * np.linalg.norm(k.values))


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def eigendecompose(k: StepKernel, n_components: int | None = None) -> SpectralDecomposition:
    """Spectrum of the operator with kernel ``k``.

    Eigenvalues of ``dn * values`` in descending order; eigenfunction heights
    are the unit eigenvectors divided by ``sqrt(dn)``. Each eigenfunction is
    signed so that its largest-magnitude cell height is positive.

    Parameters
    ----------
    k : StepKernel
    n_components : int, optional
        Keep only the leading components. If the kernel carries a Gram
        factor the decomposition is exact but has at most ``rank`` nonzero
        eigenvalues; the remaining ones are reported as zero only when
        ``n_components`` asks for them.
    """
    dn = k.delta_n
    A = _thin_factor(k)
    if A is not None:
        _, s, vt = np.linalg.svd(A, full_matrices=False)
        lam = dn * s**2
        vecs = vt.T
        if n_components is not None and n_components > len(lam):
            # pad with an orthonormal complement for callers that need a full basis
            lam_full, vecs_full = np.linalg.eigh(dn * k.values)
            lam, vecs = lam_full[::-1], vecs_full[:, ::-1]
    else:
        lam, vecs = np.linalg.eigh(dn * k.values)
        lam, vecs = lam[::-1], vecs[:, ::-1]
    if n_components is not None:
        lam, vecs = lam[:n_components], vecs[:, :n_components]
    vecs = _fix_signs(np.ascontiguousarray(vecs))
    return SpectralDecomposition(np.ascontiguousarray(lam), vecs / np.sqrt(dn), dn)


def _basis_heights(basis, m: int, dn: float) -> np.ndarray:
    if isinstance(basis, SpectralDecomposition):
        H = basis.eigenfunctions
    else:
        H = np.asarray(basis, dtype=float)
        if H.ndim == 1:
            H = H[:, None]
    if H.shape[0] != m:
        raise DataError(f"basis has {H.shape[0]} cells, kernel has {m}")
    gram = dn * H.T @ H
    err = np.max(np.abs(gram - np.eye(H.shape[1]))) if H.size else 0.0
    if err > ORTHO_TOL:
        raise DataError(f"basis is not L2-orthonormal (max Gram deviation {err:.3e})")
    return H


def _clip_spectrum(quotients: np.ndarray) -> np.ndarray:
    top = np.max(quotients) if quotients.size else 0.0
    if top <= 0:
        raise NumericalError("covariance has non-positive trace")
    low = np.min(quotients)
    if low < -NEG_EIG_TOL * top:
        raise NumericalError(
            f"covariance is not positive semidefinite (value {low:.3e} vs leading {top:.3e})"
        )
    if low < 0:
        log.debug("clipping %d small negative eigenvalues", int(np.sum(quotients < 0)))
    return np.clip(quotients, 0.0, None)


def _dimension_from_quotients(q: np.ndarray, p: float) -> int:
    total = q.sum()
    if not total > 0:
        raise NumericalError("covariance has non-positive trace")
    cum = np.cumsum(q) / total
    hit = np.nonzero(cum > p)[0]
    # cum[-1] == 1 up to roundoff, so a p close to 1 may miss by rounding
    return int(hit[0]) + 1 if hit.size else len(q)


def _rayleigh_quotients(k: StepKernel, basis) -> np.ndarray:
    dn = k.delta_n
    if basis is None:
        return eigendecompose(k).eigenvalues
    H = _basis_heights(basis, k.m_cells, dn)
    # <e, T e> = dn^2 * h' V h
    A = _thin_factor(k)
    if A is not None:
        AH = A @ H
        return dn**2 * np.einsum("ri,ri->i", AH, AH)
    return dn**2 * np.einsum("ji,ji->i", H, k.values @ H)


def explained_dimension(k: StepKernel, p: float, basis=None) -> int:
    """Smallest ``d`` whose leading directions explain more than ``p`` of the trace.

    Parameters
    ----------
    k : StepKernel
        Positive semidefinite kernel.
    p : float
        Fraction in ``(0, 1)``.
    basis : SpectralDecomposition or array_like, optional
        Ordered orthonormal directions (cell heights in columns). Defaults to
        the kernel's own eigenbasis. The denominator is the sum of Rayleigh
        quotients over the supplied basis.
    """
    return dimension_profile(k, [p], basis)[0]


def dimension_profile(k: StepKernel, ps: Sequence[float], basis=None) -> list[int]:
    """:func:`explained_dimension` for several fractions with one decomposition."""
    for p in ps:
        if not 0.0 < p < 1.0:
            raise ConfigError(f"explained fraction must lie in (0, 1), got {p}")
    q = _clip_spectrum(_rayleigh_quotients(k, basis))
    return [_dimension_from_quotients(q, p) for p in ps]


def project_kernel(k: StepKernel, basis) -> StepKernel:
    """Kernel of ``P T_k P`` where ``P`` projects onto the span of ``basis``.

    With ``H`` the cell heights of the basis, the coefficient matrix is
    ``C[a, b] = <e_a, T_k e_b> = dn^2 * H' V H`` and the projected kernel is
    ``H C H'``.
    """
    dn = k.delta_n
    H = _basis_heights(basis, k.m_cells, dn)
    C = dn**2 * (H.T @ k.values @ H)
    C = 0.5 * (C + C.T)
    return StepKernel(H @ C @ H.T, dn)


def relative_error(k1: StepKernel, k2: StepKernel) -> float:
    """``||k1 - k2|| / ||k2||`` in ``L^2([0, M]^2)``."""
    k2._check_compatible(k1)
    A, B = _thin_factor(k1), _thin_factor(k2)
    if A is not None and B is not None:
        # ||A'A - B'B||^2 = ||AA'||^2 - 2 ||AB'||^2 + ||BB'||^2, all small matrices
        aa = np.sum((A @ A.T) ** 2)
        ab = np.sum((A @ B.T) ** 2)
        bb = np.sum((B @ B.T) ** 2)
        if bb == 0:
            raise NumericalError("reference kernel has zero norm")
        num = max(aa - 2.0 * ab + bb, 0.0)
        return float(np.sqrt(num / bb))
    denom = np.linalg.norm(k2.values)
    if denom == 0:
        raise NumericalError("reference kernel has zero norm")
    return float(np.linalg.norm(k1.values - k2.values) / denom)


# --------------------------------------------------------------------- IO


def write_kernel_csv(k: StepKernel, path) -> Path:
    """CSV matrix whose first row is the maturity grid, plus a JSON sidecar."""
    path = Path(path)
    grid = (np.arange(k.m_cells) + 1) * k.delta_n
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"{x:.10g}" for x in grid])
        for row in k.values:
            w.writerow([f"{v:.17g}" for v in row])
    sidecar = path.with_suffix(".json")
    sidecar.write_text(
        json.dumps(
            {"delta_n": k.delta_n, "m_cells": k.m_cells, "scaling": "includes_delta_n^-2"},
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    return path


def read_kernel_csv(path) -> StepKernel:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape != (meta["m_cells"], meta["m_cells"]):
        raise DataError(f"{path}: matrix shape {data.shape} disagrees with sidecar m_cells={meta['m_cells']}")
    return StepKernel(data, meta["delta_n"])


def write_surface_triplets(k: StepKernel, path, stride: int = 1) -> Path:
    """Write ``x,y,value`` rows at cell midpoints for surface plots."""
    path = Path(path)
    idx = np.arange(0, k.m_cells, max(1, int(stride)))
    mids = (idx + 0.5) * k.delta_n
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "value"])
        for a, x in zip(idx, mids):
            for b, y in zip(idx, mids):
                w.writerow([f"{x:.10g}", f"{y:.10g}", f"{k.values[a, b]:.12g}"])
    return path
