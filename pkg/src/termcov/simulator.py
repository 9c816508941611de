"""
Simulation of forward curves driven by a stochastic-volatility Gaussian
process plus two compound-Poisson jump components.

The forward curve is stored as cell integrals ``F[i, k]`` over
``[k dn, (k+1) dn]``. Because time and maturity share the step ``dn`` the
roll-down over one step is an exact left shift of the cell vector, so

    F_i = shift(F_{i-1}) + G_i + J_i

is an exact recursion: ``G_i`` is a Gaussian cell vector with covariance
``I_i * Q``, where ``Q`` holds cell integrals of a Gaussian covariance
kernel and ``I_i`` integrates the square-root volatility factor over the
step, and ``J_i`` collects the jumps that arrive during the step.

Random streams for the volatility factor, Gaussian increments, jumps and
observation noise are spawned separately from the configuration seed, so
two configurations that differ only in their jump parameters share the
same continuous part.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.linalg import toeplitz

from .curve_panel import ForwardPanel, GridSpec, LogBondPanel, forwards_to_log_prices
from .errors import ConfigError, DataError
from .kernel_space import StepKernel
from .smoothing import PenalizedSpline

__all__ = [
    "CirParams",
    "SimConfig",
    "CirPath",
    "JumpEvent",
    "Simulation",
    "ObservationSet",
    "model_preset",
    "gaussian_cov_matrix",
    "exp_cov_matrix",
    "simulate_cir",
    "simulate_forward_panel",
    "observe",
    "presmooth",
    "integrated_volatility",
    "initial_forward_cells",
]

EIG_DROP = 1e-13
_GL_OFFSETS = np.array([-1.0, 1.0]) / math.sqrt(3.0)


@dataclass(frozen=True)
class CirParams:
    """Square-root diffusion ``dx = kappa (theta - x) dt + xi sqrt(x) dW``."""

    kappa: float = 1.5
    theta: float = 0.058
    xi: float = 0.05
    x0: float = 0.058

    def __post_init__(self):
        for name in ("kappa", "theta", "xi", "x0"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"CIR parameter {name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class SimConfig:
    """Parameters of one simulated panel.

    Attributes
    ----------
    a : float
        Gaussian kernel bandwidth on maturities rescaled to ``[0, 1]``;
        50 gives a high-dimensional and 5 a low-dimensional covariance.
    lambda1, lambda2 : float
        Jump intensities per year of the exponential-shape and Gaussian-shape
        components.
    rho1, rho2 : float
        Jump covariance scales.
    cir : CirParams
    grid : GridSpec
    m_obs : int
        Maturities observed per date, drawn without replacement from the
        ``m_cells + 1`` grid points.
    sigma_eps : float
        Standard deviation of the observation noise on log prices.
    subres : int
        Volatility-factor Euler steps per time step.
    seed : int
    bandwidth_scale : float, optional
        Length used to rescale maturities inside the Gaussian kernels;
        defaults to ``grid.max_maturity``.
    jump_bandwidth : float
        Bandwidth of the Gaussian-shape jump kernel.
    variance_loading : {"integral", "integral_squared"}
        Whether the Gaussian increment variance integrates ``x`` or ``x^2``.
    jump_decay : bool
        Apply the roll-down between arrival and the end of the step to the
        exponential-shape jump curves.
    """

    a: float = 50.0
    lambda1: float = 0.0
    lambda2: float = 0.0
    rho1: float = 0.0
    rho2: float = 0.0
    cir: CirParams = field(default_factory=CirParams)
    grid: GridSpec = field(default_factory=lambda: GridSpec(0.01, 100, 10.0))
    m_obs: int = 1000
    sigma_eps: float = 0.0
    subres: int = 100
    seed: int = 0
    bandwidth_scale: float | None = None
    jump_bandwidth: float = 0.01
    variance_loading: str = "integral"
    jump_decay: bool = False

    def __post_init__(self):
        for name in ("a", "lambda1", "lambda2", "rho1", "rho2", "sigma_eps", "jump_bandwidth"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")
        if not self.a > 0:
            raise ConfigError("bandwidth a must be positive")
        if int(self.subres) != self.subres or self.subres < 1:
            raise ConfigError(f"subres must be an integer >= 1, got {self.subres}")
        if int(self.m_obs) != self.m_obs or not 1 <= self.m_obs <= self.grid.m_cells + 1:
            raise ConfigError(
                f"m_obs must be an integer in [1, {self.grid.m_cells + 1}], got {self.m_obs}"
            )
        if self.variance_loading not in ("integral", "integral_squared"):
            raise ConfigError(f"unknown variance_loading {self.variance_loading!r}")
        if self.bandwidth_scale is not None and not self.bandwidth_scale > 0:
            raise ConfigError("bandwidth_scale must be positive")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed}")

    @property
    def dense(self) -> bool:
        """Noise-free with (almost) every maturity observed: no presmoothing needed."""
        return self.sigma_eps == 0 and self.m_obs >= self.grid.m_cells

    @property
    def has_jumps(self) -> bool:
        return (self.lambda1 > 0 and self.rho1 > 0) or (self.lambda2 > 0 and self.rho2 > 0)

    @property
    def length_scale(self) -> float:
        return self.grid.max_maturity if self.bandwidth_scale is None else self.bandwidth_scale

    def with_seed(self, seed: int) -> "SimConfig":
        return replace(self, seed=int(seed))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = {
            "delta_n": self.grid.delta_n,
            "n_steps": self.grid.n_steps,
            "max_maturity": self.grid.max_maturity,
        }
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown SimConfig keys: {sorted(unknown)}")
        if "cir" in d and not isinstance(d["cir"], CirParams):
            try:
                d["cir"] = CirParams(**d["cir"])
            except TypeError as exc:
                raise ConfigError(f"bad cir block: {exc}") from None
        if "grid" in d and not isinstance(d["grid"], GridSpec):
            g = d["grid"]
            try:
                if "n_steps" in g:
                    d["grid"] = GridSpec(g["delta_n"], g["n_steps"], g["max_maturity"])
                else:
                    d["grid"] = GridSpec.from_horizon(g["delta_n"], g["horizon"], g["max_maturity"])
            except KeyError as exc:
                raise ConfigError(f"grid block is missing {exc}") from None
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "SimConfig":
        return cls.from_dict(json.loads(text))


_PRESETS = {
    "M1": dict(a=50.0),
    "M2": dict(a=50.0, m_obs=100, sigma_eps=0.01),
    "M3": dict(a=50.0, lambda1=1.0, lambda2=4.0, rho1=0.0116, rho2=0.0029),
    "M4": dict(a=50.0, lambda1=1.0, lambda2=4.0, rho1=0.0116, rho2=0.0029, m_obs=100, sigma_eps=0.01),
    "M5": dict(a=5.0),
    "M6": dict(a=5.0, m_obs=100, sigma_eps=0.01),
    "M7": dict(a=5.0, lambda1=1.0, lambda2=4.0, rho1=0.0116, rho2=0.0029),
    "M8": dict(a=5.0, lambda1=1.0, lambda2=4.0, rho1=0.0116, rho2=0.0029, m_obs=100, sigma_eps=0.01),
}


def model_preset(name: str, **overrides) -> SimConfig:
    """Configuration of one of the benchmark models ``M1`` .. ``M8``.

    ``M1``-``M4`` use bandwidth 50, ``M5``-``M8`` bandwidth 5. Within each
    block: dense without jumps, sparse and noisy without jumps, dense with
    jumps, sparse and noisy with jumps.
    """
    key = name.upper()
    if key not in _PRESETS:
        raise ConfigError(f"unknown model {name!r}; expected one of {sorted(_PRESETS)}")
    params = dict(_PRESETS[key])
    params.update(overrides)
    return SimConfig.from_dict(params)


# ------------------------------------------------------------ covariances


def _gaussian_sq_norm(s: float, M: float) -> float:
    """``int int_{[0,M]^2} exp(-2 s (x - y)^2) dx dy`` in closed form."""
    b = 2.0 * s
    z = b * M * M
    if z < 1e-4:
        return M * M * (1.0 - z / 6.0 + z * z / 30.0 - z**3 / 168.0)
    rb = math.sqrt(b)
    return 2.0 * (M * math.sqrt(math.pi) / (2.0 * rb) * math.erf(rb * M) - (1.0 - math.exp(-z)) / (2.0 * b))


def gaussian_cov_matrix(a: float, grid: GridSpec, internal_cells: int, bandwidth_scale: float | None = None) -> np.ndarray:
    """Cell integrals of a normalized Gaussian covariance kernel.

    The kernel is ``exp(-a ((x - y) / L)^2)`` with ``L = bandwidth_scale``
    (default ``M``), divided by its ``L^2([0, M]^2)`` norm. Entry ``[j, k]``
    integrates it over the product of cells ``j`` and ``k`` with a 2x2
    Gauss-Legendre rule. The matrix is Toeplitz.
    """
    if not a > 0:
        raise ConfigError(f"bandwidth must be positive, got {a}")
    dn = grid.delta_n
    M = grid.max_maturity
    L = M if bandwidth_scale is None else float(bandwidth_scale)
    s = a / (L * L)
    off = 0.5 * dn * _GL_OFFSETS
    lag = np.arange(internal_cells) * dn
    diff = lag[:, None, None] + off[None, :, None] - off[None, None, :]
    col = np.exp(-s * diff**2).sum(axis=(1, 2)) * (0.5 * dn) ** 2
    col /= math.sqrt(_gaussian_sq_norm(s, M))
    return toeplitz(col)


def exp_cov_matrix(grid: GridSpec, internal_cells: int) -> np.ndarray:
    """Cell integrals of ``exp(-(x + y))`` normalized on ``[0, M]^2`` (rank one)."""
    dn = grid.delta_n
    M = grid.max_maturity
    j = np.arange(internal_cells)
    c = np.exp(-j * dn) - np.exp(-(j + 1) * dn)
    return np.outer(c, c) / ((1.0 - math.exp(-2.0 * M)) / 2.0)


def _exp_cells(dn: float, M: float, cells: int) -> np.ndarray:
    j = np.arange(cells)
    c = np.exp(-j * dn) - np.exp(-(j + 1) * dn)
    return c / math.sqrt((1.0 - math.exp(-2.0 * M)) / 2.0)


@lru_cache(maxsize=8)
def _gaussian_factor(a: float, dn: float, n_steps: int, M: float, cells: int, scale: float | None) -> np.ndarray:
    """``L`` with ``L @ L.T`` equal to the Gaussian cell matrix up to dropped modes."""
    Q = gaussian_cov_matrix(a, GridSpec(dn, n_steps, M), cells, scale)
    w, V = np.linalg.eigh(Q)
    keep = w > EIG_DROP * w[-1]
    Lf = V[:, keep] * np.sqrt(w[keep])
    Lf = np.ascontiguousarray(Lf[:, ::-1])
    Lf.flags.writeable = False
    return Lf


def gaussian_factor(cfg: SimConfig, bandwidth: float | None = None, cells: int | None = None) -> np.ndarray:
    g = cfg.grid
    cells = g.m_cells + g.n_steps if cells is None else cells
    a = cfg.a if bandwidth is None else bandwidth
    return _gaussian_factor(float(a), g.delta_n, g.n_steps, g.max_maturity, int(cells), cfg.bandwidth_scale)


# ------------------------------------------------------------ volatility


@dataclass(frozen=True, eq=False)
class CirPath:
    """Fine-lattice volatility path and its per-step integrals."""

    x: np.ndarray
    integrals: np.ndarray
    integrals_squared: np.ndarray
    n_truncated: int
    fine_step: float


def simulate_cir(cir: CirParams, n_steps: int, delta_n: float, subres: int = 100, seed=None) -> CirPath:
    """Full-truncation Euler scheme for the square-root factor.

    Parameters
    ----------
    cir : CirParams
    n_steps : int
        Number of coarse steps of length ``delta_n``.
    delta_n : float
    subres : int
        Fine steps per coarse step.
    seed : int, SeedSequence or Generator, optional

    Returns
    -------
    CirPath
        ``integrals[i]`` is the left Riemann sum of ``max(x, 0)`` over step
        ``i``; ``integrals_squared`` uses ``max(x, 0)^2``.
    """
    if subres < 1:
        raise ConfigError("subres must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    dt = delta_n / subres
    sdt = math.sqrt(dt)
    total = n_steps * subres
    z = rng.standard_normal(total).tolist()
    kappa, theta, xi = cir.kappa, cir.theta, cir.xi
    path = [0.0] * (total + 1)
    x = cir.x0
    path[0] = x
    ints = [0.0] * n_steps
    ints2 = [0.0] * n_steps
    truncated = 0
    k = 0
    for i in range(n_steps):
        acc = 0.0
        acc2 = 0.0
        for _ in range(subres):
            xp = x if x > 0.0 else 0.0
            acc += xp
            acc2 += xp * xp
            x = x + kappa * (theta - xp) * dt + xi * math.sqrt(xp) * sdt * z[k]
            k += 1
            if x < 0.0:
                truncated += 1
            path[k] = x
        ints[i] = acc * dt
        ints2[i] = acc2 * dt
    return CirPath(np.array(path), np.array(ints), np.array(ints2), truncated, dt)


# ------------------------------------------------------------ panels


@dataclass(frozen=True)
class JumpEvent:
    step: int
    component: int
    time: float
    curve: np.ndarray = field(repr=False)
    l2_norm: float = 0.0


@dataclass(frozen=True, eq=False)
class Simulation:
    """Output of :func:`simulate_forward_panel`."""

    forward: ForwardPanel
    jumps: list
    cir: CirPath
    config: SimConfig
    variance_integrals: np.ndarray

    @property
    def grid(self) -> GridSpec:
        return self.config.grid

    def log_prices(self) -> LogBondPanel:
        return forwards_to_log_prices(self.forward)

    def jump_table(self) -> list[tuple[int, int, float]]:
        return [(e.step, e.component, e.l2_norm) for e in self.jumps]


def initial_forward_cells(dn: float, cells: int) -> np.ndarray:
    """Cell integrals of ``f0(x) = 0.04 + 0.02 (1 - exp(-x))``."""
    k = np.arange(cells)
    return 0.06 * dn - 0.02 * (np.exp(-k * dn) - np.exp(-(k + 1) * dn))


def _streams(seed: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)]


def simulate_forward_panel(cfg: SimConfig) -> Simulation:
    """Simulate the forward-curve panel described by ``cfg``.

    The internal maturity grid has ``m_cells + n_steps`` cells so that after
    ``n_steps`` left shifts the first ``m_cells`` columns are still exact.
    """
    g = cfg.grid
    n, m, dn = g.n_steps, g.m_cells, g.delta_n
    cells = m + n
    rng_cir, rng_gauss, rng_jump, _ = _streams(cfg.seed)

    path = simulate_cir(cfg.cir, n, dn, cfg.subres, rng_cir)
    load = path.integrals if cfg.variance_loading == "integral" else path.integrals_squared

    Lg = gaussian_factor(cfg)
    Z = rng_gauss.standard_normal((n, Lg.shape[1]))
    inc = (Z @ Lg.T) * np.sqrt(load)[:, None]

    jumps = []
    if cfg.has_jumps:
        kexp = _exp_cells(dn, g.max_maturity, cells)
        Lj = gaussian_factor(cfg, bandwidth=cfg.jump_bandwidth) if cfg.lambda2 > 0 else None
        n1 = rng_jump.poisson(cfg.lambda1 * dn, size=n)
        n2 = rng_jump.poisson(cfg.lambda2 * dn, size=n)
        s1 = math.sqrt(cfg.rho1)
        s2 = math.sqrt(cfg.rho2)
        for i in range(n):
            for comp, count in ((1, n1[i]), (2, n2[i])):
                for _ in range(int(count)):
                    lag = rng_jump.uniform(0.0, dn)
                    t = (i + 1) * dn - lag
                    if comp == 1:
                        curve = s1 * rng_jump.standard_normal() * kexp
                        if cfg.jump_decay:
                            curve = curve * math.exp(-lag)
                    else:
                        curve = s2 * (Lj @ rng_jump.standard_normal(Lj.shape[1]))
                    inc[i] += curve
                    jumps.append(
                        JumpEvent(i + 1, comp, t, curve, float(np.linalg.norm(curve[:m]) / math.sqrt(dn)))
                    )

    # extra headroom so the pure shift is exact on every column
    f0 = initial_forward_cells(dn, cells + n)
    F = np.empty((n + 1, cells))
    F[0] = f0[:cells]
    for i in range(1, n + 1):
        F[i, :-1] = F[i - 1, 1:]
        F[i, -1] = f0[cells - 1 + i]
        F[i] += inc[i - 1]
    return Simulation(ForwardPanel(g, F), jumps, path, cfg, np.asarray(load))


def integrated_volatility(sim: Simulation) -> StepKernel:
    """Continuous quadratic covariation over the horizon on the estimator's grid.

    ``(sum_i I_i) * Q / dn^2`` restricted to the ``m_cells - 1`` cells covered
    by difference returns. Returned with a thin Gram factor.
    """
    cfg = sim.config
    m = cfg.grid.m_cells
    dn = cfg.grid.delta_n
    Lg = gaussian_factor(cfg)
    total = float(np.sum(sim.variance_integrals))
    factor = (math.sqrt(total) / dn) * Lg[: m - 1].T
    return StepKernel.from_gram_factor(factor, dn)


# ------------------------------------------------------------ observation


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Sparse noisy log prices: ``values[i, l]`` at maturity ``indices[i, l] * dn``."""

    grid: GridSpec
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices)
        val = np.asarray(self.values, dtype=float)
        if idx.shape != val.shape or idx.ndim != 2:
            raise DataError("indices and values must be matrices of equal shape")
        if idx.shape[0] != self.grid.n_steps + 1:
            raise DataError(f"expected {self.grid.n_steps + 1} dates, got {idx.shape[0]}")
        if idx.min() < 0 or idx.max() > self.grid.m_cells:
            raise DataError("maturity index outside the grid")
        srt = np.sort(idx, axis=1)
        if np.any(np.diff(srt, axis=1) == 0):
            raise DataError("maturity indices must be distinct on each date")
        if not np.all(np.isfinite(val)):
            raise DataError("observations contain non-finite values")

    @property
    def m_obs(self) -> int:
        return self.indices.shape[1]

    def to_dense(self) -> LogBondPanel:
        """Dense panel, only when every grid maturity is observed on every date."""
        m = self.grid.m_cells
        if self.m_obs != m + 1:
            raise DataError("observation set does not cover every maturity")
        P = np.empty((self.indices.shape[0], m + 1))
        rows = np.arange(P.shape[0])[:, None]
        P[rows, self.indices] = self.values
        return LogBondPanel(self.grid, P)


def observe(forward: ForwardPanel, m_obs: int, sigma_eps: float, seed=None) -> ObservationSet:
    """Sample ``m_obs`` distinct maturities per date and add Gaussian noise."""
    g = forward.grid
    m = g.m_cells
    if not 1 <= m_obs <= m + 1:
        raise ConfigError(f"m_obs must lie in [1, {m + 1}], got {m_obs}")
    if sigma_eps < 0:
        raise ConfigError("sigma_eps must be non-negative")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    P = forwards_to_log_prices(forward).values
    dates = P.shape[0]
    idx = np.empty((dates, m_obs), dtype=np.int64)
    for i in range(dates):
        idx[i] = np.sort(rng.choice(m + 1, size=m_obs, replace=False))
    rows = np.arange(dates)[:, None]
    vals = P[rows, idx]
    if sigma_eps > 0:
        vals = vals + sigma_eps * rng.standard_normal(vals.shape)
    return ObservationSet(g, idx, vals)


def observe_simulation(sim: Simulation) -> ObservationSet:
    """Observation step with the configuration's own noise stream."""
    cfg = sim.config
    rng = _streams(cfg.seed)[3]
    return observe(sim.forward, cfg.m_obs, cfg.sigma_eps, rng)


def presmooth(obs: ObservationSet, smoother: PenalizedSpline | None = None) -> LogBondPanel:
    """Fit each date with a penalized quintic spline and evaluate on the grid.

    The fitted value at maturity 0 is subtracted so that the zero-maturity
    log price is exactly 0.
    """
    g = obs.grid
    if smoother is None:
        smoother = PenalizedSpline.for_observation_count(g.max_maturity, obs.m_obs)
    x_eval = g.maturities
    out = np.empty((obs.indices.shape[0], g.m_cells + 1))
    for i in range(out.shape[0]):
        x = obs.indices[i] * g.delta_n
        try:
            fit = smoother.fit(x, obs.values[i])
        except DataError as exc:
            raise DataError(f"date {i}: {exc}") from None
        f = fit(x_eval)
        out[i] = f - f[0]
    out[:, 0] = 0.0
    return LogBondPanel(g, out)
