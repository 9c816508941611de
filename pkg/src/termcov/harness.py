"""
Study drivers: Monte Carlo replications, yearwise empirical analysis,
projection-error study of lagged difference returns, and report files.
"""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy

from .covariation import (
    LongRunVolatility,
    long_time_average,
    truncated_covariation,
)
from .curve_panel import (
    DifferenceReturnPanel,
    LogBondPanel,
    YieldPanel,
    difference_returns,
    higher_order_difference_returns,
    project_onto_pcs,
    yields_to_log_prices,
)
from .errors import ConfigError, DataError, NumericalError, TermcovError
from .kernel_space import (
    dimension_profile,
    eigendecompose,
    hs_norm,
    relative_error,
    write_kernel_csv,
    write_surface_triplets,
)
from .simulator import (
    SimConfig,
    integrated_volatility,
    model_preset,
    observe_simulation,
    presmooth,
    simulate_forward_panel,
)
from .truncation_rule import TruncationSpec, build_rule

__all__ = [
    "EXPLAINED_LEVELS",
    "McModel",
    "McRow",
    "McSummary",
    "run_replication",
    "replication_seed",
    "mc_run",
    "YearRow",
    "YearReport",
    "empirical_run",
    "period_boundaries",
    "RmaeTable",
    "rmae_study",
    "emit_report",
]

EXPLAINED_LEVELS = (0.85, 0.90, 0.95, 0.99)
MIN_PERIOD_ROWS = 8


def _level_label(l) -> str:
    return "inf" if math.isinf(l) else f"{l:g}"


# ------------------------------------------------------------ Monte Carlo


@dataclass(frozen=True)
class McModel:
    """One cell block of the Monte Carlo design.

    Attributes
    ----------
    name : str
    config : SimConfig
        The ``seed`` field is overwritten per replication.
    scenario : {"S1", "S2"}
        ``S2`` projects log prices onto three principal components first.
    levels : tuple of float
        Truncation multipliers; ``inf`` means no truncation.
    """

    name: str
    config: SimConfig
    scenario: str = "S1"
    levels: tuple = (math.inf,)

    def __post_init__(self):
        if self.scenario not in ("S1", "S2"):
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if not self.levels:
            raise ConfigError("at least one truncation level is required")
        for l in self.levels:
            if not l > 0:
                raise ConfigError(f"truncation level must be positive, got {l}")
        object.__setattr__(self, "levels", tuple(float(l) for l in self.levels))

    @classmethod
    def preset(cls, name: str, scenario: str = "S1", levels=None, **overrides) -> "McModel":
        cfg = model_preset(name, **overrides)
        if levels is None:
            levels = (3.0, 4.0, 5.0) if cfg.has_jumps else (math.inf,)
        return cls(name.upper(), cfg, scenario, tuple(levels))


@dataclass(frozen=True)
class McRow:
    model: str
    scenario: str
    level: float
    replication: int
    seed: int
    rel_error: float
    dims: tuple
    n_flagged: int
    rule_d: int | None


def replication_seed(master_seed: int, replication: int) -> int:
    """Independent 63-bit seed for replication ``replication``."""
    state = np.random.SeedSequence([int(master_seed), int(replication)]).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1])) & ((1 << 63) - 1)


def _estimation_panel(cfg: SimConfig, scenario: str):
    sim = simulate_forward_panel(cfg)
    if cfg.dense:
        logp = sim.log_prices()
    else:
        logp = presmooth(observe_simulation(sim))
    if scenario == "S2":
        logp = project_onto_pcs(logp, 3)
    return sim, difference_returns(logp)


def run_replication(model: McModel, replication: int, master_seed: int) -> list[McRow]:
    """Simulate, estimate and score one replication for every truncation level."""
    seed = replication_seed(master_seed, replication)
    try:
        cfg = model.config.with_seed(seed)
        sim, d = _estimation_panel(cfg, model.scenario)
        target = integrated_volatility(sim)
        finite = sorted(l for l in model.levels if math.isfinite(l))
        base = build_rule(d, finite[0]) if finite else None
        rows = []
        for l in model.levels:
            spec = TruncationSpec.no_truncation() if math.isinf(l) else base.with_multiplier(l)
            res = truncated_covariation(d, spec)
            k = res.truncated_kernel
            rows.append(
                McRow(
                    model=model.name,
                    scenario=model.scenario,
                    level=l,
                    replication=replication,
                    seed=seed,
                    rel_error=relative_error(k, target),
                    dims=tuple(dimension_profile(k, EXPLAINED_LEVELS)),
                    n_flagged=int(len(res.flagged)),
                    rule_d=spec.d,
                )
            )
        return rows
    except Exception as exc:
        msg = f"model {model.name}/{model.scenario} replication {replication} (seed {seed}) failed: {exc}"
        if isinstance(exc, TermcovError):
            raise type(exc)(msg) from exc
        raise NumericalError(msg) from exc


def _quartiles(x) -> tuple[float, float, float]:
    q1, med, q3 = np.percentile(np.asarray(x, dtype=float), [25, 50, 75])
    return float(q1), float(med), float(q3)


@dataclass(frozen=True)
class McCell:
    model: str
    scenario: str
    level: float
    replications: int
    rel_error: tuple
    dims: dict
    flagged_mean: float

    @property
    def median_rel_error(self) -> float:
        return self.rel_error[1]

    def median_dims(self) -> tuple:
        return tuple(self.dims[p][1] for p in EXPLAINED_LEVELS)


@dataclass(frozen=True, eq=False)
class McSummary:
    """Medians and quartiles per (model, scenario, level)."""

    cells: list
    rows: list
    wall_clock: float
    master_seed: int

    def cell(self, model: str, scenario: str = "S1", level: float = math.inf) -> McCell:
        for c in self.cells:
            if c.model == model and c.scenario == scenario and c.level == float(level):
                return c
        raise KeyError((model, scenario, level))

    def table_rows(self) -> list[dict]:
        out = []
        for c in self.cells:
            row = {
                "model": c.model,
                "scenario": c.scenario,
                "level": _level_label(c.level),
                "replications": c.replications,
                "rE_median": c.rel_error[1],
                "rE_q1": c.rel_error[0],
                "rE_q3": c.rel_error[2],
            }
            for p in EXPLAINED_LEVELS:
                q1, med, q3 = c.dims[p]
                tag = f"D{int(round(p * 100))}"
                row[f"{tag}_median"] = med
                row[f"{tag}_q1"] = q1
                row[f"{tag}_q3"] = q3
            row["flagged_mean"] = c.flagged_mean
            out.append(row)
        return out


def _summarize(rows: list[McRow], wall: float, master_seed: int) -> McSummary:
    keys = []
    for r in rows:
        k = (r.model, r.scenario, r.level)
        if k not in keys:
            keys.append(k)
    cells = []
    for model, scenario, level in keys:
        sel = [r for r in rows if (r.model, r.scenario, r.level) == (model, scenario, level)]
        sel.sort(key=lambda r: r.replication)
        dims = {
            p: _quartiles([r.dims[i] for r in sel]) for i, p in enumerate(EXPLAINED_LEVELS)
        }
        cells.append(
            McCell(
                model, scenario, level, len(sel),
                _quartiles([r.rel_error for r in sel]), dims,
                float(np.mean([r.n_flagged for r in sel])),
            )
        )
    return McSummary(cells, rows, wall, master_seed)


def _replication_task(args):
    model, rep, master_seed = args
    return run_replication(model, rep, master_seed)


def mc_run(models: Sequence[McModel], replications: int, master_seed: int = 0, threads: int = 1) -> McSummary:
    """Run ``replications`` independent replications of every model.

    Replication ``r`` of every model uses the seed derived from
    ``(master_seed, r)``, so models are compared on common random numbers.
    Results do not depend on ``threads``.
    """
    if int(replications) != replications or replications < 1:
        raise ConfigError(f"replications must be a positive integer, got {replications}")
    if not models:
        raise ConfigError("no models given")
    tasks = [(m, r, master_seed) for m in models for r in range(int(replications))]
    start = time.perf_counter()
    if threads and threads > 1:
        with ProcessPoolExecutor(max_workers=int(threads)) as pool:
            chunks = list(pool.map(_replication_task, tasks))
    else:
        chunks = [_replication_task(t) for t in tasks]
    rows = [r for chunk in chunks for r in chunk]
    return _summarize(rows, time.perf_counter() - start, master_seed)


# ------------------------------------------------------------ empirical


@dataclass(frozen=True)
class YearRow:
    label: str
    rows: int
    hs_norm_total: float
    flags: dict
    ratios: dict
    dims_own: tuple | None
    dims_long: tuple | None
    degenerate: bool
    notes: tuple = ()


@dataclass(frozen=True, eq=False)
class YearReport:
    rows: list
    levels: tuple
    long_run_level: float

    def row(self, label: str) -> YearRow:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)

    def table_rows(self) -> list[dict]:
        out = []
        for r in self.rows:
            row = {"period": r.label, "rows": r.rows, "hs_norm": r.hs_norm_total, "degenerate": int(r.degenerate)}
            for l in self.levels:
                tag = _level_label(l)
                row[f"flags_l{tag}"] = r.flags[l]
                row[f"ratio_l{tag}"] = r.ratios[l]
            for name, dims in (("own", r.dims_own), ("long", r.dims_long)):
                for i, p in enumerate(EXPLAINED_LEVELS):
                    row[f"D{int(round(p * 100))}_{name}"] = "" if dims is None else dims[i]
            out.append(row)
        return out


def period_boundaries(d: DifferenceReturnPanel, rows_per_period: int | None = None):
    """Row boundaries and labels of the estimation periods.

    With date labels the periods are calendar years of each return's end
    date. Otherwise consecutive blocks of ``rows_per_period`` rows (default
    ``round(1 / dn)``) are used.
    """
    if d.dates is not None and rows_per_period is None:
        years = [str(x)[:4] for x in d.dates]
        bounds = [0]
        labels = [years[0]]
        for i in range(1, len(years)):
            if years[i] != years[i - 1]:
                bounds.append(i)
                labels.append(years[i])
        bounds.append(len(years))
        return bounds, labels
    block = int(round(1.0 / d.delta_n)) if rows_per_period is None else int(rows_per_period)
    if block < 1:
        raise ConfigError("rows_per_period must be positive")
    bounds = list(range(0, d.n_rows, block))
    if d.n_rows - bounds[-1] < MIN_PERIOD_ROWS and len(bounds) > 1:
        bounds.pop()
    bounds.append(d.n_rows)
    labels = [f"P{i + 1}" for i in range(len(bounds) - 1)]
    return bounds, labels


def empirical_run(
    data,
    l_values: Sequence[float] = (3, 4, 5),
    boundaries: Sequence[int] | None = None,
    labels: Sequence[str] | None = None,
    explained: float = 0.90,
    long_run_level: float | None = None,
) -> tuple[YearReport, LongRunVolatility]:
    """Yearwise truncated covariations, jump diagnostics and dimensions.

    Parameters
    ----------
    data : YieldPanel, LogBondPanel or DifferenceReturnPanel
    l_values : sequence of float
        Truncation multipliers.
    boundaries, labels : optional
        Explicit period row boundaries; calendar years by default.
    explained : float
        Trace fraction used by the truncation rule.
    long_run_level : float, optional
        Multiplier whose truncated kernels are averaged into the long-run
        estimate; defaults to the smallest of ``l_values``.

    Returns
    -------
    (YearReport, LongRunVolatility)
    """
    if isinstance(data, YieldPanel):
        data = yields_to_log_prices(data)
    if isinstance(data, LogBondPanel):
        data = difference_returns(data)
    if not isinstance(data, DifferenceReturnPanel):
        raise DataError(f"unsupported input type {type(data).__name__}")
    d = data
    levels = tuple(float(l) for l in l_values)
    if not levels:
        raise ConfigError("need at least one truncation level")
    lr_level = min(levels) if long_run_level is None else float(long_run_level)
    if lr_level not in levels:
        raise ConfigError("long_run_level must be one of l_values")
    if boundaries is None:
        boundaries, auto = period_boundaries(d)
        labels = auto if labels is None else labels
    boundaries = [int(b) for b in boundaries]
    if labels is None:
        labels = [f"P{i + 1}" for i in range(len(boundaries) - 1)]
    if len(labels) != len(boundaries) - 1:
        raise ConfigError("labels and boundaries disagree")
    for lab, x, y in zip(labels, boundaries, boundaries[1:]):
        if y - x < MIN_PERIOD_ROWS:
            raise DataError(f"period {lab} has {y - x} rows; at least {MIN_PERIOD_ROWS} are needed")

    per_period = []
    for lab, x, y in zip(labels, boundaries, boundaries[1:]):
        sub = d.select(slice(x, y))
        notes = []
        degenerate = False
        results = {}
        try:
            base = build_rule(sub, min(l for l in levels), explained)
        except NumericalError as exc:
            degenerate = True
            notes.append(str(exc))
            base = None
        for l in levels:
            spec = TruncationSpec.no_truncation() if base is None or math.isinf(l) else base.with_multiplier(l)
            results[l] = truncated_covariation(sub, spec)
        if base is not None:
            notes.extend(base.warnings)
        per_period.append((lab, sub, results, degenerate, tuple(notes)))

    long_run = long_time_average([p[2][lr_level] for p in per_period])
    lr_norm = hs_norm(long_run.kernel)
    long_basis = eigendecompose(long_run.kernel) if lr_norm > 0 else None

    rows = []
    for lab, sub, results, degenerate, notes in per_period:
        main = results[lr_level].truncated_kernel
        dims_own = dims_long = None
        if hs_norm(main) > 0:
            try:
                dims_own = tuple(dimension_profile(main, EXPLAINED_LEVELS))
                if long_basis is not None:
                    dims_long = tuple(dimension_profile(main, EXPLAINED_LEVELS, long_basis))
            except NumericalError as exc:
                notes = notes + (str(exc),)
        else:
            degenerate = True
        rows.append(
            YearRow(
                label=lab,
                rows=sub.n_rows,
                hs_norm_total=hs_norm(results[levels[0]].kernel),
                flags={l: int(len(results[l].flagged)) for l in levels},
                ratios={l: results[l].ratio for l in levels},
                dims_own=dims_own,
                dims_long=dims_long,
                degenerate=degenerate,
                notes=notes,
            )
        )
    return YearReport(rows, levels, lr_level), long_run


# ------------------------------------------------------------ RMAE


@dataclass(frozen=True, eq=False)
class RmaeTable:
    """Relative projection errors of lagged difference returns."""

    entries: list
    validation: dict

    def value(self, lag: int, source: str, d: int) -> float:
        for e in self.entries:
            if e["lag"] == lag and e["source"] == source and e["d"] == d:
                return e["rmae"]
        raise KeyError((lag, source, d))

    def table_rows(self) -> list[dict]:
        return [dict(e) for e in self.entries]


def _validation_rows(bounds, per_period: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    picks = []
    for x, y in zip(bounds, bounds[1:]):
        k = min(per_period, y - x)
        picks.append(np.sort(rng.choice(np.arange(x, y), size=k, replace=False)))
    return np.concatenate(picks) if picks else np.array([], dtype=int)


def _forward_cell_pcs(logp: LogBondPanel, exclude_dates: np.ndarray) -> np.ndarray:
    """Principal directions of maturity differences of log prices.

    ``log P_t(j dn) - log P_t((j - 1) dn)`` is minus the forward-curve cell
    integral over cell ``j - 1``; the directions are unit vectors over cells.
    """
    diffs = np.diff(logp.values, axis=1)
    mask = np.ones(diffs.shape[0], dtype=bool)
    mask[exclude_dates] = False
    X = diffs[mask]
    X = X - X.mean(axis=0)
    _, _, vt = np.linalg.svd(X, full_matrices=False)
    return vt.T


def _nested_projection_errors(curves: np.ndarray, factors: np.ndarray, d_values) -> dict:
    """Mean relative l2 error of projecting ``curves`` onto nested factor spans."""
    Q, _ = np.linalg.qr(factors[:, : max(d_values)])
    coef = curves @ Q
    norms2 = np.einsum("ij,ij->i", curves, curves)
    good = norms2 > 0
    out = {}
    for d in d_values:
        # explicit residual; subtracting captured energy loses digits near zero
        r = curves - coef[:, :d] @ Q[:, :d].T
        resid = np.sqrt(np.einsum("ij,ij->i", r, r))
        out[d] = float(np.mean(resid[good] / np.sqrt(norms2[good]))) if good.any() else float("nan")
    return out


def rmae_study(
    logp: LogBondPanel,
    sources: Sequence[str] = ("log-price-pcs", "long-run-eigen"),
    lags: Sequence[int] = (7, 30, 90, 180),
    d_range: Sequence[int] = tuple(range(1, 16)),
    per_period: int = 25,
    seed: int = 0,
    long_run: LongRunVolatility | None = None,
    boundaries: Sequence[int] | None = None,
) -> RmaeTable:
    """Projection errors of lagged difference returns onto factor spans.

    For each validation date and lag ``L`` the curve ``(d_L)_i`` is
    projected onto the span of the first ``d`` factors restricted to the
    cells it covers, and the relative L2 errors are averaged.

    Factor sources
    --------------
    ``log-price-pcs``
        Principal components of the maturity differences of log prices on
        non-validation dates.
    ``long-run-eigen``
        Leading eigenfunctions of ``long_run`` (computed from all periods
        when not supplied).
    """
    d = difference_returns(logp)
    if boundaries is None:
        boundaries, _ = period_boundaries(d)
    val_rows = _validation_rows(list(boundaries), int(per_period), seed)
    if val_rows.size == 0:
        raise DataError("empty validation set")
    d_values = sorted({int(x) for x in d_range})
    if d_values[0] < 1:
        raise ConfigError("factor counts must be positive")
    m_cells = d.values.shape[1]
    factors = {}
    for src in sources:
        if src == "log-price-pcs":
            # difference-return row r spans dates r and r + 1
            pcs = _forward_cell_pcs(logp, np.r_[val_rows, val_rows + 1])
            factors[src] = pcs[:m_cells]
        elif src == "long-run-eigen":
            if long_run is None:
                _, long_run = empirical_run(d, (3,), boundaries=boundaries)
            factors[src] = eigendecompose(long_run.kernel).eigenfunctions
        else:
            raise ConfigError(f"unknown factor source {src!r}")
    entries = []
    for L in lags:
        curves = higher_order_difference_returns(d, int(L))[val_rows]
        width = curves.shape[1]
        for src in sources:
            F = factors[src][:width]
            usable = [k for k in d_values if k <= min(width, F.shape[1])]
            errs = _nested_projection_errors(curves, F, usable)
            for k in usable:
                entries.append({"lag": int(L), "source": src, "d": k, "rmae": errs[k]})
    info = {
        "n_dates": int(val_rows.size),
        "per_period": int(per_period),
        "periods": len(boundaries) - 1,
        "seed": int(seed),
    }
    return RmaeTable(entries, info)


# ------------------------------------------------------------ report


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return "%.12g" % v
    return str(v)


def _write_table(rows: list[dict], path: Path) -> Path:
    cols = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in cols])
    return path


def _canonical(obj):
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def config_hash(config) -> str:
    blob = json.dumps(_canonical(config or {}), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def emit_report(results: dict, out_dir, config=None, seed=None) -> list[Path]:
    """Write tables, kernels and a run manifest.

    Parameters
    ----------
    results : dict
        Optional keys ``mc`` (McSummary), ``years`` (YearReport), ``long_run``
        (LongRunVolatility), ``rmae`` (RmaeTable), ``kernels`` (name to
        StepKernel) and ``extra`` (JSON-serializable summary).
    out_dir : path
    config : dict, optional
        Configuration recorded by hash in the manifest.
    seed : int, optional

    Returns
    -------
    list of Path
        Every file written, manifest last. Only the manifest's ``created``
        field varies between identical runs.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from None
    written = []
    try:
        if results.get("mc") is not None:
            written.append(_write_table(results["mc"].table_rows(), out / "mc_summary.csv"))
        if results.get("years") is not None:
            written.append(_write_table(results["years"].table_rows(), out / "year_report.csv"))
        if results.get("rmae") is not None:
            written.append(_write_table(results["rmae"].table_rows(), out / "rmae.csv"))
        kernels = dict(results.get("kernels") or {})
        if results.get("long_run") is not None:
            kernels.setdefault("long_run", results["long_run"].kernel)
        if kernels:
            kdir = out / "kernels"
            kdir.mkdir(exist_ok=True)
            for name in sorted(kernels):
                k = kernels[name]
                written.append(write_kernel_csv(k, kdir / f"{name}.csv"))
                written.append(kdir / f"{name}.json")
                stride = max(1, k.m_cells // 200)
                written.append(write_surface_triplets(k, kdir / f"{name}_surface.csv", stride))
        if results.get("extra") is not None:
            p = out / "summary.json"
            p.write_text(json.dumps(_canonical(results["extra"]), indent=2, sort_keys=True) + "\n")
            written.append(p)
        manifest = {
            "config_hash": config_hash(config),
            "seed": seed,
            "files": sorted(str(p.relative_to(out)) for p in written),
            "versions": {
                "termcov": _package_version(),
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
            "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        }
        mpath = out / "manifest.json"
        mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        written.append(mpath)
    except OSError as exc:
        raise DataError(f"failed writing report to {out}: {exc}") from None
    return written


def _package_version() -> str:
    from . import __version__

    return __version__
