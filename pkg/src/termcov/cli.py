"""
Command-line entry point.

Every subcommand reads one JSON configuration file and accepts ``--seed``,
``--threads`` and ``--out``. See the README for the configuration schema.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

from .covariation import truncated_covariation
from .curve_panel import LogBondPanel, difference_returns, read_yields_csv, write_panel_csv, yields_to_log_prices
from .errors import ConfigError, DataError, NumericalError
from .harness import McModel, emit_report, empirical_run, mc_run, rmae_study
from .kernel_space import dimension_profile, hs_norm
from .simulator import SimConfig, model_preset, observe_simulation, presmooth, simulate_forward_panel
from .truncation_rule import TruncationSpec, build_rule

EXIT_CODES = {ConfigError: 2, DataError: 3, NumericalError: 4}
log = logging.getLogger("termcov")


def _level(v) -> float:
    if isinstance(v, str) and v.strip().lower() in ("inf", "infinity"):
        return math.inf
    try:
        x = float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"bad truncation level {v!r}") from None
    if not x > 0:
        raise ConfigError(f"truncation level must be positive, got {v!r}")
    return x


def load_config(path) -> dict:
    p = Path(path)
    try:
        cfg = json.loads(p.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {p}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{p}: top level must be an object")
    base = p.parent
    data = cfg.get("data")
    if isinstance(data, dict) and "yields_csv" in data:
        csv_path = Path(data["yields_csv"])
        if not csv_path.is_absolute():
            data["yields_csv"] = str(base / csv_path)
    return cfg


def sim_config(block: dict, seed: int | None) -> SimConfig:
    """SimConfig from a ``data`` block holding either ``model`` or ``sim``."""
    if "model" in block:
        cfg = model_preset(block["model"], **block.get("overrides", {}))
    elif "sim" in block:
        cfg = SimConfig.from_dict(block["sim"])
    else:
        raise ConfigError("data block needs one of 'yields_csv', 'model' or 'sim'")
    return cfg if seed is None else cfg.with_seed(seed)


def load_log_prices(cfg: dict, seed: int | None) -> LogBondPanel:
    block = cfg.get("data")
    if not isinstance(block, dict):
        raise ConfigError("config needs a 'data' object")
    if "yields_csv" in block:
        try:
            dn = float(block["delta_n"])
        except KeyError:
            raise ConfigError("data.delta_n is required with yields_csv") from None
        path = Path(block["yields_csv"])
        if not path.exists():
            raise DataError(f"yields file not found: {path}")
        return yields_to_log_prices(read_yields_csv(path, dn, block.get("max_maturity")))
    sc = sim_config(block, seed)
    sim = simulate_forward_panel(sc)
    return sim.log_prices() if sc.dense else presmooth(observe_simulation(sim))


def _rule(d, block: dict) -> TruncationSpec:
    l = _level(block.get("l", 3))
    if math.isinf(l):
        return TruncationSpec.no_truncation()
    return build_rule(
        d,
        l,
        explained=float(block.get("explained", 0.9)),
        w_exponent=float(block.get("w_exponent", 0.49)),
        power=int(block.get("power", 1)),
    )


# ------------------------------------------------------------ commands


def cmd_simulate(cfg, args):
    block = cfg.get("data")
    if not isinstance(block, dict):
        raise ConfigError("config needs a 'data' object")
    sc = sim_config(block, args.seed)
    sim = simulate_forward_panel(sc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    logp = sim.log_prices() if sc.dense else presmooth(observe_simulation(sim))
    write_panel_csv(logp, out / "log_prices.csv")
    with (out / "jumps.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "component", "l2_norm"])
        for step, comp, norm in sim.jump_table():
            w.writerow([step, comp, "%.12g" % norm])
    (out / "sim_config.json").write_text(sc.to_json() + "\n")
    extra = {
        "n_jumps": len(sim.jumps),
        "cir_truncations": sim.cir.n_truncated,
        "integrated_variance": float(sim.variance_integrals.sum()),
    }
    emit_report({"extra": extra}, out, cfg, sc.seed)


def cmd_estimate(cfg, args):
    logp = load_log_prices(cfg, args.seed)
    d = difference_returns(logp)
    spec = _rule(d, cfg.get("estimate", {}))
    res = truncated_covariation(d, spec)
    extra = dict(res.manifest())
    extra["rule"] = spec.to_dict()
    if hs_norm(res.truncated_kernel) > 0:
        extra["dimensions"] = dimension_profile(res.truncated_kernel, (0.85, 0.9, 0.95, 0.99))
    extra["flagged_rows"] = [int(i) for i in res.flagged]
    kernels = {"total": res.kernel, "truncated": res.truncated_kernel, "jump": res.jump_kernel}
    emit_report({"kernels": kernels, "extra": extra}, args.out, cfg, args.seed)


def cmd_rule(cfg, args):
    logp = load_log_prices(cfg, args.seed)
    spec = _rule(difference_returns(logp), cfg.get("estimate", {}))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "rule.json").write_text(spec.to_json() + "\n")
    emit_report({"extra": spec.to_dict()}, out, cfg, args.seed)


def _mc_models(block: dict) -> list[McModel]:
    specs = block.get("models")
    if not specs:
        raise ConfigError("mc.models must list at least one model")
    models = []
    for s in specs:
        if isinstance(s, str):
            s = {"name": s}
        levels = s.get("levels")
        models.append(
            McModel.preset(
                s["name"],
                scenario=s.get("scenario", "S1"),
                levels=None if levels is None else [_level(v) for v in levels],
                **s.get("overrides", {}),
            )
        )
    return models


def run_mc(cfg, args):
    block = cfg.get("mc")
    if not isinstance(block, dict):
        raise ConfigError("config needs an 'mc' object")
    seed = 0 if args.seed is None else args.seed
    return mc_run(_mc_models(block), int(block.get("replications", 100)), seed, args.threads)


def cmd_mc(cfg, args):
    summary = run_mc(cfg, args)
    emit_report({"mc": summary}, args.out, cfg, summary.master_seed)


def run_empirical(cfg, args, logp=None):
    block = cfg.get("empirical", {})
    logp = load_log_prices(cfg, args.seed) if logp is None else logp
    d = difference_returns(logp)
    bounds = None
    if block.get("rows_per_period"):
        from .harness import period_boundaries

        bounds, _ = period_boundaries(d, int(block["rows_per_period"]))
    levels = [_level(v) for v in block.get("l_values", [3, 4, 5])]
    return empirical_run(d, levels, boundaries=bounds, explained=float(block.get("explained", 0.9)))


def cmd_empirical(cfg, args):
    report, long_run = run_empirical(cfg, args)
    emit_report({"years": report, "long_run": long_run}, args.out, cfg, args.seed)


def run_rmae(cfg, args, logp=None, long_run=None):
    block = cfg.get("rmae", {})
    logp = load_log_prices(cfg, args.seed) if logp is None else logp
    d_range = block.get("d_range", [1, 15])
    if len(d_range) == 2:
        d_range = range(int(d_range[0]), int(d_range[1]) + 1)
    bounds = None
    if block.get("rows_per_period"):
        from .harness import period_boundaries

        bounds, _ = period_boundaries(difference_returns(logp), int(block["rows_per_period"]))
    return rmae_study(
        logp,
        sources=block.get("sources", ["log-price-pcs", "long-run-eigen"]),
        lags=block.get("lags", [7, 30, 90, 180]),
        d_range=d_range,
        per_period=int(block.get("per_period", 25)),
        seed=0 if args.seed is None else args.seed,
        long_run=long_run,
        boundaries=bounds,
    )


def cmd_rmae(cfg, args):
    table = run_rmae(cfg, args)
    emit_report({"rmae": table}, args.out, cfg, args.seed)


def cmd_report(cfg, args):
    """Run every study section present in the configuration."""
    results = {}
    if "mc" in cfg:
        results["mc"] = run_mc(cfg, args)
    if "empirical" in cfg or "rmae" in cfg:
        logp = load_log_prices(cfg, args.seed)
        long_run = None
        if "empirical" in cfg:
            results["years"], long_run = run_empirical(cfg, args, logp)
            results["long_run"] = long_run
        if "rmae" in cfg:
            results["rmae"] = run_rmae(cfg, args, logp, long_run)
    if not results:
        raise ConfigError("report needs at least one of 'mc', 'empirical' or 'rmae'")
    emit_report(results, args.out, cfg, args.seed)


COMMANDS = {
    "simulate": (cmd_simulate, "simulate one panel and write log prices and the jump log"),
    "estimate": (cmd_estimate, "estimate total, truncated and jump covariation kernels"),
    "rule": (cmd_rule, "build the data-driven truncation rule and dump it as JSON"),
    "mc": (cmd_mc, "run the Monte Carlo study"),
    "empirical": (cmd_empirical, "yearwise jump and dimension analysis of a yield panel"),
    "rmae": (cmd_rmae, "projection errors of lagged difference returns"),
    "report": (cmd_report, "run every configured study and write one report"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="termcov", description=__doc__.split("\n\n")[1])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="JSON configuration file")
        p.add_argument("--seed", type=int, default=None, help="seed (master seed for mc)")
        p.add_argument("--threads", type=int, default=1, help="worker processes")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config)
        COMMANDS[args.command][0](cfg, args)
    except (ConfigError, DataError, NumericalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        for cls, code in EXIT_CODES.items():
            if isinstance(exc, cls):
                return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
