import csv
import datetime
import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from termcov.cli import main

SMALL_SIM = {
    "a": 50.0,
    "lambda1": 10.0,
    "rho1": 0.0116,
    "grid": {"delta_n": 0.05, "n_steps": 40, "max_maturity": 1.0},
    "m_obs": 21,
    "subres": 2,
}


def write_config(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def write_yields(tmp_path, n_dates=40):
    rng = np.random.default_rng(0)
    start = datetime.date(2019, 1, 1)
    lines = ["date,maturity_years,yield"]
    level = 0.02
    for i in range(n_dates):
        day = (start + datetime.timedelta(days=18 * i)).isoformat()
        level += 0.0005 * rng.standard_normal()
        for k in range(11):
            lines.append(f"{day},{k * 0.1:.2f},{level + 0.001 * k:.8f}")
    p = tmp_path / "yields.csv"
    p.write_text("\n".join(lines) + "\n")
    return p


def test_simulate(tmp_path):
    cfg = write_config(tmp_path, {"data": {"sim": SMALL_SIM}})
    out = tmp_path / "out"
    assert main(["simulate", cfg, "--seed", "3", "--out", str(out)]) == 0
    logp = np.loadtxt(out / "log_prices.csv", delimiter=",", skiprows=1, usecols=range(1, 22))
    assert logp.shape == (41, 21)
    assert json.loads((out / "sim_config.json").read_text())["seed"] == 3
    with (out / "jumps.csv").open() as fh:
        assert next(csv.reader(fh)) == ["step", "component", "l2_norm"]
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 3 and "summary.json" in man["files"]


def test_estimate_writes_kernels(tmp_path):
    cfg = write_config(tmp_path, {"data": {"sim": SMALL_SIM}, "estimate": {"l": 3}})
    out = tmp_path / "out"
    assert main(["estimate", cfg, "--seed", "1", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    for key in ("rows_used", "rows_flagged", "u_n", "g_kind", "hs_norm_total", "hs_norm_truncated", "ratio"):
        assert key in summary
    for name in ("total", "truncated", "jump"):
        assert (out / "kernels" / f"{name}.csv").exists()
        assert json.loads((out / "kernels" / f"{name}.json").read_text())["scaling"] == "includes_delta_n^-2"


def test_rule_dump(tmp_path):
    cfg = write_config(tmp_path, {"data": {"sim": SMALL_SIM}, "estimate": {"l": 4, "explained": 0.9}})
    out = tmp_path / "out"
    assert main(["rule", cfg, "--out", str(out)]) == 0
    rule = json.loads((out / "rule.json").read_text())
    for key in ("l", "d", "u_n", "eigenvalues", "tail_mass", "rho_star", "kept_fraction"):
        assert key in rule
    assert rule["l"] == 4


def test_mc(tmp_path):
    cfg = write_config(
        tmp_path,
        {"mc": {"replications": 2, "models": [{"name": "M1", "overrides": {"grid": SMALL_SIM["grid"], "m_obs": 21}}]}},
    )
    out = tmp_path / "out"
    assert main(["mc", cfg, "--seed", "0", "--out", str(out)]) == 0
    rows = list(csv.DictReader((out / "mc_summary.csv").open()))
    assert len(rows) == 1 and rows[0]["model"] == "M1" and rows[0]["level"] == "inf"


def test_empirical_and_rmae_from_csv(tmp_path):
    write_yields(tmp_path)
    base = {"data": {"yields_csv": "yields.csv", "delta_n": 0.1}}
    cfg = write_config(tmp_path, {**base, "empirical": {"l_values": [3, 4, 5]}})
    out = tmp_path / "emp"
    assert main(["empirical", cfg, "--out", str(out)]) == 0
    rows = list(csv.DictReader((out / "year_report.csv").open()))
    assert [r["period"] for r in rows] == ["2019", "2020"]
    assert (out / "kernels" / "long_run.csv").exists()

    cfg = write_config(tmp_path, {**base, "rmae": {"lags": [0, 2], "d_range": [1, 4], "per_period": 5}}, "r.json")
    out = tmp_path / "rmae"
    assert main(["rmae", cfg, "--out", str(out)]) == 0
    rows = list(csv.DictReader((out / "rmae.csv").open()))
    assert {r["source"] for r in rows} == {"log-price-pcs", "long-run-eigen"}


def test_report_runs_all_sections(tmp_path):
    write_yields(tmp_path)
    cfg = write_config(
        tmp_path,
        {
            "data": {"yields_csv": "yields.csv", "delta_n": 0.1},
            "empirical": {},
            "rmae": {"lags": [0], "d_range": [1, 3], "per_period": 5},
        },
    )
    out = tmp_path / "out"
    assert main(["report", cfg, "--out", str(out)]) == 0
    assert (out / "year_report.csv").exists() and (out / "rmae.csv").exists()


@pytest.mark.parametrize(
    "cfg, code",
    [
        ({"data": {"model": "M42"}}, 2),
        ({"data": {"sim": {**SMALL_SIM, "bogus": 1}}}, 2),
        ({"mc": {"models": []}}, 2),
        ({"data": {"yields_csv": "missing.csv", "delta_n": 0.1}}, 3),
    ],
)
def test_exit_codes(tmp_path, cfg, code):
    command = "mc" if "mc" in cfg else "estimate"
    assert main([command, write_config(tmp_path, cfg), "--out", str(tmp_path / "o")]) == code


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert main(["estimate", str(p)]) == 2


def test_bad_csv_is_data_error(tmp_path, capsys):
    (tmp_path / "y.csv").write_text("date,maturity_years,yield\n2020-01-01,1,oops\n")
    cfg = write_config(tmp_path, {"data": {"yields_csv": "y.csv", "delta_n": 1.0}})
    assert main(["estimate", cfg, "--out", str(tmp_path / "o")]) == 3
    assert "line 2" in capsys.readouterr().err


def test_console_script(tmp_path):
    exe = shutil.which("termcov")
    cmd = [exe] if exe else [sys.executable, "-m", "termcov.cli"]
    res = subprocess.run(cmd + ["--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for sub in ("simulate", "estimate", "rule", "mc", "empirical", "rmae", "report"):
        assert sub in res.stdout
