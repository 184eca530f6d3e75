import json
from pathlib import Path

import numpy as np
import pytest

from metpeel.cli import main as cli_main
from metpeel.harness import (
    Campaign,
    run_campaign,
    success_rate,
    worker_count,
    write_analytic_csv,
)
from metpeel.pathsim import PathOptions, Schedule, integrate_path

NAT = Schedule.natural()


def _campaign(spec, **kw):
    base = dict(
        spec=spec,
        n_values=(2000,),
        eps_values=(0.55,),
        trials=12,
        schedule=NAT,
        seed=7,
        out_dir=None,
        resolution=32,
    )
    base.update(kw)
    return Campaign(**base)


def test_campaign_validation(ra):
    with pytest.raises(ValueError):
        _campaign(ra, trials=0)
    with pytest.raises(ValueError):
        _campaign(ra, n_values=(5,))
    with pytest.raises(ValueError):
        _campaign(ra, eps_values=(1.5,))


def test_campaign_report_structure(ra, tmp_path):
    report = run_campaign(_campaign(ra, out_dir=str(tmp_path)))
    assert len(report.points) == 1
    p = report.points[0]
    assert p.N == 2000 and p.eps == 0.55 and p.trials == 12
    assert 0.0 <= p.success_rate <= 1.0
    assert set(p.stats) == {"mu1", "nu", "mu", "e"}
    for s in p.stats.values():
        assert s.max_dev >= 0 and s.rms_dev >= 0
    assert (tmp_path / "report.json").exists()
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["report"]["points"][0]["N"] == 2000
    assert Path(p.files["analytic"]).exists()
    assert Path(p.files["empirical_mean"]).exists()


def test_campaign_low_n_informational(ra):
    report = run_campaign(_campaign(ra, n_values=(10,), trials=1, resolution=8))
    p = report.points[0]
    assert p.informational
    assert p.passed is None
    assert report.passed  # informational points do not fail the report


def test_campaign_all_transmitted_eps_zero(reg36):
    report = run_campaign(_campaign(reg36, eps_values=(0.0,), trials=5, resolution=8))
    p = report.points[0]
    assert p.success_rate == 1.0
    # nothing remains after the channel: empirical trajectories are empty
    assert p.stats["nu"].max_dev == pytest.approx(0.0, abs=1e-12)


def test_success_rate_waterfall(reg36):
    camp = _campaign(
        reg36, n_values=(2000,), eps_values=(0.30, 0.55, 1.0), trials=16, resolution=8
    )
    rates = success_rate(camp)
    assert rates[0.30] > rates[1.0]
    assert rates[1.0] == 0.0  # fully erased positive-rate code cannot decode
    vals = [rates[k] for k in (0.30, 0.55, 1.0)]
    assert all(a >= b - 0.25 for a, b in zip(vals, vals[1:]))  # monotone up to noise


def test_csv_bodies_deterministic(ra, tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    for out in (out_a, out_b):
        run_campaign(_campaign(ra, trials=6, out_dir=str(out)))

    def body(path):
        lines = Path(path).read_bytes().split(b"\n")
        assert lines[0].startswith(b"# generator: metpeel")
        return b"\n".join(lines[1:])

    for name in ("trajectory_analytic_N2000_eps0.55.csv", "trajectory_empirical_mean_N2000_eps0.55.csv"):
        assert body(out_a / name) == body(out_b / name)


def test_analytic_csv_schema(ra, tmp_path):
    res = integrate_path(ra, 0.55, NAT, PathOptions(resolution=16))
    path = tmp_path / "traj.csv"
    write_analytic_csv(path, ra, res)
    raw = path.read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().strip().split("\n")
    assert lines[0].startswith("# generator: metpeel ")
    assert lines[1] == "t,xbar,x_1,x_2,e_1,e_2,mu1_1,mu1_2,nu_total"
    first = [float(v) for v in lines[2].split(",")]
    assert first[0] == 0.0 and first[1] == 1.0
    # xbar column is the edge-weighted average of the x columns
    for line in lines[2:6]:
        vals = [float(v) for v in line.split(",")]
        assert vals[1] == pytest.approx((2 * vals[2] + vals[3]) / 3, abs=1e-12)


def test_empirical_csv_schema(ra, tmp_path):
    report = run_campaign(_campaign(ra, trials=4, resolution=8, out_dir=str(tmp_path), per_trial_csv=1))
    p = report.points[0]
    lines = Path(p.files["empirical_mean"]).read_text().strip().split("\n")
    header = lines[1].split(",")
    assert header[0] == "t"
    assert header[1] == "count_nu_0-1;2-0"
    assert header[2] == "count_nu_1-0;0-3"
    assert "count_mu_2-1" in header
    assert header[-2:] == ["mu1_emp_1", "mu1_emp_2"]
    assert Path(p.files["trial0"]).exists()


def test_success_curve_crosses_half_near_threshold(ra):
    # coarse finite-length sanity at N=1e5: the empirical waterfall crosses
    # 1/2 within +-0.01 of the analytic threshold 0.6174 (not a scaling law)
    camp = Campaign(
        spec=ra,
        n_values=(100000,),
        eps_values=(0.6075, 0.6275),
        trials=48,
        schedule=NAT,
        seed=314,
        resolution=16,
    )
    rates = success_rate(camp)
    assert rates[0.6075] > 0.5
    assert rates[0.6275] < 0.5


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("METPEEL_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.delenv("METPEEL_THREADS")
    assert worker_count(5) == 5
    assert worker_count() >= 1


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


ENSEMBLES = Path(__file__).resolve().parent.parent / "ensembles"


def test_cli_analyze(capsys):
    rc = cli_main(["analyze", "--ensemble", str(ENSEMBLES / "ra.json"), "--eps", "0.6175"])
    out = capsys.readouterr().out
    assert rc == 0
    assert "0.14630625" in out
    assert "rate" in out


def test_cli_path_writes_files(tmp_path, capsys):
    rc = cli_main(
        [
            "path", "--ensemble", str(ENSEMBLES / "ra.json"),
            "--eps", "0.55", "--out", str(tmp_path), "--resolution", "16",
        ]
    )
    assert rc == 0
    assert (tmp_path / "trajectory_analytic.csv").exists()
    doc = json.loads((tmp_path / "result.json").read_text())
    assert doc["outcome"]["kind"] == "completed"


def test_cli_threshold(capsys, tmp_path):
    rc = cli_main(
        [
            "threshold", "--ensemble", str(ENSEMBLES / "reg36.json"),
            "--tol", "1e-3", "--out", str(tmp_path),
        ]
    )
    out = capsys.readouterr().out
    assert rc == 0
    assert "eps* = 0.42" in out
    doc = json.loads((tmp_path / "result.json").read_text())
    assert abs(doc["threshold"]["value"] - 0.4294) < 2e-3


def test_cli_missing_file(capsys):
    rc = cli_main(["path", "--ensemble", "missing.json", "--eps", "0.5"])
    assert rc == 1
    assert "not found" in capsys.readouterr().err


def test_cli_bad_flag_exits_one():
    with pytest.raises(SystemExit) as err:
        cli_main(["threshold", "--no-such-flag"])
    assert err.value.code == 1


def test_cli_bad_schedule_exits_one():
    with pytest.raises(SystemExit) as err:
        cli_main(["threshold", "--ensemble", "x.json", "--schedule", "bogus"])
    assert err.value.code == 1


def test_cli_simulate_and_compare(tmp_path, capsys):
    args = [
        "--ensemble", str(ENSEMBLES / "ra.json"), "--eps", "0.55",
        "--N", "2000", "--trials", "12", "--resolution", "16", "--seed", "3",
    ]
    rc = cli_main(["simulate", *args, "--out", str(tmp_path)])
    assert rc == 0
    assert "success rate" in capsys.readouterr().out
    # generous tolerance passes ...
    rc = cli_main(["compare", *args, "--tol", "0.5"])
    assert rc == 0
    capsys.readouterr()
    # ... an absurd one fails with exit 3
    rc = cli_main(["compare", *args, "--tol", "1e-9"])
    assert rc == 3
    assert "FAIL" in capsys.readouterr().out


def test_cli_malformed_ensemble(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("nu = r1*x1^2 ; mu = x1^2*x2")
    rc = cli_main(["analyze", "--ensemble", str(bad)])
    assert rc == 1
    assert "socket balance" in capsys.readouterr().err


def test_cli_accepts_polynomial_text_file(tmp_path, capsys):
    poly = tmp_path / "ra.txt"
    poly.write_text("nu = r1*x1^2 + 1/3*r0*x2^3 ; mu = x1^2*x2\n")
    rc = cli_main(["analyze", "--ensemble", str(poly)])
    assert rc == 0
    assert "E_1/N = 2" in capsys.readouterr().out


def test_cli_computation_error_exits_two(monkeypatch, capsys):
    import metpeel.cli as cli
    from metpeel.pathsim import MonotonicityError

    def boom(*a, **k):
        raise MonotonicityError("sweep was not monotone")

    monkeypatch.setattr(cli, "find_threshold", boom)
    rc = cli.main(["threshold", "--ensemble", str(ENSEMBLES / "ra.json")])
    assert rc == 2
    assert "computation failed" in capsys.readouterr().err
