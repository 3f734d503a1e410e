import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from mpql.cli import main, read_series


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _write(path, text):
    path.write_text(text)
    return path


@pytest.fixture
def sim_csv(tmp_path):
    out = tmp_path / "path.csv"
    assert main(["simulate", "--model", "logistic", "--steps", "1024", "--dt", "0.0009765625",
                 "--seed", "1", "-o", str(out)]) == 0
    return out


def test_simulate_logistic(sim_csv):
    rows = _rows(sim_csv)
    assert len(rows) == 1025
    v = np.array([float(r["value"]) for r in rows])
    assert np.all((v > 0) & (v < 1))


def test_simulate_bm_increment_std(tmp_path):
    out = tmp_path / "bm.csv"
    assert main(["simulate", "--model", "bm", "--sigma0", "3", "--steps", "20000", "--dt", "0.001",
                 "-o", str(out)]) == 0
    v = np.array([float(r["value"]) for r in _rows(out)])
    assert np.std(np.diff(v)) == pytest.approx(3 * np.sqrt(0.001), rel=0.03)


def test_simulate_requires_model(capsys):
    with pytest.raises(SystemExit) as info:
        main(["simulate"])
    assert info.value.code == 2
    assert "--model" in capsys.readouterr().err


def test_estimate_round_trip(sim_csv, tmp_path):
    out = tmp_path / "grid.csv"
    assert main(["estimate", str(sim_csv), "-o", str(out), "--grid-points", "51"]) == 0
    rows = _rows(out)
    assert len(rows) == 51
    sigma = np.array([float(r["sigma"]) for r in rows])
    assert np.all(np.isfinite(sigma) & (sigma > 0))
    report = json.loads((tmp_path / "grid.report.json").read_text())
    assert report["n"] == 1024 and report["m"] == 2
    assert report["residual_norm"] < 1e-10
    assert abs(report["first_order_residuals"]["z"]) < 1e-6
    assert abs(report["first_order_residuals"]["z^2"]) < 1e-6
    series = read_series(sim_csv)
    # levels carry the tie-breaking jitter, about 1e-4 times the return scale
    assert float(rows[0]["x"]) == pytest.approx(np.min(series.values[:-1]), abs=1e-4)


def test_estimate_constant_increments(tmp_path):
    # equal time steps and equal increments: |r| = 0.01 / sqrt(1/365.25)
    src = _write(tmp_path / "c.csv", "date,value\n2020-01-01,1.00\n2020-01-02,1.01\n2020-01-03,1.02\n2020-01-04,1.03\n")
    out = tmp_path / "g.csv"
    assert main(["estimate", str(src), "-o", str(out), "--m", "1", "--tie-noise", "0",
                 "--grid-points", "5"]) == 0
    sigma = np.array([float(r["sigma"]) for r in _rows(out)])
    np.testing.assert_allclose(sigma, 0.01 / np.sqrt(1 / 365.25), rtol=1e-10)


def test_estimate_lambda_kappa(tmp_path):
    rng = np.random.default_rng(0)
    t = np.arange(2867) / 252.0
    v = 1.3 + np.cumsum(rng.normal(0, 0.006, 2867))
    src = tmp_path / "fx.csv"
    with open(src, "w") as fh:
        fh.write("t,value\n")
        for a, b in zip(t, v):
            fh.write(f"{float(a)!r},{float(b)!r}\n")
    out = tmp_path / "g.csv"
    assert main(["estimate", str(src), "-o", str(out), "--lambda-kappa", "0.02", "--m", "2"]) == 0
    report = json.loads((tmp_path / "g.report.json").read_text())
    assert report["lambda"] == pytest.approx(0.02 * 2866 ** (-0.8), rel=1e-12)


def test_estimate_malformed_date(tmp_path, capsys):
    src = _write(tmp_path / "bad.csv", "date,value\n2020-01-01,1.0\n2020-13-45,1.1\n2020-01-03,1.2\n")
    assert main(["estimate", str(src)]) == 2
    assert "bad.csv:3" in capsys.readouterr().err


def test_estimate_missing_file(tmp_path):
    assert main(["estimate", str(tmp_path / "nope.csv")]) == 2


def test_estimate_solver_failure(sim_csv, capsys):
    assert main(["estimate", str(sim_csv), "--max-iter", "1", "--thinning", "1"]) == 3
    assert "hint" in capsys.readouterr().err


def test_calendar_gap(tmp_path):
    src = _write(tmp_path / "w.csv", "date,value\n2021-01-08,1\n2021-01-11,2\n")
    s = read_series(src)
    assert s.times[1] == pytest.approx(3 / 365.25, rel=1e-15)


def test_read_series_header(tmp_path):
    src = _write(tmp_path / "h.csv", "when,value\n0,1\n1,2\n")
    with pytest.raises(Exception, match="header"):
        read_series(src)


def test_estimate_determinism(sim_csv, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for out in (a, b):
        assert main(["estimate", str(sim_csv), "-o", str(out), "--report", str(out) + ".json"]) == 0
    assert a.read_bytes() == b.read_bytes()
    # the report names its input only, so the two reports match byte for byte too
    assert (tmp_path / "a.csv.json").read_bytes() == (tmp_path / "b.csv.json").read_bytes()


def test_vrtest_summary(capsys):
    assert main(["vrtest", "--std-a", "0.006457733", "--n-a", "2866",
                 "--std-b", "0.00675802", "--n-b", "624"]) == 0
    out = capsys.readouterr().out
    assert "statistic=1.095163" in out
    assert "reject_10pct=yes" in out and "reject_5pct=no" in out


def test_vrtest_identical(capsys):
    assert main(["vrtest", "--std-a", "0.01", "--n-a", "50", "--std-b", "0.01", "--n-b", "60"]) == 0
    assert "statistic=1.000000" in capsys.readouterr().out


def test_vrtest_incomplete_arguments():
    assert main(["vrtest", "--std-a", "0.01"]) == 2


def test_vrtest_weekend_series(tmp_path, capsys):
    # weekday increments N(0, 1e-4); weekend increments N(0, 2e-4): statistic near 2
    rng = np.random.default_rng(8)
    import datetime as dt
    day = dt.date(2000, 1, 3)
    value = 1.0
    lines = ["date,value"]
    for _ in range(6000):
        if day.weekday() < 5:
            lines.append(f"{day.isoformat()},{value!r}")
        nxt = day + dt.timedelta(days=1)
        while nxt.weekday() >= 5:
            nxt += dt.timedelta(days=1)
        gap = (nxt - day).days
        value += rng.normal(0, np.sqrt(1e-4 * (2 if gap > 1 else 1)))
        day = nxt
    src = _write(tmp_path / "wk.csv", "\n".join(lines) + "\n")
    assert main(["vrtest", "--input", str(src)]) == 0
    out = capsys.readouterr().out
    stat = float(out.split("statistic=")[1].split()[0])
    assert 1.7 < stat < 2.3


def test_study_cli(tmp_path):
    out, rep = tmp_path / "s.csv", tmp_path / "s.json"
    args = ["study", "--base-q", "10", "--q-min", "8", "--q-max", "10", "--m", "2", "-o", str(out), "--report", str(rep)]
    assert main(args) == 0
    first = out.read_bytes(), rep.read_bytes()
    assert main(args) == 0
    assert (out.read_bytes(), rep.read_bytes()) == first
    assert json.loads(rep.read_text())["kappa"] == 20.0
    assert len(_rows(out)) == 3


def test_console_entry_point(tmp_path):
    out = tmp_path / "p.csv"
    proc = subprocess.run([sys.executable, "-m", "mpql", "simulate", "--model", "bm", "--steps", "8",
                           "-o", str(out)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert len(_rows(out)) == 9
