import json

import numpy as np
import pytest

from ddflow.bench import (PHASES, ConfigError, RunConfig, RunReport, append_csv,
                          ordering_table, read_csv, rows_to_csv, run, scaling_sweep)
from ddflow.sparse import from_dense

SMALL = RunConfig(mesh=(20, 4, 4), subdomains=2, csv="")


def strip_times(row):
    return {k: v for k, v in row.items() if not k.endswith("_time")}


@pytest.fixture(scope="module")
def report():
    return run(SMALL)


def test_config_validation():
    for bad in ({"mesh": (0, 4, 4)}, {"re": -1.0}, {"lam": 0.0}, {"subdomains": 0},
                {"overlap": -1}, {"algorithm": "gmres"}, {"ordering": "amd"},
                {"alpha_interface": 0.0}, {"inner_tol": 0.0}, {"workers": 0},
                {"backend": "mpi"}, {"subdomains": 10 ** 6}):
        with pytest.raises(ConfigError):
            SMALL.replace(**bad)
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"mesh": [4, 4, 4], "colour": "red"})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"lam": 1.0, "lambda": 2.0})
    assert SMALL.replace(lam=1e5).lam == 1e5


def test_config_round_trip(tmp_path):
    d = SMALL.to_dict()
    assert d["lambda"] == SMALL.lam
    assert RunConfig.from_dict(d) == SMALL
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(d))
    assert RunConfig.from_json(p) == SMALL


def test_single_subdomain_run():
    rep = run(SMALL.replace(subdomains=1))
    assert rep.converged
    assert rep.totals["outer_iterations"] <= 8
    assert rep.diagnostics["divergence_norm"] <= 1e-4


def test_report_sums(report):
    assert report.converged and report.error is None
    for p in PHASES:
        assert report.totals[f"{p}_time"] == pytest.approx(
            sum(o[f"{p}_time"] for o in report.outer), rel=1e-12, abs=0)
    assert report.totals["inner_iterations"] == sum(o["inner_iterations"] for o in report.outer)
    assert report.totals["factorizations"] == sum(s["factorizations"] for s in report.subdomains)
    assert report.totals["factorizations"] == 2 * report.totals["outer_iterations"]
    assert report.max_factor_bytes == max(s["factor_bytes"] for s in report.subdomains)
    assert report.max_factor_nnz == max(s["nnz_lu"] for s in report.subdomains)
    for s in report.subdomains:
        assert s["factor_bytes"] == 16 * s["nnz_lu"]


def test_json_and_csv_round_trip(report, tmp_path):
    again = RunReport.from_json(report.to_json())
    assert again == report
    row = report.flat()
    path = tmp_path / "rows.csv"
    append_csv(path, [row])
    append_csv(path, [row])
    back = read_csv(path)
    assert back == [row, row]
    assert read_csv(rows_to_csv([row])) == [row]


def test_runs_are_deterministic(report):
    other = run(SMALL)
    assert strip_times(other.flat()) == strip_times(report.flat())
    assert [strip_times(o) for o in other.outer] == [strip_times(o) for o in report.outer]
    assert rows_to_csv([strip_times(other.flat())]) == rows_to_csv([strip_times(report.flat())])


def test_persistence(tmp_path):
    out = tmp_path / "run" / "report.json"
    rep = run(SMALL.replace(out=str(out), csv=None))
    assert RunReport.from_json(out.read_text()) == rep
    assert read_csv(out.with_suffix(".csv"))[0]["status"] == "converged"


def test_failures_become_statuses(tmp_path):
    rep = run(SMALL.replace(max_outer=2, out=str(tmp_path / "r.json")))
    assert rep.status == "not_converged"
    assert "NewtonNonConvergence" in rep.error
    assert len(rep.outer) == 2
    assert json.loads((tmp_path / "r.json").read_text())["status"] == "not_converged"


def test_mnas_factorization_counts():
    rows = scaling_sweep(SMALL.replace(algorithm="mnas"), [1, 2, 4], ("mnas",))
    assert [r["factorizations"] for r in rows] == [1, 2, 4]
    assert all(r["status"] == "converged" for r in rows)


def test_single_point_sweep_speedup():
    rows = scaling_sweep(SMALL, [1], ("nas",))
    assert [r["speedup"] for r in rows] == [1.0]


def test_ordering_table_trivial_matrices():
    diag = from_dense(np.diag(np.arange(1.0, 6.0)))
    rows = ordering_table([diag])
    assert [r["nnz_lu"] for r in rows] == [5, 5]
    dense = from_dense(np.random.default_rng(0).random((10, 10)) + 10 * np.eye(10))
    rows = ordering_table([dense])
    assert [r["nnz_lu"] for r in rows] == [100, 100]
    assert {r["ordering"] for r in rows} == {"md", "nd"}
