import csv
import io
import json
import math

import pytest

from rsbcs import ConfigError, Status
from rsbcs.cli import main, parse_config

STATUSES = {s.value for s in Status}


def _write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data) if not isinstance(data, str) else data, encoding="utf-8")
    return str(p)


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


BASE = {"ensemble": "iid", "r": 2, "penalty": "l2", "s": 0.1, "lambda": 0.01, "lambda0": 0.01}


def test_predict_l2(tmp_path, capsys):
    code = main(["predict", "--config", _write(tmp_path, BASE)])
    out = capsys.readouterr().out
    assert code == 0
    assert out.startswith("solver,lambda,rate,chi,q,p,mu,xi,f,w,D,D_dB,status,iterations\r\n")
    (row,) = _rows(out)
    assert row["solver"] == "rs" and row["status"] == "Converged"
    assert float(row["D"]) == pytest.approx(0.0548180128, abs=1e-9)
    assert float(row["D_dB"]) == pytest.approx(10 * math.log10(float(row["D"]) / 0.1), abs=1e-12)


def test_predict_both_solvers_to_file(tmp_path):
    out = tmp_path / "o.csv"
    code = main(["predict", "--config", _write(tmp_path, dict(BASE, solver=["rs", "rsb1"])), "--out", str(out)])
    assert code == 0
    rows = _rows(out.read_text())
    assert [r["solver"] for r in rows] == ["rs", "rsb1"]
    assert float(rows[1]["p"]) == 0.0
    assert float(rows[1]["D"]) == pytest.approx(float(rows[0]["D"]), abs=1e-8)
    assert all(v != "" for r in rows for v in r.values())


def test_malformed_json(tmp_path, capsys):
    assert main(["predict", "--config", _write(tmp_path, '{"r": 2,,}')]) == 2
    assert "malformed JSON" in capsys.readouterr().err


@pytest.mark.parametrize(
    "patch,key",
    [
        ({"lamda": 0.1}, "lamda"),
        ({"sweep": {"variable": "rate", "grid": [1, 2], "gird": 1}}, "sweep.gird"),
        ({"sim": {"n": 10, "seeds": 1}}, "sim.seeds"),
        ({"quadrature": {"n": 10}}, "quadrature.n"),
    ],
)
def test_unknown_keys_are_named(tmp_path, capsys, patch, key):
    assert main(["predict", "--config", _write(tmp_path, dict(BASE, **patch))]) == 2
    assert f"'{key}'" in capsys.readouterr().err


@pytest.mark.parametrize(
    "patch,key",
    [({"r": "two"}, "r"), ({"penalty": "l3"}, "penalty"), ({"s": 0}, "s"), ({"solver": "mc"}, "solver")],
)
def test_bad_values_are_named(tmp_path, capsys, patch, key):
    assert main(["predict", "--config", _write(tmp_path, dict(BASE, **patch))]) == 2
    assert f"'{key}'" in capsys.readouterr().err


def test_empty_solver_set(tmp_path, capsys):
    cfg = dict(BASE, solver=[], sweep={"variable": "lambda", "grid": [0.1, 0.2]})
    assert main(["sweep", "--config", _write(tmp_path, cfg)]) == 2
    assert "empty" in capsys.readouterr().err


def test_strict_flags_invalid_zero_norm_point(tmp_path, capsys):
    cfg = _write(tmp_path, dict(BASE, r=4, penalty="l0", **{"lambda": 0.3}))
    assert main(["predict", "--config", cfg, "--strict"]) == 3
    capsys.readouterr()
    assert main(["predict", "--config", cfg]) == 0
    (row,) = _rows(capsys.readouterr().out)
    assert row["status"] in STATUSES - {"Converged"}
    assert row["D"] == "nan"


def test_sweep_rows_in_grid_order(tmp_path):
    out = tmp_path / "s.csv"
    cfg = dict(BASE, penalty="l1", solver=["rs"], sweep={"variable": "lambda", "grid": [0.05, 0.1, 0.4]})
    assert main(["sweep", "--config", _write(tmp_path, cfg), "--out", str(out), "--jobs", "2"]) == 0
    rows = _rows(out.read_text())
    assert [float(r["lambda"]) for r in rows] == [0.05, 0.1, 0.4]
    assert {r["status"] for r in rows} <= STATUSES


def test_rate_sweep_records_argmin_lambda(tmp_path):
    out = tmp_path / "s.csv"
    cfg = dict(BASE, penalty="l1", sweep={"variable": "rate", "grid": [1.5, 2.5],
                                          "minimize_lambda": {"grid": {"start": 0.02, "stop": 1, "num": 7}}})
    cfg.pop("lambda")
    assert main(["sweep", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 0
    rows = _rows(out.read_text())
    assert [float(r["rate"]) for r in rows] == [1.5, 2.5]
    for r in rows:
        assert 0.02 < float(r["lambda"]) < 1


def test_tabulated_ensemble_path_is_relative_to_config(tmp_path, capsys):
    (tmp_path / "spec.csv").write_text("eigenvalue,mass\n0,0.5\n2,0.5\n")
    tab = dict(BASE, ensemble={"kind": "tabulated", "path": "spec.csv"})
    assert main(["predict", "--config", _write(tmp_path, tab)]) == 0
    (a,) = _rows(capsys.readouterr().out)
    assert main(["predict", "--config", _write(tmp_path, dict(BASE, ensemble="projector"), "p.json")]) == 0
    (b,) = _rows(capsys.readouterr().out)
    assert float(a["D"]) == pytest.approx(float(b["D"]), abs=1e-9)


def test_simulate_size_error(tmp_path, capsys):
    cfg = dict(BASE, penalty="l0", sim={"n": 50, "trials": 1, "seed": 1})
    assert main(["simulate", "--config", _write(tmp_path, cfg)]) == 2
    assert "n <= 20" in capsys.readouterr().err


def test_simulate_outputs(tmp_path):
    cfg = dict(BASE, penalty="l1", **{"lambda": 0.1}, sim={"n": 80, "trials": 3, "seed": 12345})
    out = tmp_path / "sim.csv"
    assert main(["simulate", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 0
    summary = json.loads((tmp_path / "sim.json").read_text(encoding="utf-8"))
    assert summary["seed"] == 12345
    assert summary["wall_clock_seconds"] >= 0
    assert len(_rows(out.read_text())) == 3


def test_parse_grids():
    rc = parse_config(dict(BASE, sweep={"variable": "lambda", "grid": {"start": 0.2, "stop": 3, "step": 0.05}}))
    g = rc.sweep.grid
    assert len(g) == 57 and g[0] == 0.2 and g[-1] == 3.0
    with pytest.raises(ConfigError, match="strictly increasing"):
        parse_config(dict(BASE, sweep={"variable": "lambda", "grid": [0.3, 0.2]}))
    with pytest.raises(ConfigError, match="empty"):
        parse_config(dict(BASE, sweep={"variable": "lambda", "grid": []}))
    with pytest.raises(ConfigError, match="lambda"):
        parse_config({k: v for k, v in BASE.items() if k != "lambda"})
