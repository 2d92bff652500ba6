import csv
import io
import json
import math

import numpy as np
import pytest

from regimedefault import cli, market
from regimedefault.market import save_spec


def run(tmp_path, *argv):
    out = tmp_path / "out"
    code = cli.main([*argv, "--out", str(out)])
    return code, out


def rows(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


def write_spec(tmp_path, spec, name="spec.json"):
    p = tmp_path / name
    p.write_text(save_spec(spec))
    return str(p)


# --- price --------------------------------------------------------------------

def test_price_terminal_row(tmp_path):
    code, out = run(tmp_path, "price", "--preset", "table1", "--grid-steps", "200")
    assert code == 0
    table = rows(out)
    assert len(table) == 201
    assert list(table[0]) == ["t", "psi_1", "psi_2", "theta_1", "theta_2", "d_1", "d_2", "m_1", "m_2"]
    assert float(table[-1]["psi_1"]) == 1.0 and float(table[-1]["psi_2"]) == 1.0
    assert float(table[-1]["t"]) == 2.0


def test_price_single_regime_closed_form(tmp_path):
    spec = market.MarketSpec(r=[0.03], mu=[0.07], sigma=[0.2], h=[0.1], loss=[0.4],
                             gen_p=[[0.0]], gen_q=[[0.0]], maturity=2.0, horizon=2.0)
    code, out = run(tmp_path, "price", "--spec", write_spec(tmp_path, spec), "--grid-steps", "100")
    assert code == 0
    table = rows(out)
    assert "psi_2" not in table[0]
    for r in table:
        t = float(r["t"])
        assert float(r["psi_1"]) == pytest.approx(math.exp(-0.07 * (2.0 - t)), rel=1e-12)


def test_malformed_json_exit_2_no_file(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"r": [0.03,, 0.03]}')
    code, out = run(tmp_path, "price", "--spec", str(bad))
    assert code == 2 and not out.exists()
    assert "line 1" in capsys.readouterr().err


def test_invalid_spec_lists_violations(tmp_path, capsys):
    doc = json.loads(save_spec(market.table1()))
    doc["sigma"] = [0.0, 0.2]
    p = tmp_path / "s.json"
    p.write_text(json.dumps(doc))
    code, out = run(tmp_path, "solve", "--spec", str(p))
    assert code == 2 and not out.exists()
    assert "sigma[1]" in capsys.readouterr().err


def test_needs_exactly_one_source(tmp_path):
    assert cli.main(["price", "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["price", "--preset", "nope", "--out", str(tmp_path / "o")]) == 2


# --- solve --------------------------------------------------------------------

def test_solve_table1(tmp_path):
    code, out = run(tmp_path, "solve", "--preset", "table1")
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["schema_version"] == 1
    np.testing.assert_allclose(doc["stock_frac"], [1.0, -0.25], atol=1e-15)
    diag = doc["diagnostics"]
    assert diag["residual_post"] <= 1e-6 and diag["residual_pre"] <= 1e-6
    assert diag["residual_foc"] <= 1e-10
    curves = rows(tmp_path / "out_curves.csv")
    assert list(curves[0]) == ["t", "K_1", "K_2", "J_1", "J_2", "p_1", "p_2"]
    assert len(curves) == len(doc["t"])


def test_solve_no_default(tmp_path):
    spec = market.table1(h=(0.0, 0.0))
    code, out = run(tmp_path, "solve", "--spec", write_spec(tmp_path, spec), "--grid-steps", "400")
    assert code == 0
    doc = json.loads(out.read_text())
    assert np.all(np.array(doc["p"]) == 0.0)
    np.testing.assert_allclose(doc["J"], doc["K"], atol=1e-12)


def test_solver_failure_exit_3(tmp_path, capsys):
    spec = market.table1(h=(0.5, 0.05), loss=(1.0, 0.4), h_hist=(0.0, 0.05))
    code, out = run(tmp_path, "solve", "--spec", write_spec(tmp_path, spec), "--grid-steps", "20")
    assert code == 3 and not out.exists()
    assert "regime 1" in capsys.readouterr().err


def test_outputs_byte_identical(tmp_path):
    for cmd in (["price"], ["solve"], ["sweep", "--sweep", "h2:0.05:0.5:4"]):
        a = tmp_path / "a"
        b = tmp_path / "b"
        assert cli.main([*cmd, "--preset", "table1", "--grid-steps", "200", "--out", str(a)]) == 0
        assert cli.main([*cmd, "--preset", "table1", "--grid-steps", "200", "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()


# --- simulate -----------------------------------------------------------------

def test_simulate_report_and_determinism(tmp_path):
    argv = ["simulate", "--preset", "table1", "--grid-steps", "400", "--paths", "2000",
            "--seed", "3", "--regime", "1"]
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert cli.main([*argv, "--out", str(a)]) == 0
    assert cli.main([*argv, "--out", str(b), "--paths-csv", str(tmp_path / "p.csv")]) == 0
    assert a.read_bytes() == b.read_bytes()
    doc = json.loads(a.read_text())
    (res,) = doc["results"]
    assert res["regime"] == 1 and res["n_paths"] == 2000
    assert res["z_score"] == pytest.approx((res["mean_log_wealth"] - res["target"]) / res["stderr"])
    assert abs(res["z_score"]) <= 3
    assert len((tmp_path / "p.csv").read_text().splitlines()) == 2001


def test_simulate_too_few_paths(tmp_path):
    code, out = run(tmp_path, "simulate", "--preset", "table1", "--paths", "10")
    assert code == 2 and not out.exists()


# --- sweep --------------------------------------------------------------------

def test_unknown_axis_exit_2(tmp_path):
    code, out = run(tmp_path, "sweep", "--preset", "table1", "--sweep", "kappa:0:1:3")
    assert code == 2 and not out.exists()


def test_sweep_20_by_20(tmp_path):
    code, out = run(tmp_path, "sweep", "--preset", "table1", "--sweep", "h1:0.05:0.5:20",
                    "--sweep", "h2:0.05:0.5:20", "--outputs", "p,psi", "--grid-steps", "200")
    assert code == 0
    table = rows(out)
    assert len(table) == 400
    assert list(table[0])[:3] == ["h1", "h2", "t"]


def test_fig3_merton_column_exact(tmp_path):
    code, out = run(tmp_path, "sweep", "--preset", "fig3", "--grid-steps", "300")
    assert code == 0
    spec = market.from_dict(cli.load_preset("fig3")["spec"])
    zeta = spec.zeta
    for r in rows(out):
        t = float(r["t"])
        for i in range(2):
            assert float(r[f"merton_{i + 1}"]) == zeta[i] * (spec.horizon - t)


def test_fig1_diagonal_ordering(tmp_path):
    """Stated ordering p_1 >= p_2 on the h1 = h2 diagonal of the fig1 preset.

    Kept as stated; it fails for the model as solved (see the decisions ledger).
    """
    code, out = run(tmp_path, "sweep", "--preset", "fig1", "--grid-steps", "200")
    assert code == 0
    diag = [r for r in rows(out) if r["h1"] == r["h2"]]
    assert len(diag) == 10
    bad = [(r["h1"], r["p_1"], r["p_2"]) for r in diag if float(r["p_1"]) < float(r["p_2"])]
    assert not bad, f"p_1 < p_2 on {len(bad)}/10 diagonal rows, e.g. {bad[0]}"
