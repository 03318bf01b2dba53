import csv
import json

import pytest
import yaml

from quantmdp.cli import main

SMALL = {
    "quantizer": {"k": 8},
    "samples": {"samples_per_bin": 200, "occupation": 5000, "burn_in": 500},
    "reference": {"k_ref": 128, "samples_per_bin": 200, "occupation": 5000},
    "sweep": {"ks": [4, 8, 16]},
    "learning": {"iterations": 20_000, "lengths": [2000], "model_occupation": 20_000,
                 "model_samples_per_bin": 200},
}


def write_cfg(tmp_path, data, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return str(p)


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def run(tmp_path, command, data, out="out", extra=()):
    cfg = write_cfg(tmp_path, data)
    return main([command, "--config", cfg, "--out", str(tmp_path / out), *extra])


def test_design_lyapunov_and_explicit(tmp_path):
    assert run(tmp_path, "design", {"quantizer": {"k": 16}}) == 0
    row = read_csv(tmp_path / "out" / "design.csv")[0]
    # alpha = 0.5, b = 3 at beta = 0.9, x0 = 0: C = 2.7 / 0.55
    assert float(row["half_width"]) == pytest.approx((16 * 2.7 / 0.55) ** 0.5)
    side = json.loads((tmp_path / "out" / "design.json").read_text())
    assert side["config"]["quantizer"]["k"] == 16 and "numpy" in side["versions"]
    assert run(tmp_path, "design", {"quantizer": {"mode": "explicit", "k": 5,
                                                  "half_width": 2.5}}, out="o2") == 0
    row = read_csv(tmp_path / "o2" / "design.csv")[0]
    assert (row["k"], row["half_width"]) == ("5", "2.5")


def test_schema_errors(tmp_path, capsys):
    assert run(tmp_path, "design", {"quantizer": {"k": 0}}) == 2
    assert "quantizer.k" in capsys.readouterr().err
    assert run(tmp_path, "design", {"quantiser": {"k": 4}}) == 2
    assert run(tmp_path, "design", {"quantizer": {"mode": "explicit"}}) == 2
    assert run(tmp_path, "sweep", {"sweep": {"ks": [4, 8]}}) == 2
    assert main(["design", "--config", str(tmp_path / "missing.yaml")]) == 2


def test_solve_single_state(tmp_path):
    data = {"benchmark": {"name": "constant_cost", "params": {"c": 0.5, "beta": 0.8}},
            "quantizer": {"mode": "explicit", "k": 2, "half_width": 1.0},
            "samples": {"samples_per_bin": 10}}
    assert run(tmp_path, "solve", data) == 0
    summary = read_csv(tmp_path / "out" / "solve_summary.csv")[0]
    assert float(summary["value"]) == pytest.approx(2.5, abs=1e-7)


def test_solve_absorbing_zero(tmp_path):
    # odd k puts a midpoint representative exactly at 0
    data = {"benchmark": {"name": "absorbing_zero"},
            "quantizer": {"mode": "explicit", "k": 5, "half_width": 2.0},
            "samples": {"samples_per_bin": 10}}
    assert run(tmp_path, "solve", data) == 0
    assert float(read_csv(tmp_path / "out" / "solve_summary.csv")[0]["value"]) == 0.0


def test_solve_convergence_error_exit_code(tmp_path, capsys):
    data = {"benchmark": {"name": "constant_cost", "params": {"beta": 0.99999}},
            "quantizer": {"mode": "explicit", "k": 2, "half_width": 1.0},
            "samples": {"samples_per_bin": 5}}
    assert run(tmp_path, "solve", data) == 3
    assert "residual=" in capsys.readouterr().err


def test_learn_zero_cost_and_default(tmp_path):
    data = dict(SMALL, benchmark={"name": "zero_cost"})
    assert run(tmp_path, "learn", data) == 0
    for row in read_csv(tmp_path / "out" / "learn.csv"):
        assert float(row["gap_qlearning_vs_empirical"]) == 0.0
        assert float(row["gap_qlearning_vs_weighted"]) == 0.0
    assert run(tmp_path, "learn", SMALL, out="o2") == 0
    rows = read_csv(tmp_path / "o2" / "learn.csv")
    assert [int(r["length"]) for r in rows] == [2000, 20_000]


def test_learn_single_state(tmp_path):
    data = dict(SMALL, benchmark={"name": "constant_cost", "params": {"c": 1.0, "beta": 0.5}},
                quantizer={"mode": "explicit", "k": 2, "half_width": 1.0})
    assert run(tmp_path, "learn", data) == 0
    rows = read_csv(tmp_path / "out" / "learn.csv")
    assert float(rows[-1]["gap_empirical_vs_weighted"]) <= 1e-7
    q = json.loads((tmp_path / "out" / "learn.json").read_text())["tables"]["learn"]["meta"]["q"]
    assert q[1] == pytest.approx([2.0, 2.0], abs=0.05)


def test_synthetic_sweep_recovers_slope(tmp_path):
    data = {"sweep": {"ks": [4, 8, 16, 32], "synthetic": {"exponent": -0.5, "scale": 2.0}}}
    assert run(tmp_path, "sweep", data) == 0
    fit = read_csv(tmp_path / "out" / "sweep_fit.csv")[0]
    assert fit["quantity"] == "expected_loss"
    assert float(fit["slope"]) == pytest.approx(-0.5, abs=1e-12)
    assert float(fit["theory_slope"]) == -0.5


def test_sweep_rows_and_dominance(tmp_path):
    assert run(tmp_path, "sweep", SMALL) == 0
    rows = read_csv(tmp_path / "out" / "sweep.csv")
    assert [int(r["k"]) for r in rows] == [4, 8, 16]
    for r in rows:
        assert float(r["abs_err"]) <= float(r["bound"]) + 3 * float(r["abs_err_se"])
        assert r["overflow_ok"] == "true"
    quantities = {r["quantity"] for r in read_csv(tmp_path / "out" / "sweep_fit.csv")}
    assert {"expected_loss", "abs_err"} <= quantities


def test_oracle_unstable_exit_code(tmp_path, capsys):
    data = dict(SMALL, reference=dict(SMALL["reference"], tolerance=1e-9))
    assert run(tmp_path, "compare", data) == 4
    assert "unstable" in capsys.readouterr().err


def test_compare_and_determinism(tmp_path):
    assert run(tmp_path, "compare", SMALL, out="a") == 0
    assert run(tmp_path, "compare", SMALL, out="b", extra=("--jobs", "2")) == 0
    a = (tmp_path / "a" / "compare.csv").read_bytes()
    assert a == (tmp_path / "b" / "compare.csv").read_bytes()
    rows = {r["route"]: r for r in read_csv(tmp_path / "a" / "compare.csv")}
    assert float(rows["learning"]["bound_ratio"]) == pytest.approx(4 / 3, rel=1e-12)
    for r in rows.values():
        assert 0 <= float(r["gap"]) <= float(r["bound"])


def test_compare_one_bin_routes_coincide(tmp_path):
    # with the exploration-weighted planning model both routes estimate one number
    data = dict(SMALL, quantizer={"mode": "explicit", "k": 1, "half_width": 5.0,
                                  "weighting": "empirical"},
                samples={"samples_per_bin": 5000, "occupation": 50_000, "burn_in": 500},
                learning=dict(SMALL["learning"], iterations=100_000))
    assert run(tmp_path, "compare", data) == 0
    rows = {r["route"]: r for r in read_csv(tmp_path / "out" / "compare.csv")}
    # Monte Carlo noise only: 1% of c_sup / (1 - beta)
    assert float(rows["planning"]["value_x0"]) == pytest.approx(
        float(rows["learning"]["value_x0"]), abs=0.11)


def test_verify_and_seed_override(tmp_path):
    assert run(tmp_path, "verify", SMALL, extra=("--seed", "3")) == 0
    rows = read_csv(tmp_path / "out" / "verify.csv")
    assert {r["check"] for r in rows} == {"drift", "overflow", "median"}
    assert all(r["passed"] == "true" for r in rows)
    assert json.loads((tmp_path / "out" / "verify.json").read_text())["seed"] == 3


def test_average_criterion_needs_minorization(tmp_path):
    assert run(tmp_path, "solve", {"criterion": "average"}) == 2
    data = {"criterion": "average", "benchmark": {"name": "linear_gaussian_minorized"},
            "samples": {"samples_per_bin": 100}}
    assert run(tmp_path, "solve", data) == 0
