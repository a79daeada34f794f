import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from matchopt.cli import CONFIG_DIR, main, parse_config, resolve_workers
from matchopt.cost_model import PamDgp
from matchopt.experiments import build_market, true_cost_matrix
from matchopt.ot_core import Coupling, kl_divergence, marginal_residual
from matchopt.tables import read_coupling, read_rows


def _write_matrix(path, m, header=True):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow([f"w{j}" for j in range(len(m[0]))])
        w.writerows(m)
    return str(path)


def _summary(out):
    return json.loads((out / "summary.json").read_text())


# ---- solve

def test_solve_two_by_two_assignment(tmp_path):
    cost = _write_matrix(tmp_path / "c.csv", [[0, 1], [1, 0]])
    assert main(["solve", cost, "--eta-inverse", "0", "--out", str(tmp_path / "o")]) == 0
    s = _summary(tmp_path / "o")
    assert s["assignment"] == [0, 1] and s["welfare"] == 0.0 and s["converged"]
    mix = read_rows(tmp_path / "o" / "mixture.csv")
    assert mix[0] == ["component", "weight", "x_index", "w_index"]


def test_solve_constant_matrix_uniform(tmp_path):
    cost = _write_matrix(tmp_path / "c.csv", [[0.3] * 4] * 4)
    for eta_inv in ("0.01", "1"):
        out = tmp_path / eta_inv
        assert main(["solve", cost, "--eta-inverse", eta_inv, "--out", str(out)]) == 0
        s = _summary(out)
        assert s["kl"] == pytest.approx(0.0, abs=1e-12)
        pi = read_coupling(out / "coupling.csv")
        np.testing.assert_allclose(pi.mass, 1 / 16, rtol=1e-12)
        assert s["lemma1"]["holds"]


def test_solve_pam_grid_welfare_bracket(tmp_path):
    c = true_cost_matrix(PamDgp(), build_market(PamDgp(), 100)).values
    cost = _write_matrix(tmp_path / "c.csv", c.tolist())
    assert main(["solve", cost, "--eta-inverse", "0", "--out", str(tmp_path / "opt")]) == 0
    assert main(["solve", cost, "--eta-inverse", "0.002", "--out", str(tmp_path / "rot")]) == 0
    opt, rot = _summary(tmp_path / "opt"), _summary(tmp_path / "rot")
    assert opt["welfare"] <= rot["welfare"] <= rot["random_welfare"]
    assert rot["relative_duality_gap"] <= 1e-6
    assert rot["bvn"]["components"] >= 1


def test_solve_round_trip_coupling(tmp_path):
    rng = np.random.default_rng(0)
    cost = _write_matrix(tmp_path / "c.csv", rng.random((12, 12)).tolist(), header=False)
    assert main(["solve", cost, "--eta-inverse", "0.05", "--out", str(tmp_path / "o")]) == 0
    pi = read_coupling(tmp_path / "o" / "coupling.csv")
    assert isinstance(pi, Coupling)
    assert pi.is_feasible()
    assert kl_divergence(pi) == pytest.approx(_summary(tmp_path / "o")["kl"], rel=1e-15)
    f_g = read_rows(tmp_path / "o" / "potentials.csv")
    assert f_g[0] == ["index", "f", "g"] and len(f_g[1]) == 12


def test_solve_floats_round_trip_exactly(tmp_path):
    rng = np.random.default_rng(1)
    cost = _write_matrix(tmp_path / "c.csv", rng.random((5, 5)).tolist())
    main(["solve", cost, "--eta-inverse", "0.1", "--out", str(tmp_path / "o")])
    pi = read_coupling(tmp_path / "o" / "coupling.csv")
    again = tmp_path / "again.csv"
    from matchopt.tables import write_matrix
    write_matrix(again, pi.mass)
    assert again.read_bytes() == (tmp_path / "o" / "coupling.csv").read_bytes()


@pytest.mark.parametrize("rows", [
    [["a", "b"], ["0", "x"], ["1", "0"]],
    [["a", "b"], ["0", "1", "2"], ["1", "0"]],
    [["a", "b", "c"], ["0", "1", "0"], ["1", "0", "0"]],
    [["a"]],
])
def test_solve_malformed_input_exit_2(tmp_path, rows, capsys):
    path = tmp_path / "bad.csv"
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    assert main(["solve", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "error:" in capsys.readouterr().err


def test_solve_out_of_range_costs(tmp_path):
    cost = _write_matrix(tmp_path / "c.csv", [[0, 5], [3, 0]])
    assert main(["solve", cost, "--out", str(tmp_path / "o")]) == 2
    assert main(["solve", cost, "--normalize", "--eta-inverse", "0.1", "--out", str(tmp_path / "n")]) == 0
    s = _summary(tmp_path / "n")
    assert s["normalized"] and "welfare_input_scale" in s
    assert main(["solve", cost, "--c-bar", "5", "--out", str(tmp_path / "b")]) == 0


def test_solve_nonconvergence_exit_3(tmp_path):
    rng = np.random.default_rng(2)
    cost = _write_matrix(tmp_path / "c.csv", rng.random((30, 30)).tolist())
    assert main(["solve", cost, "--eta-inverse", "0.002", "--max-iter", "2", "--out", str(tmp_path / "o")]) == 3
    s = _summary(tmp_path / "o")
    assert s["converged"] is False
    assert (tmp_path / "o" / "coupling.csv").exists()


# ---- heatmap

def test_heatmap_uniform_flat(tmp_path):
    from matchopt.tables import write_matrix
    write_matrix(tmp_path / "u.csv", Coupling.uniform(5).mass)
    assert main(["heatmap", str(tmp_path / "u.csv"), "--out", str(tmp_path / "h.csv"),
                 "--svg", str(tmp_path / "h.svg")]) == 0
    header, body = read_rows(tmp_path / "h.csv")
    assert header == ["x_index", "w_index", "mass"]
    assert len(body) == 25 and {float(r[2]) for r in body} == {1 / 25}
    assert body[0][2] == "0.040000000000000001"  # 17 significant digits
    svg = (tmp_path / "h.svg").read_text()
    assert svg.count("<rect") == 25 and len(set(l.split('fill="')[1] for l in svg.splitlines() if "<rect" in l)) == 1


def _support(mass, n):
    return int(np.sum(mass > 1e-6 / n**2))


def test_heatmap_pam_plans(tmp_path):
    c = true_cost_matrix(PamDgp(), build_market(PamDgp(), 40)).values
    cost = _write_matrix(tmp_path / "c.csv", c.tolist())
    supports = {}
    for eta_inv in ("0", "0.002", "0.01"):
        out = tmp_path / eta_inv
        assert main(["solve", cost, "--eta-inverse", eta_inv, "--out", str(out)]) == 0
        assert main(["heatmap", str(out / "coupling.csv"), "--out", str(out / "long.csv")]) == 0
        pi = read_coupling(out / "long.csv")
        supports[eta_inv] = _support(pi.mass, 40)
        if eta_inv == "0":
            np.testing.assert_array_equal(pi.mass, np.eye(40) / 40)
    assert supports["0.01"] > supports["0.002"] > supports["0"]


def test_heatmap_malformed(tmp_path):
    (tmp_path / "neg.csv").write_text("a,b\n-0.1,0.6\n0.25,0.25\n")
    assert main(["heatmap", str(tmp_path / "neg.csv"), "--out", str(tmp_path / "h.csv")]) == 2
    (tmp_path / "long.csv").write_text("x_index,w_index,mass\n0,0,0.5\n0,0,0.5\n1,1,0\n1,0,0\n")
    assert main(["heatmap", str(tmp_path / "long.csv"), "--out", str(tmp_path / "h.csv")]) == 2
    (tmp_path / "short.csv").write_text("x_index,w_index,mass\n0,0,1\n0,1,0\n")
    assert main(["heatmap", str(tmp_path / "short.csv"), "--out", str(tmp_path / "h.csv")]) == 2


# ---- calibrate

def test_calibrate_prints_coefficients(capsys):
    assert main(["calibrate", "--gamma", "0.06"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["gamma"] == 0.06 and max(abs(r) for r in out["anchor_residuals"]) <= 1e-10
    assert main(["calibrate"]) == 0
    assert [d["gamma"] for d in json.loads(capsys.readouterr().out)] == [0.02, 0.06, 0.10]
    assert main(["calibrate", "--gamma", "0.9"]) == 2


# ---- experiment config

def test_bundled_pam_config_structure():
    _, configs, _ = parse_config(CONFIG_DIR / "pam_example.toml")
    (cfg,) = configs
    assert cfg.dgp_kind == "pam" and cfg.market_size == 100
    assert cfg.training_sizes == (500, 5000, 50000, 500000)
    assert cfg.repetitions == 30 and len(cfg.eta_inverse_grid) >= 2


def test_bundled_logistic_config_structure():
    _, configs, _ = parse_config(CONFIG_DIR / "logistic_example.toml")
    assert [c.gamma for c in configs] == [0.02, 0.06, 0.10]
    assert all(c.market_size == 200 and c.repetitions == 20 for c in configs)


@pytest.mark.parametrize("text, line, fragment", [
    ('dgp = "pam"\nrepetitions = \n', 2, "invalid TOML"),
    ('dgp = "pam"\nmarket_size = 10\nrepetitions = 0\n', 3, "repetitions"),
    ('dgp = "pam"\n\nfoo = 1\n', 3, "unknown key"),
    ('dgp = "pam"\nrepetitions = "ten"\n', 2, "repetitions must be int"),
    ('dgp = "pam"\n[estimator]\nkind = "xgb"\n', 3, "xgb"),
    ('dgp = "pam"\n[estimator]\ndepth = 3\n', 3, "unknown estimator key"),
    ('market_size = 10\n', 1, "missing required key"),
    ('dgp = "pam"\ngamma = 0.02\n', 2, "only to dgp"),
    ('dgp = "logistic"\ngamma = [0.02, 0.8]\n', 2, "gamma"),
    ('dgp = "pam"\neta_inverse = [0.0, -1.0]\n', 2, "eta_inverse"),
    ('dgp = "pam"\ntraining_sizes = [500, "x"]\n', 2, "training_sizes"),
])
def test_config_schema_errors_are_line_anchored(tmp_path, capsys, text, line, fragment):
    path = tmp_path / "cfg.toml"
    path.write_text(text)
    assert main(["experiment", str(path), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert f"cfg.toml:{line}:" in err and fragment in err
    assert not (tmp_path / "o").exists()


def test_reps_override_zero_rejected(tmp_path):
    path = tmp_path / "cfg.toml"
    path.write_text('dgp = "pam"\n')
    assert main(["experiment", str(path), "--reps", "0", "--out", str(tmp_path / "o")]) == 2


def test_workers_resolution(monkeypatch):
    monkeypatch.delenv("MATCHOPT_WORKERS", raising=False)
    assert resolve_workers(None) == 1
    assert resolve_workers(None, 3) == 3
    monkeypatch.setenv("MATCHOPT_WORKERS", "2")
    assert resolve_workers(None, 3) == 2
    assert resolve_workers(4) == 4
    monkeypatch.setenv("MATCHOPT_WORKERS", "many")
    with pytest.raises(ValueError):
        resolve_workers(None)


# ---- experiment runs

SMALL_CONFIG = """
dgp = "logistic"
gamma = [0.02, 0.06]
market_size = 20
eta_inverse = [0.0, 0.01]
training_sizes = [300, 1000]
repetitions = 2
mc_draws = 500

[estimator]
n_rounds = 15
"""


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("exp")
    cfg = root / "cfg.toml"
    cfg.write_text(SMALL_CONFIG)
    assert main(["experiment", str(cfg), "--out", str(root / "a")]) == 0
    return root, cfg


def test_experiment_outputs(small_run):
    root, _ = small_run
    out = root / "a"
    names = {p.name for p in out.iterdir()}
    assert {"summary.csv", "runs.csv", "manifest.json", "plot_relative_gain_vs_N.csv",
            "plot_absolute_gain_by_gamma.csv"} <= names
    assert sum(n.startswith("heatmap_") for n in names) == 4
    header, body = read_rows(out / "runs.csv")
    assert header[:5] == ["policy", "dgp", "gamma", "N", "eta_inverse"]
    feasible = [r for r in body if r[0] == "feasible"]
    assert len(feasible) == 2 * 2 * 2 * 2
    header, body = read_rows(out / "plot_absolute_gain_by_gamma.csv")
    assert {r[1] for r in body} == {"0.02", "0.059999999999999998"}


def test_experiment_manifest_complete(small_run):
    root, _ = small_run
    out = root / "a"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["version"] and "Philox" in manifest["prng"]
    assert manifest["started_at"] <= manifest["finished_at"]
    cells = {}
    for cell in manifest["cells"]:
        cells[(cell["policy"], cell["gamma"], cell["N"], cell["eta_inverse"])] = cell
    header, body = read_rows(out / "runs.csv")
    idx = {k: header.index(k) for k in ("policy", "gamma", "N", "eta_inverse", "repetition")}

    def _num(text, kind):
        return None if text == "" else kind(text)

    for row in body:
        key = (row[idx["policy"]], _num(row[idx["gamma"]], float), _num(row[idx["N"]], int),
               float(row[idx["eta_inverse"]]))
        assert key in cells
        assert _num(row[idx["repetition"]], int) in cells[key]["repetitions"]
    header, body = read_rows(out / "summary.csv")
    for row in body:
        key = (row[0], _num(row[2], float), _num(row[3], int), float(row[4]))
        assert key in cells
    import hashlib
    for name, digest in manifest["files"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest


def test_experiment_bit_identical_rerun(small_run, monkeypatch):
    root, cfg = small_run
    monkeypatch.setenv("MATCHOPT_WORKERS", "2")
    assert main(["experiment", str(cfg), "--out", str(root / "b")]) == 0
    for path in (root / "a").glob("*.csv"):
        assert path.read_bytes() == (root / "b" / path.name).read_bytes(), path.name


def test_experiment_heatmap_file_feeds_heatmap_command(small_run, tmp_path):
    root, _ = small_run
    plan = next((root / "a").glob("heatmap_*etainv0.01.csv"))
    assert main(["heatmap", str(plan), "--out", str(tmp_path / "h.csv"), "--svg", str(tmp_path / "h.svg")]) == 0
    assert marginal_residual(read_coupling(tmp_path / "h.csv")) <= 1e-9


def test_experiment_overrides_and_oracle_only(tmp_path):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text('dgp = "pam"\nmarket_size = 10\noracle_only = true\n')
    out = tmp_path / "o"
    assert main(["experiment", str(cfg), "--out", str(out), "--eta-inverse", "0,0.05",
                 "--seed", "3", "--tol", "1e-10", "--max-iter", "5000"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["resolved_configs"][0]["eta_inverse_grid"] == [0.0, 0.05]
    assert manifest["resolved_configs"][0]["base_seed"] == 3
    _, body = read_rows(out / "runs.csv")
    assert {r[0] for r in body} == {"oracle"} and len(body) == 2


def test_experiment_nonconvergence_exit_3(tmp_path):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text('dgp = "pam"\nmarket_size = 30\noracle_only = true\neta_inverse = [0.002]\nmax_iter = 1\n')
    assert main(["experiment", str(cfg), "--out", str(tmp_path / "o")]) == 3
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["cells"][0]["n_nonconverged"] == 1


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "matchopt", "calibrate", "--gamma", "0.1"],
                          capture_output=True, text=True, check=True)
    assert json.loads(proc.stdout)["gamma"] == 0.1
