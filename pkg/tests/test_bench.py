import dataclasses
import math
import os

import numpy as np
import pytest
from numpy import linalg as la

from balpa.bench import experiment
from balpa.bench.datasets import (Dataset, LibsvmFormatError, parse_libsvm,
                                  synthetic_classification, write_libsvm)
from balpa.bench.experiment import (ConfigError, ExperimentConfig, SolverSpec, load_config,
                                    run_dist_experiment, run_experiment, slope_fit)
from balpa.bench.generators import gen_dist_regression, gen_lasso_eq, gen_qp
from balpa.bench.problems import LinearRegressionSum, LogisticSum
from balpa.cli import EXIT_CONFIG, EXIT_DNF, EXIT_OK, main
from balpa.distributed import centralized_problem
from balpa.opcore import load_matrix
from balpa.solvers import read_trace_csv

QP_CONFIG = """\
[experiment]
problem = qp
n = 12
p2 = 3
target_normDD = 1, 1000
seed = 2
tol = 1e-6
out = {out}

[solver balpa]
kind = balpa

[solver cv]
kind = condat_vu
alpha_factor = 1.0
"""


# generators

def test_lasso_instance_shape_and_scale():
    inst = gen_lasso_eq(200, m=10, p1=20, p2=20, target_normDD=1e3, seed=0)
    assert inst.A.shape == (10, 400, 200) and inst.B.shape == (20, 200) and inst.D.shape == (20, 200)
    assert 950 <= la.norm(inst.D, 2) ** 2 <= 1050


def test_lasso_deterministic_per_seed():
    a, b = gen_lasso_eq(30, 3, 4, 5, 10.0, seed=7), gen_lasso_eq(30, 3, 4, 5, 10.0, seed=7)
    for name in ("A", "a", "B", "D", "d"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()
    c = gen_lasso_eq(30, 3, 4, 5, 10.0, seed=8)
    assert not np.array_equal(a.A, c.A)


def test_lasso_solution_set_independent_of_target():
    one, two = gen_lasso_eq(20, 2, 3, 4, 1.0, seed=1), gen_lasso_eq(20, 2, 3, 4, 1e6, seed=1)
    x = la.lstsq(one.D, one.d, rcond=None)[0]
    np.testing.assert_allclose(two.D @ x, two.d, rtol=1e-9)


def test_lasso_rejects_bad_sizes():
    with pytest.raises(ValueError):
        gen_lasso_eq(0)
    with pytest.raises(ValueError):
        gen_lasso_eq(5, target_normDD=-1.0)


def test_qp_generator():
    inst = gen_qp(8, 3, seed=0)
    assert la.eigvalsh(inst.H)[0] >= 0.5 - 1e-12
    assert la.matrix_rank(inst.D) == 3
    assert inst.problem().n == 8


# datasets

def test_libsvm_examples(tmp_path):
    path = tmp_path / "d.svm"
    path.write_text("+1 1:0.5 3:2\n-1\n")
    ds = parse_libsvm(path)
    assert ds.n_features >= 3 and list(ds.labels) == [1.0, -1.0]
    np.testing.assert_array_equal(ds.samples.toarray(), [[0.5, 0.0, 2.0], [0.0, 0.0, 0.0]])
    (tmp_path / "bad.svm").write_text("1 0:5\n")
    with pytest.raises(LibsvmFormatError, match="must be >= 1"):
        parse_libsvm(tmp_path / "bad.svm")
    (tmp_path / "bad2.svm").write_text("1 2:x\n")
    with pytest.raises(LibsvmFormatError, match=":1:"):
        parse_libsvm(tmp_path / "bad2.svm")
    with pytest.raises(OSError):
        parse_libsvm(tmp_path / "missing.svm")


def test_libsvm_roundtrip(tmp_path):
    ds = synthetic_classification(40, 7, seed=3)
    write_libsvm(tmp_path / "s.svm", ds)
    back = parse_libsvm(tmp_path / "s.svm", n_features=7)
    np.testing.assert_array_equal(back.samples.toarray(), ds.samples.toarray())
    np.testing.assert_array_equal(back.labels, ds.labels)


def test_synthetic_classification():
    ds = synthetic_classification(400, 10, positive=0.25, seed=0)
    X = ds.samples.toarray()
    assert np.all(X[:, 0] == 1.0) and set(np.unique(X)) <= {0.0, 1.0}
    assert abs(np.mean(ds.labels == 1.0) - 0.25) < 0.01


def test_logistic_gradient_at_zero():
    a, b = np.array([[2.0, -1.0, 0.5]]), np.array([-1.0])
    f = LogisticSum(a, b, ridge=1.0)
    np.testing.assert_allclose(f.gradient(np.zeros(3)), -b[0] * a[0] / 2)


def test_linear_gradient_termwise():
    rng = np.random.default_rng(0)
    A, b, x = rng.standard_normal((5, 3)), rng.standard_normal(5), rng.standard_normal(3)
    f = LinearRegressionSum(A, b, ridge=1.0)
    np.testing.assert_allclose(f.gradient(x), A.T @ (A @ x - b) / 5 + x)
    comp = sum(f.component_gradient(j, x) for j in range(5)) / 5
    np.testing.assert_allclose(comp, f.gradient(x))


def test_dist_regression_shards_and_single_agent():
    ds = synthetic_classification(23, 4, seed=1)
    agents = gen_dist_regression(ds, 5, 2, "linear", seed=0)
    assert [a.f.m for a in agents] == [4, 4, 4, 4, 7]
    assert all(a.B.shape == (2, 4) for a in agents)
    one = gen_dist_regression(ds, 1, 2, "logistic", seed=0)
    cp = centralized_problem(one)
    x = np.random.default_rng(0).standard_normal(4)
    direct = LogisticSum(ds.samples, ds.labels).value(x) + 0.5 * la.norm(one[0].B @ x)
    assert cp.objective(x) == pytest.approx(direct, rel=1e-12)
    with pytest.raises(ValueError, match="empty agent shard"):
        gen_dist_regression(ds, 30, 1)


# slope fits

def test_slope_fit_exact_power_laws():
    k = np.arange(1, 10001, dtype=float)
    assert abs(slope_fit({"iter": k, "g": 1 / k}, "iter", "g") + 1.0) < 1e-6
    assert abs(slope_fit({"iter": k, "g": k ** -0.5}, "iter", "g", (10, 1e4)) + 0.5) < 1e-6


def test_slope_fit_errors():
    k = np.arange(1, 101, dtype=float)
    with pytest.raises(ValueError, match="positive"):
        slope_fit({"iter": k, "g": k - 50}, "iter", "g", (1, 100))
    with pytest.raises(ValueError, match="need at least 10"):
        slope_fit({"iter": k, "g": 1 / k}, "iter", "g", (1, 5))


# experiments

def write_config(tmp_path, text=QP_CONFIG):
    out = tmp_path / "out"
    path = tmp_path / "exp.ini"
    path.write_text(text.format(out=out))
    return path, out


def test_load_config(tmp_path):
    path, out = write_config(tmp_path)
    cfg = load_config(path)
    assert cfg.problem == "qp" and cfg.targets == (1.0, 1000.0) and cfg.params == {"n": 12, "p2": 3}
    assert [s.kind for s in cfg.solvers] == ["balpa", "condat_vu"]
    assert cfg.solvers[1].beta is None and cfg.out == str(out)


@pytest.mark.parametrize("text, match", [
    ("[experiment]\nproblem = svm\n", "unknown problem"),
    ("[experiment]\nproblem = qp\n", "no \\[solver"),
    ("[experiment]\nproblem = qp\n[solver x]\nkind = sgd\n", "unknown kind"),
    ("[experiment]\nproblem = qp\nn = many\n[solver x]\nkind = balpa\n", "bad config value"),
    ("[experiment\n", "cannot read"),
])
def test_config_errors(tmp_path, text, match):
    path = tmp_path / "bad.ini"
    path.write_text(text)
    with pytest.raises(ConfigError, match=match):
        load_config(path)


def test_infinite_tolerance_gives_zero_epochs(tmp_path):
    cfg = ExperimentConfig(problem="qp", params={"n": 6, "p2": 2}, tol=math.inf,
                           solvers=[SolverSpec("balpa", "balpa")], out=str(tmp_path))
    [o] = run_experiment(cfg)
    assert o.epochs == 0 and not o.dnf
    assert (tmp_path / "summary.txt").read_text().split("\n")[1].split() == ["balpa", "0"]


def test_race_artifacts_and_restart_safety(tmp_path):
    path, out = write_config(tmp_path)
    cfg = load_config(path)
    outcomes = run_experiment(cfg)
    assert all(not o.dnf for o in outcomes)
    names = sorted(os.listdir(out))
    assert names == ["case_1", "case_2", "plot.gp", "summary.txt"]
    for case in ("case_1", "case_2"):
        assert sorted(os.listdir(out / case)) == ["balpa.csv", "cv.csv", "plot"]
    # summary epochs agree with the trace epoch column at the crossing
    for o, case in zip(outcomes, ["case_1", "case_1", "case_2", "case_2"]):
        cols = read_trace_csv(out / case / f"{o.solver}.csv")
        first = np.argmax(cols["relative_error"] <= cfg.tol)
        assert cols["epochs"][first] == o.epochs
    snapshot = {p: p.read_bytes() for p in out.rglob("*.dat")}
    snapshot[out / "summary.txt"] = (out / "summary.txt").read_bytes()
    run_experiment(load_config(path))
    for p, data in snapshot.items():
        assert p.read_bytes() == data
    gp = (out / "plot.gp").read_text()
    assert "set logscale xy" in gp and "case_2/plot/cv.dat" in gp


DIVERGENT = QP_CONFIG.replace("alpha_factor = 1.0", "alpha = 50.0\nbeta = 10.0").replace(
    "target_normDD = 1, 1000", "target_normDD = 1")


def test_noncompliant_stepsize_is_config_error(tmp_path):
    path, _ = write_config(tmp_path, DIVERGENT)
    with pytest.raises(ConfigError, match="'cv'"):
        run_experiment(load_config(path))


def test_divergent_solver_recorded_as_dnf(tmp_path, monkeypatch):
    path, out = write_config(tmp_path, DIVERGENT)
    plain = experiment.solver_config
    monkeypatch.setattr(experiment, "solver_config",
                        lambda *a, **k: dataclasses.replace(plain(*a, **k), check=False))
    outcomes = run_experiment(load_config(path))
    cv = [o for o in outcomes if o.solver == "cv"][0]
    assert cv.dnf and "exceeds" in cv.detail
    assert "DNF" in (out / "summary.txt").read_text()


def test_dist_experiment_writes_trace(tmp_path):
    text = (f"[experiment]\nseed = 0\ntol = 1e-6\nout = {tmp_path / 'o'}\n"
            "[distributed]\nn_samples = 60\nn_features = 4\nN = 3\np1 = 1\n"
            "alpha = 0.25\ngamma = 0.5\nmax_rounds = 3000\n")
    (tmp_path / "d.ini").write_text(text)
    cfg = load_config(tmp_path / "d.ini")
    outcome, net, trace = run_dist_experiment(cfg, trace_every=10)
    assert not outcome.dnf
    cols = read_trace_csv(tmp_path / "o" / "dist.csv")
    assert "consensus_violation" in cols and cols["messages_sent"][-1] == 6 * net.round
    assert (tmp_path / "o" / "plot" / "dist.dat").exists()


# CLI

def test_cli_gen_and_solve(tmp_path, capsys):
    path, out = write_config(tmp_path)
    assert main(["gen", "--config", str(path), "--seed", "5"]) == EXIT_OK
    H = load_matrix(out / "case_1" / "H.txt")
    np.testing.assert_array_equal(H, gen_qp(12, 3, seed=5).H)
    assert main(["solve", "--config", str(path), "--out", str(tmp_path / "s")]) == EXIT_OK
    assert "balpa: converged" in capsys.readouterr().out
    assert not (tmp_path / "s" / "case_2").exists()


def test_cli_race_slopes_and_exit_codes(tmp_path, capsys):
    path, out = write_config(tmp_path)
    assert main(["race", "--config", str(path), "--trace-every", "5"]) == EXIT_OK
    assert "normDD=1000" in capsys.readouterr().out
    assert main(["race", "--config", str(path), "--max-epochs", "3"]) == EXIT_DNF
    assert main(["race", "--config", str(tmp_path / "missing.ini")]) == EXIT_CONFIG
    k = np.arange(1, 200)
    trace = tmp_path / "t.csv"
    trace.write_text("iter,gap\n" + "".join(f"{i},{1.0 / float(i) ** 2!r}\n" for i in k))
    capsys.readouterr()
    assert main(["slopes", str(trace), "--y", "gap", "--window", "10", "199"]) == EXIT_OK
    assert float(capsys.readouterr().out) == pytest.approx(-2.0, abs=1e-6)
    assert main(["slopes", str(trace), "--y", "gap", "--window", "1", "5"]) == EXIT_CONFIG


def test_cli_dist_needs_section(tmp_path, capsys):
    path, _ = write_config(tmp_path)
    assert main(["dist", "--config", str(path)]) == EXIT_CONFIG
    assert "distributed" in capsys.readouterr().err


def test_dataset_type():
    ds = Dataset(samples=synthetic_classification(5, 3).samples, labels=np.ones(5))
    assert ds.n_samples == 5 and ds.n_features == 3


@pytest.mark.parametrize("name", ["lasso_race.ini", "dist_ring.ini"])
def test_shipped_configs_load(name):
    root = os.path.join(os.path.dirname(__file__), os.pardir, "configs")
    cfg = load_config(os.path.join(root, name))
    assert cfg.solvers or cfg.dist is not None
