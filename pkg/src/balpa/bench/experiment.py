"""
Config-driven experiment runs: races on the equality-constrained Lasso,
distributed regression runs, and log-log slope fits of traces.

Config files are INI-style (``configparser``)::

    [experiment]
    problem = lasso_eq          ; lasso_eq | qp
    n = 200
    m = 10
    p1 = 20
    p2 = 20
    target_normDD = 1000, 1000000
    sigma = 1.0
    seed = 0
    tol = 1e-6
    max_epochs = 100000
    out = results

    [solver balpa]
    kind = balpa
    gamma = 1.0                 ; alpha defaults to 1/L

    [solver cv]
    kind = condat_vu
    beta = auto                 ; 1/target_normDD
    alpha_factor = 1.0          ; alpha = factor/(beta ||D^T D|| + L)

A ``[distributed]`` section configures the multi-agent run instead.
"""

from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, field

import numpy as np

from balpa.bench.datasets import parse_libsvm, synthetic_classification
from balpa.bench.generators import gen_dist_regression, gen_lasso_eq, gen_qp
from balpa.opcore import kkt_oracle, lift_problem
from balpa.solvers import (SOLVER_KINDS, DivergenceError, Reference, SolverConfig, StepsizeError,
                           epochs_to_tolerance, run, write_trace_csv)
from balpa.stochastic import make_estimator


class ConfigError(ValueError):
    pass


@dataclass
class SolverSpec:
    name: str
    kind: str
    alpha: float | None = None          # None: the rule for `kind`
    alpha_factor: float = 1.0
    beta: float | None = None           # None: 1/target_normDD
    gamma: float = 1.0
    estimator: str = "full"


@dataclass
class DistSpec:
    dataset: str | None = None          # LIBSVM path; synthetic data when None
    n_samples: int = 500
    n_features: int = 20
    kind: str = "logistic"
    topology: str = "ring"              # ring | path | star | path to a topology file
    N: int = 10
    p1: int = 1
    alpha: float = 0.25
    gamma: float = 0.5
    estimator: str = "full"
    max_rounds: int = 20000


@dataclass
class ExperimentConfig:
    problem: str = "lasso_eq"
    params: dict = field(default_factory=dict)
    targets: tuple = (1e3,)
    solvers: list = field(default_factory=list)
    tol: float = 1e-6
    max_epochs: float | None = None
    max_iter: int = 10 ** 7
    seed: int = 0
    out: str = "results"
    dist: DistSpec | None = None


_LASSO_KEYS = {"n": int, "m": int, "p1": int, "p2": int, "sigma": float}
_QP_KEYS = {"n": int, "p2": int}


def _floats(text):
    return tuple(float(t) for t in text.replace(",", " ").split())


def load_config(path):
    """
    Parse an experiment config file.

    Raises
    ------
    ConfigError
        On unreadable files, unknown problems or solvers, and bad values.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return config_from_parser(cp)


def config_from_parser(cp):
    try:
        return _config_from_parser(cp)
    except (KeyError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad config value: {exc}") from None


def _config_from_parser(cp):
    ex = cp["experiment"] if cp.has_section("experiment") else {}
    cfg = ExperimentConfig()
    cfg.problem = ex.get("problem", "lasso_eq")
    keys = {"lasso_eq": _LASSO_KEYS, "qp": _QP_KEYS}.get(cfg.problem)
    if keys is None and not cp.has_section("distributed"):
        raise ConfigError(f"unknown problem {cfg.problem!r}; expected lasso_eq or qp")
    cfg.params = {k: conv(ex[k]) for k, conv in (keys or {}).items() if k in ex}
    if "target_normDD" in ex or "target_normdd" in ex:
        cfg.targets = _floats(ex.get("target_normDD", ex.get("target_normdd")))
    cfg.tol = float(ex.get("tol", cfg.tol))
    if "max_epochs" in ex:
        cfg.max_epochs = float(ex["max_epochs"])
    cfg.max_iter = int(float(ex.get("max_iter", cfg.max_iter)))
    cfg.seed = int(ex.get("seed", cfg.seed))
    cfg.out = ex.get("out", cfg.out)
    for sec in cp.sections():
        if not sec.startswith("solver"):
            continue
        s = cp[sec]
        name = sec.split(None, 1)[1] if " " in sec else s.get("kind", "balpa")
        kind = s.get("kind", name)
        if kind not in SOLVER_KINDS:
            raise ConfigError(f"solver {name!r}: unknown kind {kind!r}; known: {SOLVER_KINDS}")
        alpha = s.get("alpha", "auto")
        beta = s.get("beta", "auto")
        cfg.solvers.append(SolverSpec(
            name=name, kind=kind,
            alpha=None if alpha == "auto" else float(alpha),
            alpha_factor=float(s.get("alpha_factor", 1.0)),
            beta=None if beta == "auto" else float(beta),
            gamma=float(s.get("gamma", 1.0)),
            estimator=s.get("estimator", "full")))
    if cp.has_section("distributed"):
        d = cp["distributed"]
        spec = DistSpec()
        for key, conv in (("dataset", str), ("n_samples", int), ("n_features", int),
                          ("kind", str), ("topology", str), ("N", int), ("p1", int),
                          ("alpha", float), ("gamma", float), ("estimator", str),
                          ("max_rounds", int)):
            if key in d:
                setattr(spec, key, conv(d[key]))
        if spec.kind not in ("logistic", "linear"):
            raise ConfigError(f"distributed kind must be logistic or linear, got {spec.kind!r}")
        cfg.dist = spec
    elif not cfg.solvers:
        raise ConfigError("config lists no [solver ...] sections")
    return cfg


#%% INSTANCES

def build_instance(cfg, target):
    """Lifted problem, the L of the stepsize rule, and a reference solution."""
    p = dict(cfg.params)
    if cfg.problem == "qp":
        inst = gen_qp(p.get("n", 50), p.get("p2", 10), seed=cfg.seed,
                      D_scale=math.sqrt(target) / (math.sqrt(p.get("n", 50)) + math.sqrt(p.get("p2", 10))))
        lp = lift_problem(inst.problem())
        x, lam = kkt_oracle(inst.H, inst.c, inst.D, inst.d)
        return lp, lp.F.L, Reference(x=x, Lambda=lam, phi=lp.objective(x))
    inst = gen_lasso_eq(p.get("n", 200), p.get("m", 10), p.get("p1", 20), p.get("p2", 20),
                        target, seed=cfg.seed, sigma=p.get("sigma", 1.0))
    lp = lift_problem(inst.problem())
    L = inst.step_L
    return lp, L, reference_solution(lp, L)


def reference_solution(lp, L, tol=1e-12, max_iter=10 ** 6):
    """High-accuracy BALPA run (fixed-point residual below `tol`)."""
    rep, _ = run(lp, None, SolverConfig(alpha=1.0 / L, gamma=1.0, tol=tol, max_iter=max_iter,
                                        stop_metric="fixed_point_residual", trace_every=1000))
    X = rep.state.X
    return Reference(x=X[:lp.n].copy(), Lambda=rep.state.Lambda.copy(), phi=lp.objective(X))


def solver_config(spec, lp, L, target, cfg, trace_every=1):
    if spec.kind == "balpa":
        alpha = spec.alpha if spec.alpha is not None else spec.alpha_factor / L
        return SolverConfig(kind="balpa", alpha=alpha, gamma=spec.gamma, tol=cfg.tol,
                            max_iter=cfg.max_iter, max_epochs=cfg.max_epochs,
                            trace_every=trace_every)
    beta = spec.beta if spec.beta is not None else 1.0 / target
    if spec.alpha is not None:
        alpha = spec.alpha
    else:
        alpha = spec.alpha_factor / (beta * float(lp.Dop.norm_sq()) + L)
    return SolverConfig(kind=spec.kind, alpha=alpha, beta=beta, tol=cfg.tol,
                        max_iter=cfg.max_iter, max_epochs=cfg.max_epochs, trace_every=trace_every)


#%% RACES

@dataclass
class RunOutcome:
    solver: str
    target: float
    status: str                 # converged | DNF
    epochs: float | None
    detail: str = ""

    @property
    def dnf(self):
        return self.status != "converged"


def run_experiment(cfg, trace_every=1, log=None):
    """
    Run every solver on every ``||D^T D||`` target and write

    - ``<out>/case_<k>/<solver>.csv``, the per-iteration trace,
    - ``<out>/case_<k>/plot/<solver>.dat``, epoch vs relative error,
    - ``<out>/plot.gp``, a gnuplot driver for the curves,
    - ``<out>/summary.txt``, epochs to tolerance per solver and target.

    Divergence and exhausted budgets are recorded as DNF; a stepsize that
    violates the solver's convergence condition raises ConfigError.

    Returns
    -------
    list of RunOutcome
    """
    os.makedirs(cfg.out, exist_ok=True)
    outcomes, curves = [], []
    for k, target in enumerate(cfg.targets, start=1):
        case_dir = os.path.join(cfg.out, f"case_{k}")
        os.makedirs(os.path.join(case_dir, "plot"), exist_ok=True)
        lp, L, ref = build_instance(cfg, target)
        for spec in cfg.solvers:
            sc = solver_config(spec, lp, L, target, cfg, trace_every)
            est = None
            if spec.kind == "balpa" and spec.estimator != "full":
                est = make_estimator(spec.estimator, lp.F, seed=cfg.seed)
            try:
                rep, trace = run(lp, None, sc, estimator=est, reference=ref)
            except DivergenceError as exc:
                outcomes.append(RunOutcome(spec.name, target, "DNF", None, str(exc)))
                continue
            except StepsizeError as exc:
                raise ConfigError(f"solver {spec.name!r}: {exc}") from None
            write_trace_csv(os.path.join(case_dir, f"{spec.name}.csv"), trace)
            dat = os.path.join(case_dir, "plot", f"{spec.name}.dat")
            write_plot_data(dat, [r.epoch_equivalent for r in trace],
                            [r.relative_error for r in trace])
            curves.append((os.path.relpath(dat, cfg.out), f"{spec.name} case {k}"))
            ep = epochs_to_tolerance(trace, cfg.tol) if rep.converged else None
            status = "converged" if ep is not None else "DNF"
            outcomes.append(RunOutcome(spec.name, target, status, ep, rep.status))
            if log is not None:
                log(f"{spec.name} target={target:g}: {status} epochs={ep}")
    write_summary(os.path.join(cfg.out, "summary.txt"), outcomes, cfg.targets)
    write_gnuplot(os.path.join(cfg.out, "plot.gp"), curves)
    return outcomes


def write_summary(path, outcomes, targets):
    """Solvers as rows, one epochs column per target."""
    names = list(dict.fromkeys(o.solver for o in outcomes))
    table = {(o.solver, o.target): o for o in outcomes}
    head = ["solver"] + [f"normDD={t:g}" for t in targets]
    rows = [head]
    for name in names:
        row = [name]
        for t in targets:
            o = table.get((name, t))
            row.append("-" if o is None else "DNF" if o.dnf else f"{o.epochs:g}")
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
    with open(path, "w") as fh:
        for r in rows:
            fh.write("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() + "\n")


def write_plot_data(path, xs, ys):
    with open(path, "w") as fh:
        for x, y in zip(xs, ys):
            if y is not None and x > 0 and y > 0:
                fh.write(f"{float(x)!r} {float(y)!r}\n")


def write_gnuplot(path, curves, xlabel="epochs", ylabel="relative error"):
    lines = ["set logscale xy", f'set xlabel "{xlabel}"', f'set ylabel "{ylabel}"',
             'set key outside']
    if curves:
        parts = [f'"{f}" using 1:2 with lines title "{t}"' for f, t in curves]
        lines.append("plot " + ", \\\n     ".join(parts))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


#%% DISTRIBUTED

def dist_problems(spec, seed):
    from balpa.distributed import path_graph, read_topology, ring_graph, star_graph

    if spec.dataset:
        ds = parse_libsvm(spec.dataset)
    else:
        ds = synthetic_classification(spec.n_samples, spec.n_features, seed=seed)
    builders = {"ring": ring_graph, "path": path_graph, "star": star_graph}
    if spec.topology in builders:
        topo = builders[spec.topology](spec.N)
    else:
        topo = read_topology(spec.topology)
    problems = gen_dist_regression(ds, topo.N, spec.p1, spec.kind, seed=seed)
    return problems, topo


def run_dist_experiment(cfg, trace_every=1):
    """
    Distributed run against the centralized reference; writes
    ``<out>/dist.csv`` (standard columns plus consensus_violation and
    messages_sent) and ``<out>/plot/dist.dat``.
    """
    from balpa.distributed import DIST_EXTRA_COLUMNS, DistConfig, centralized_problem, run_distributed

    spec = cfg.dist
    problems, topo = dist_problems(spec, cfg.seed)
    lp = lift_problem(centralized_problem(problems))
    ref = reference_solution(lp, lp.F.L)
    dc = DistConfig(alpha=spec.alpha, gamma=spec.gamma, max_rounds=spec.max_rounds, tol=cfg.tol,
                    estimator=spec.estimator, seed=cfg.seed, trace_every=trace_every)
    net, trace = run_distributed(problems, topo, dc, x_star=ref.x)
    os.makedirs(os.path.join(cfg.out, "plot"), exist_ok=True)
    recs = [t[0] for t in trace]
    extra = {c: [t[1][c] for t in trace] for c in DIST_EXTRA_COLUMNS}
    write_trace_csv(os.path.join(cfg.out, "dist.csv"), recs, extra=extra)
    write_plot_data(os.path.join(cfg.out, "plot", "dist.dat"), [r.iter for r in recs],
                    [r.relative_error for r in recs])
    write_gnuplot(os.path.join(cfg.out, "plot.gp"), [("plot/dist.dat", "distributed BALPA")],
                  xlabel="rounds")
    last = trace[-1]
    converged = (last[0].relative_error is not None and last[0].relative_error <= cfg.tol
                 and last[1]["consensus_violation"] <= cfg.tol)
    return RunOutcome("balpa_dist", 0.0, "converged" if converged else "DNF",
                      float(net.round) if converged else None), net, trace


#%% RATES

def _column(trace, name):
    if isinstance(trace, dict):
        return np.asarray(trace[name], dtype=float)
    return np.array([np.nan if getattr(r, name) is None else getattr(r, name) for r in trace],
                    dtype=float)


def slope_fit(trace, x_field="iter", y_field="ergodic_gap", window=None, samples=50):
    """
    Least-squares slope of ``log y`` against ``log x`` over a tail window.

    Points are resampled at `samples` log-spaced abscissae so that the dense
    end of the window does not dominate the fit.

    Parameters
    ----------
    trace : list of TraceRecord, or dict of columns
    window : (lo, hi), optional
        Range of `x_field`; defaults to the last decade of the trace.

    Raises
    ------
    ValueError
        If the window holds fewer than 10 points or a nonpositive value.
    """
    x, y = _column(trace, x_field), _column(trace, y_field)
    if window is None:
        hi = np.nanmax(x)
        window = (hi / 10.0, hi)
    lo, hi = window
    sel = (x >= lo) & (x <= hi) & ~np.isnan(y)
    if np.sum(sel) < 10:
        raise ValueError(f"window [{lo:g}, {hi:g}] holds {int(np.sum(sel))} points; need at least 10")
    xs, ys = x[sel], y[sel]
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("slope_fit needs positive values in the window")
    lx, ly = np.log(xs), np.log(ys)
    order = np.argsort(lx)
    lx, ly = lx[order], ly[order]
    if lx.size > samples:
        grid = np.linspace(lx[0], lx[-1], samples)
        ly = np.interp(grid, lx, ly)
        lx = grid
    slope, _ = np.polyfit(lx, ly, 1)
    return float(slope)
