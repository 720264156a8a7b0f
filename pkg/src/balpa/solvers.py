"""
Primal-dual solvers on the lifted problem ``min F(X) + R(X) s.t. DX = d``.

All methods share the primal step

    Xbar = prox_R^a(X - a (D^T Lam + g))

and differ in the dual update and the correction. BALPA updates the dual by

    Lam+ = argmin_s  ||s - Lam||_Q^2 / 2 + <s, d - D Xbar>,   Q = I/gamma + a_bar D D^T

and corrects ``X+ = Xbar + a D^T (Lam - Lam+)``, so its stepsize condition
does not involve ``||D^T D||``.
"""

from __future__ import annotations

import csv
import math
import re
import time
from dataclasses import dataclass, field, replace

import numpy as np
from numpy import linalg as la
from scipy import linalg as sla

from balpa.stochastic import FullGradient, StepsizeSchedule, schedule_step


DIVERGENCE_THRESHOLD = 1e12
DENSE_LIMIT = 2000
CG_TOL = 1e-12

SOLVER_KINDS = ("balpa", "condat_vu", "tripd", "pd3o", "pdfp", "afba")
BASELINE_KINDS = SOLVER_KINDS[1:]
STOP_METRICS = ("relative_error_to_reference", "fixed_point_residual", "constraint_violation")


class IndefiniteMetricError(np.linalg.LinAlgError):
    """Cholesky factorization of the dual metric failed."""

    def __init__(self, pivot, msg=None):
        self.pivot = pivot
        super().__init__(msg or f"dual metric is not positive definite (pivot {pivot})")


class DualSolveError(RuntimeError):

    def __init__(self, residual, iterations):
        self.residual, self.iterations = residual, iterations
        super().__init__(f"CG dual solve stalled at relative residual {residual:.3e} "
                         f"after {iterations} iterations")


class MetricNotPositiveError(ValueError):
    pass


class StepsizeError(ValueError):
    pass


class DivergenceError(RuntimeError):

    def __init__(self, iteration, diagnosis):
        self.iteration, self.diagnosis = iteration, diagnosis
        super().__init__(f"diverged at iteration {iteration}: {diagnosis}")


#%% DUAL METRIC

def pcg(apply_A, b, diag, x0=None, tol=CG_TOL, max_iter=None):
    """
    Jacobi-preconditioned conjugate gradient for SPD systems.

    Returns
    -------
    x : ndarray
    rel_res : float
        ``||b - A x|| / ||b||``.
    iterations : int
    """
    n = b.size
    max_iter = 10 * n + 100 if max_iter is None else max_iter
    bnorm = la.norm(b)
    if bnorm == 0:
        return np.zeros(n), 0.0, 0
    x = np.zeros(n) if x0 is None else x0.copy()
    r = b - apply_A(x)
    z = r / diag
    p = z.copy()
    rz = r @ z
    for it in range(1, max_iter + 1):
        Ap = apply_A(p)
        a = rz / (p @ Ap)
        x += a * p
        r -= a * Ap
        if la.norm(r) <= tol * bnorm:
            # recompute the true residual to guard against drift
            r = b - apply_A(x)
            rel = la.norm(r) / bnorm
            if rel <= tol:
                return x, rel, it
        z = r / diag
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    rel = la.norm(b - apply_A(x)) / bnorm
    return x, rel, max_iter


class DualMetric:
    """
    Fixed SPD matrix ``Q`` of the dual update, factorized once.

    ``kind == "balpa"`` uses ``Q = I/gamma + alpha_bar D D^T``; the
    ``"block_preconditioner"`` kind takes an explicit ``Q``.
    """

    def __init__(self, Dop, alpha_bar, gamma, kind="balpa", Q=None,
                 dense_limit=DENSE_LIMIT, cg_tol=CG_TOL):
        if not alpha_bar > 0 or not gamma > 0:
            raise ValueError("alpha and gamma must be positive")
        self.Dop, self.alpha_bar, self.gamma, self.kind = Dop, float(alpha_bar), float(gamma), kind
        self.dim = Dop.rows
        self.cg_tol = cg_tol
        self._J_posdef = None
        self._Q_norm = None
        if Q is not None:
            self.Q = np.asarray(Q, dtype=float)
        elif self.dim <= dense_limit:
            self.Q = np.eye(self.dim) / self.gamma + self.alpha_bar * Dop.gram()
        else:
            self.Q = None
        if self.Q is not None:
            self._chol = _cholesky(self.Q)
        else:
            self._chol = None
            self._diag = 1.0 / self.gamma + self.alpha_bar * Dop.row_norms_sq()

    @property
    def dense(self):
        return self.Q is not None

    def apply_Q(self, lam):
        if self.Q is not None:
            return self.Q @ lam
        return lam / self.gamma + self.alpha_bar * self.Dop.apply(self.Dop.adjoint(lam))

    def solve(self, rhs):
        if self._chol is not None:
            return sla.cho_solve(self._chol, rhs)
        x, rel, it = pcg(self.apply_Q, rhs, self._diag, tol=self.cg_tol)
        if rel > self.cg_tol:
            raise DualSolveError(rel, it)
        return x

    def norm_sq(self, lam):
        """``||lam||_Q^2``."""
        return float(lam @ self.apply_Q(lam))

    def apply_J(self, lam, alpha=None):
        """``(Q - alpha D D^T) lam`` with `alpha` defaulting to `alpha_bar`."""
        alpha = self.alpha_bar if alpha is None else alpha
        return self.apply_Q(lam) - alpha * self.Dop.apply(self.Dop.adjoint(lam))

    def J_is_posdef(self):
        if self._J_posdef is None:
            if self.kind == "balpa":
                self._J_posdef = True
            else:
                J = self.Q - self.alpha_bar * self.Dop.gram()
                self._J_posdef = bool(la.eigvalsh(0.5 * (J + J.T))[0] > 0)
        return self._J_posdef

    def Q_norm(self):
        if self._Q_norm is None:
            if self.Q is not None:
                self._Q_norm = float(la.eigvalsh(self.Q)[-1])
            else:
                self._Q_norm = 1.0 / self.gamma + self.alpha_bar * float(self.Dop.norm_sq())
        return self._Q_norm


def _cholesky(Q):
    try:
        return sla.cho_factor(Q, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        m = re.search(r"(\d+)", str(exc))
        pivot = int(m.group(1)) if m else -1
        raise IndefiniteMetricError(pivot) from exc


def build_dual_metric(Dop, alpha, gamma, dense_limit=DENSE_LIMIT):
    """``Q = I/gamma + alpha D D^T``; dense Cholesky up to `dense_limit`, PCG above."""
    return DualMetric(Dop, alpha, gamma, kind="balpa", dense_limit=dense_limit)


def block_metric(Dop, alpha, gamma, Q):
    """Metric with an explicitly given preconditioner ``Q``."""
    return DualMetric(Dop, alpha, gamma, kind="block_preconditioner", Q=Q)


def dual_update(metric, Lambda_k, Dop, Xbar, dvec):
    """``Lam+ = Lam + Q^{-1} (D Xbar - d)``."""
    return Lambda_k + metric.solve(Dop.apply(Xbar) - dvec)


def dual_residual(metric, Lambda_k, Lambda_k1, r):
    """Relative optimality residual ``||Q (Lam+ - Lam) - r|| / (1 + ||r||)``."""
    return float(la.norm(metric.apply_Q(Lambda_k1 - Lambda_k) - r) / (1.0 + la.norm(r)))


#%% ITERATIONS

@dataclass(frozen=True)
class SaddleState:
    """
    One iterate: primal `X`, intermediate `Xbar` (the Xbar that produced `X`),
    dual `Lambda`. `grad_cache` is the gradient (or estimate) used in the
    step that produced this state; `grad_at_X` is ``grad F(X)`` when already
    known.
    """

    X: np.ndarray
    Xbar: np.ndarray
    Lambda: np.ndarray
    iter: int = 0
    grad_cache: np.ndarray | None = None
    grad_at_X: np.ndarray | None = None


def initial_state(lp, X0=None):
    X0 = np.zeros(lp.dim) if X0 is None else np.array(X0, dtype=float)
    if X0.shape != (lp.dim,):
        raise ValueError(f"X0 must have length {lp.dim}")
    return SaddleState(X=X0, Xbar=X0.copy(), Lambda=np.zeros(lp.dual_dim))


def balpa_step(state, lp, metric, alpha_k, g):
    """
    One iteration of the unified framework.

    Parameters
    ----------
    state : SaddleState
    lp : LiftedProblem
    metric : DualMetric
    alpha_k : float
        Primal stepsize, ``0 < alpha_k <= metric.alpha_bar``.
    g : ndarray
        (Stochastic) gradient of F at ``state.X``; its y-block is zero.
    """
    if not 0 < alpha_k <= metric.alpha_bar * (1 + 1e-12):
        raise StepsizeError(f"alpha_k = {alpha_k} outside (0, {metric.alpha_bar}]")
    Dop = lp.Dop
    Xbar = lp.R.prox(state.X - alpha_k * (Dop.adjoint(state.Lambda) + g), alpha_k)
    Lam1 = dual_update(metric, state.Lambda, Dop, Xbar, lp.dvec)
    X1 = Xbar + alpha_k * Dop.adjoint(state.Lambda - Lam1)
    return SaddleState(X=X1, Xbar=Xbar, Lambda=Lam1, iter=state.iter + 1, grad_cache=g)


def baseline_step(kind, state, lp, alpha, beta):
    """
    One iteration of a classic method with dual stepsize `beta`.

    C-V/TriPD and PD3O extrapolate ``Xhat = 2 Xbar - X (+ a (grad F(X) - grad F(Xbar)))``
    for the dual update and continue from ``Xbar``; PDFP re-applies the prox
    with the new dual; AFBA corrects with ``a D^T (Lam - Lam+)``.
    """
    if kind not in BASELINE_KINDS:
        raise ValueError(f"unknown baseline kind {kind!r}; known: {BASELINE_KINDS}")
    F, R, Dop, d = lp.F, lp.R, lp.Dop, lp.dvec
    X, Lam = state.X, state.Lambda
    gX = state.grad_at_X if state.grad_at_X is not None else F.gradient(X)
    DtLam = Dop.adjoint(Lam)
    Xbar = R.prox(X - alpha * (DtLam + gX), alpha)
    grad_next = None
    if kind in ("condat_vu", "tripd", "pd3o"):
        Xhat = 2.0 * Xbar - X
        if kind == "pd3o":
            grad_next = F.gradient(Xbar)
            Xhat += alpha * (gX - grad_next)
        Lam1 = Lam + beta * (Dop.apply(Xhat) - d)
        X1 = Xbar
    elif kind == "pdfp":
        Lam1 = Lam + beta * (Dop.apply(Xbar) - d)
        X1 = R.prox(X - alpha * (Dop.adjoint(Lam1) + gX), alpha)
    else:
        Lam1 = Lam + beta * (Dop.apply(Xbar) - d)
        X1 = Xbar + alpha * (DtLam - Dop.adjoint(Lam1))
    return SaddleState(X=X1, Xbar=Xbar, Lambda=Lam1, iter=state.iter + 1,
                       grad_cache=gX, grad_at_X=grad_next)


#%% STEPSIZE CONDITIONS

@dataclass(frozen=True)
class Verdict:
    satisfied: bool
    margin: float
    binding: str

    def __bool__(self):
        return self.satisfied


def check_stepsize(kind, alpha, beta=None, gamma=None, L=1.0, normDD=0.0):
    """
    Evaluate the convergence condition of `kind`.

    C-V/TriPD: ``a b ||D^T D|| + a L/2 < 1``; PD3O/PDFP/AFBA:
    ``a < 2/L`` and ``a b ||D^T D|| < 1``; BALPA: ``a < 2/L`` (and
    ``gamma > 0``). The margin is the signed slack of the binding
    inequality, positive iff satisfied.
    """
    conds = {"alpha > 0": alpha}
    if kind == "balpa":
        conds["alpha < 2/L"] = 2.0 / L - alpha
        if gamma is not None:
            conds["gamma > 0"] = gamma
    elif kind in ("condat_vu", "tripd"):
        conds["beta > 0"] = beta if beta is not None else -math.inf
        conds["alpha*beta*|DtD| + alpha*L/2 < 1"] = 1.0 - alpha * (beta or 0.0) * normDD - alpha * L / 2
    elif kind in ("pd3o", "pdfp", "afba"):
        conds["beta > 0"] = beta if beta is not None else -math.inf
        conds["alpha < 2/L"] = 2.0 / L - alpha
        conds["alpha*beta*|DtD| < 1"] = 1.0 - alpha * (beta or 0.0) * normDD
    else:
        raise ValueError(f"unknown solver kind {kind!r}")
    binding = min(conds, key=conds.get)
    margin = float(conds[binding])
    return Verdict(margin > 0, margin, binding)


#%% DIAGNOSTICS

def h_norm_sq(metric, X, Lam, alpha=None):
    """``||(X, Lam)||_H^2 = ||X||^2/alpha + ||Lam||_Q^2``."""
    alpha = metric.alpha_bar if alpha is None else alpha
    return float(X @ X) / alpha + metric.norm_sq(Lam)


def m_norm_sq(metric, X, Lam, L, alpha=None):
    """``(1/alpha - L/2) ||X||^2 + ||Lam||_J^2`` with ``J = Q - alpha D D^T``."""
    alpha = metric.alpha_bar if alpha is None else alpha
    coef = 1.0 / alpha - L / 2.0
    if coef <= 0:
        raise MetricNotPositiveError(f"M is not positive definite: 1/alpha - L/2 = {coef:.3e} <= 0")
    if not metric.J_is_posdef():
        raise MetricNotPositiveError("M is not positive definite: Q - alpha D D^T is not positive definite")
    return coef * float(X @ X) + float(Lam @ metric.apply_J(Lam, alpha))


def rho_bound(Lambda_star):
    nrm = float(la.norm(Lambda_star))
    return max(1.0 + nrm, 2.0 * nrm)


@dataclass(frozen=True)
class Diagnostics:
    h_dist_sq: float | None
    h_dist_next_sq: float | None
    m_step_sq: float
    phi_gap: float | None
    violation: float
    rho: float | None


def diagnostics(state_k, state_k1, metric, lp, wstar=None, L=None):
    """
    Convergence quantities of one step ``W^k -> (V^{k+1}, W^{k+1})``.

    `wstar` is ``(X*, Lam*)``. Returned distances are squared norms; the gap
    and violation are evaluated at ``Xbar^k = state_k1.Xbar``.
    """
    L = lp.F.L if L is None else L
    dX = state_k1.Xbar - state_k.X
    dL = state_k1.Lambda - state_k.Lambda
    m_step = m_norm_sq(metric, dX, dL, L)
    violation = lp.violation(state_k1.Xbar)
    h0 = h1 = gap = rho = None
    if wstar is not None:
        Xs, Ls = wstar
        h0 = h_norm_sq(metric, state_k.X - Xs, state_k.Lambda - Ls)
        h1 = h_norm_sq(metric, state_k1.X - Xs, state_k1.Lambda - Ls)
        gap = abs(lp.objective(state_k1.Xbar) - lp.objective(Xs))
        rho = rho_bound(Ls)
    return Diagnostics(h0, h1, m_step, gap, violation, rho)


class ErgodicAverager:
    """Running means of ``Xbar^k`` and ``Lam^{k+1}``, O(dim) per update."""

    def __init__(self):
        self.count = 0
        self.Xbar = None
        self.Lambda = None
        self.X = None

    def update(self, state):
        self.count += 1
        if self.count == 1:
            self.Xbar = state.Xbar.astype(float).copy()
            self.Lambda = state.Lambda.astype(float).copy()
            self.X = state.X.astype(float).copy()
            return self
        w = 1.0 / self.count
        self.Xbar += w * (state.Xbar - self.Xbar)
        self.Lambda += w * (state.Lambda - self.Lambda)
        self.X += w * (state.X - self.X)
        return self


def ergodic_average(states):
    """``(mean of Xbar^k, mean of Lam^{k+1})`` over post-step states."""
    states = list(states)
    if not states:
        raise ValueError("ergodic average of an empty trace")
    avg = ErgodicAverager()
    for s in states:
        avg.update(s)
    return avg.Xbar, avg.Lambda


#%% DRIVER

@dataclass(frozen=True)
class SolverConfig:
    kind: str = "balpa"
    alpha: float = 1.0
    beta: float | None = None
    gamma: float = 1.0
    schedule: StepsizeSchedule | None = None
    max_iter: int = 10000
    tol: float = 1e-6
    stop_metric: str | None = None
    max_epochs: float | None = None
    check: bool = True
    track_ergodic: bool = False
    trace_every: int = 1

    def __post_init__(self):
        if self.kind not in SOLVER_KINDS:
            raise ValueError(f"unknown solver kind {self.kind!r}")
        if self.kind != "balpa" and self.beta is None:
            raise ValueError(f"{self.kind} needs a dual stepsize beta")
        if self.stop_metric is not None and self.stop_metric not in STOP_METRICS:
            raise ValueError(f"unknown stop metric {self.stop_metric!r}")
        if self.schedule is None:
            object.__setattr__(self, "schedule", StepsizeSchedule("constant", alpha_bar=self.alpha))
        if int(self.trace_every) < 1:
            raise ValueError("trace_every must be a positive integer")


@dataclass(frozen=True)
class Reference:
    """Reference solution: x-block or lifted ``X*``, optional ``Lam*`` and ``Phi*``."""

    x: np.ndarray
    Lambda: np.ndarray | None = None
    phi: float | None = None


@dataclass
class TraceRecord:
    iter: int
    objective: float
    constraint_violation: float
    fixed_point_residual: float
    relative_error: float | None = None
    ergodic_gap: float | None = None
    wall_time: float = 0.0
    epoch_equivalent: float = 0.0


TRACE_COLUMNS = ("iter", "objective", "constraint_violation", "fixed_point_residual",
                 "relative_error", "ergodic_gap", "wall_time_s", "epochs")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def trace_rows(trace):
    for r in trace:
        yield [r.iter, r.objective, r.constraint_violation, r.fixed_point_residual,
               r.relative_error, r.ergodic_gap, r.wall_time, r.epoch_equivalent]


def write_trace_csv(path, trace, extra=None):
    """
    Write `trace` with the standard header; `extra` maps additional column
    names to per-record sequences.
    """
    extra = extra or {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(TRACE_COLUMNS) + list(extra))
        for i, row in enumerate(trace_rows(trace)):
            w.writerow([_fmt(v) for v in row] + [_fmt(col[i]) for col in extra.values()])


def read_trace_csv(path):
    """Columns of a trace CSV as float arrays (empty cells become NaN)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return {name: np.array([float(r[i]) if r[i] != "" else np.nan for r in body])
            for i, name in enumerate(header)}


@dataclass
class SolveReport:
    solver: str
    status: str
    iterations: int
    epochs: float
    wall_time: float
    stop_metric: str
    final_metric: float
    max_dual_residual: float
    state: SaddleState = field(repr=False)
    trace: list = field(default_factory=list, repr=False)
    ergodic: ErgodicAverager | None = field(default=None, repr=False)

    @property
    def converged(self):
        return self.status == "converged"

    def to_text(self):
        keys = ("solver", "status", "iterations", "epochs", "wall_time", "stop_metric",
                "final_metric", "max_dual_residual")
        return "".join(f"{k} = {_fmt(getattr(self, k))}\n" for k in keys)


class _CountingOracle:
    """Forwards to a smooth oracle and counts full gradient evaluations."""

    def __init__(self, oracle):
        self._oracle = oracle
        self.calls = 0

    def __getattr__(self, name):
        return getattr(self._oracle, name)

    def gradient(self, X):
        self.calls += 1
        return self._oracle.gradient(X)


def _relative_error(X, x0, ref_x, denom=None):
    n = ref_x.size
    if denom is None:
        denom = la.norm(x0[:n] - ref_x)
    e = X[:n] - ref_x
    num = math.sqrt(float(e @ e))
    if denom == 0:
        return 0.0 if num == 0 else math.inf
    return num / denom


def run(lp, metric, config, estimator=None, reference=None, X0=None, callback=None):
    """
    Iterate `config.kind` from ``(X0, 0)`` until the stop metric drops to
    `config.tol` or the iteration/epoch budget is spent.

    Parameters
    ----------
    lp : LiftedProblem
    metric : DualMetric or None
        Required for BALPA; built from `config` when None.
    config : SolverConfig
    estimator : GradientEstimator, optional
        Defaults to exact gradients. Only BALPA consumes estimates.
    reference : Reference or ndarray, optional
        Enables relative error (default stop metric when given) and, with
        ``reference.phi``, the ergodic gap.
    X0 : ndarray, optional
    callback : callable, optional
        Called as ``callback(state_k, state_k1)`` after every step.

    Returns
    -------
    SolveReport, list of TraceRecord

    Raises
    ------
    DivergenceError
        When an iterate norm exceeds 1e12 or turns non-finite.
    StepsizeError
        When the stepsize condition is violated and ``config.check`` is set.
    """
    if reference is not None and not isinstance(reference, Reference):
        reference = Reference(x=np.asarray(reference, dtype=float))
    stop_metric = config.stop_metric or ("relative_error_to_reference" if reference is not None
                                         else "fixed_point_residual")
    if stop_metric == "relative_error_to_reference" and reference is None:
        raise ValueError("relative_error stop metric needs a reference solution")

    kind = config.kind
    L = lp.F.L
    if config.check:
        alpha_chk = config.schedule.alpha_bar if kind == "balpa" else config.alpha
        normDD = 0.0 if kind == "balpa" else float(lp.Dop.norm_sq())
        verdict = check_stepsize(kind, alpha_chk, config.beta, config.gamma, L, normDD)
        if not verdict:
            raise StepsizeError(f"{kind}: stepsize condition '{verdict.binding}' violated "
                                f"(margin {verdict.margin:.3e})")

    state = initial_state(lp, X0)
    x0 = state.X.copy()
    if kind == "balpa":
        if metric is None:
            metric = build_dual_metric(lp.Dop, config.schedule.alpha_bar, config.gamma)
        estimator = FullGradient(lp.F) if estimator is None else estimator
        if not estimator.initialized:
            estimator.initialize(state.X)
        epochs = lambda: estimator.epochs
    else:
        counter = _CountingOracle(lp.F)
        lp = replace(lp, F=counter)
        epochs = lambda: float(counter.calls)

    ref_x = None if reference is None else np.asarray(reference.x, dtype=float)
    denom = None if ref_x is None else float(la.norm(x0[:ref_x.size] - ref_x))
    avg = ErgodicAverager() if config.track_ergodic else None
    t0 = time.perf_counter()

    def record(st, fpr, erg):
        rel = _relative_error(st.X, x0, ref_x, denom) if ref_x is not None else None
        return TraceRecord(iter=st.iter, objective=lp.objective(st.X),
                           constraint_violation=lp.violation(st.X), fixed_point_residual=fpr,
                           relative_error=rel, ergodic_gap=erg,
                           wall_time=time.perf_counter() - t0, epoch_equivalent=epochs())

    def stop_value(st, fpr):
        # evaluated every iteration, so keep it to the one quantity needed
        if stop_metric == "relative_error_to_reference":
            return _relative_error(st.X, x0, ref_x, denom)
        if stop_metric == "fixed_point_residual":
            return fpr
        return lp.violation(st.X)

    trace = [record(state, math.inf, None)]
    max_res = 0.0
    status = "max_iter"
    if stop_value(state, math.inf) <= config.tol:
        status = "converged"
    every = int(config.trace_every)
    erg, fpr = None, math.inf

    while status != "converged" and state.iter < config.max_iter:
        if config.max_epochs is not None and epochs() >= config.max_epochs:
            status = "max_epochs"
            break
        if kind == "balpa":
            alpha_k, _ = schedule_step(config.schedule, state.iter)
            g = estimator.estimate(state.X)
            new = balpa_step(state, lp, metric, alpha_k, g)
            r = lp.Dop.apply(new.Xbar) - lp.dvec
            max_res = max(max_res, dual_residual(metric, state.Lambda, new.Lambda, r))
            dX, dL = new.Xbar - state.X, new.Lambda - state.Lambda
            coef = 1.0 / alpha_k - L / 2.0
            if coef > 0 and metric.J_is_posdef():
                fpr = math.sqrt(max(m_norm_sq(metric, dX, dL, L, alpha_k), 0.0))
            else:
                fpr = math.sqrt(float(dX @ dX) + float(dL @ dL))
        else:
            new = baseline_step(kind, state, lp, config.alpha, config.beta)
            dX, dL = new.X - state.X, new.Lambda - state.Lambda
            fpr = math.sqrt(float(dX @ dX) + float(dL @ dL))

        nrm = math.sqrt(max(float(new.X @ new.X), float(new.Lambda @ new.Lambda)))
        if not np.isfinite(nrm) or nrm > DIVERGENCE_THRESHOLD:
            raise DivergenceError(new.iter, f"iterate norm {nrm:.3e} exceeds "
                                            f"{DIVERGENCE_THRESHOLD:.0e} ({kind}, alpha={config.alpha}, "
                                            f"beta={config.beta})")
        if callback is not None:
            callback(state, new)
        state = new
        if stop_value(state, fpr) <= config.tol:
            status = "converged"
        keep = status == "converged" or state.iter % every == 0 or state.iter >= config.max_iter
        if avg is not None:
            avg.update(new)
            if keep and reference is not None and reference.phi is not None:
                erg = abs(lp.objective(avg.Xbar) - reference.phi)
        if keep:
            trace.append(record(state, fpr, erg))

    if trace[-1].iter != state.iter:
        trace.append(record(state, fpr, erg))

    report = SolveReport(solver=kind, status=status, iterations=state.iter, epochs=epochs(),
                         wall_time=time.perf_counter() - t0, stop_metric=stop_metric,
                         final_metric=_metric_of(trace[-1], stop_metric), max_dual_residual=max_res,
                         state=state, trace=trace, ergodic=avg)
    return report, trace


def _metric_of(rec, stop_metric):
    return {"relative_error_to_reference": rec.relative_error,
            "fixed_point_residual": rec.fixed_point_residual}.get(stop_metric, rec.constraint_violation)


def epochs_to_tolerance(trace, tol, field="relative_error"):
    """Epoch count at the first record whose `field` is at most `tol`, else None."""
    for rec in trace:
        v = getattr(rec, field)
        if v is not None and v <= tol:
            return rec.epoch_equivalent
    return None
