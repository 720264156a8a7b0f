"""
Synchronous multi-agent BALPA over an undirected graph, and its compact form.

Agent ``i`` holds ``f_i``, ``r_i``, ``B_i`` and solves its share of

    min  sum_i f_i(x) + r_i(B_i x)

with local copies ``x_i`` coupled through a mixing matrix ``U``. One round
is a local half step, one exchange of ``xbar_i`` with the neighbors, and a
local dual update plus correction.
"""

from __future__ import annotations

import math
import time
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np
from numpy import linalg as la
from scipy import linalg as sla

from balpa.bench.problems import StackedSum
from balpa.opcore import CompositeProblem, MatrixOperator, lift_problem
from balpa.prox import Separable
from balpa.solvers import (CG_TOL, TraceRecord, balpa_step, block_metric, initial_state,
                           pcg)
from balpa.stochastic import make_estimator

DENSE_FACTOR_LIMIT = 500
COMPACT_DIM_LIMIT = 5000


class MissingMessageError(RuntimeError):
    pass


#%% TOPOLOGY

@dataclass(frozen=True)
class NetworkTopology:
    """Undirected connected graph on ``N`` agents with its mixing matrix."""

    N: int
    edges: tuple
    U: np.ndarray

    def neighbors(self, i):
        return [j for a, b in self.edges for j in ((b,) if a == i else (a,) if b == i else ())]

    @property
    def degrees(self):
        deg = np.zeros(self.N, dtype=int)
        for a, b in self.edges:
            deg[a] += 1
            deg[b] += 1
        return deg


def _normalize_edges(N, edges):
    out = set()
    for a, b in edges:
        a, b = int(a), int(b)
        if not (0 <= a < N and 0 <= b < N):
            raise ValueError(f"edge ({a}, {b}) references an agent outside 0..{N - 1}")
        if a == b:
            raise ValueError(f"self-loop at agent {a}")
        out.add((min(a, b), max(a, b)))
    return tuple(sorted(out))


def is_connected(N, edges):
    adj = [[] for _ in range(N)]
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    seen, todo = {0}, deque([0])
    while todo:
        for j in adj[todo.popleft()]:
            if j not in seen:
                seen.add(j)
                todo.append(j)
    return len(seen) == N


def metropolis_mixing(N, edges):
    """
    Metropolis weights ``U_ij = 1 / (1 + max(deg_i, deg_j))`` on edges and
    ``U_ii = 1 - sum_{j != i} U_ij``.

    Raises
    ------
    ValueError
        If the graph is disconnected.
    """
    N = int(N)
    if N < 1:
        raise ValueError("need at least one agent")
    edges = _normalize_edges(N, edges)
    if not is_connected(N, edges):
        raise ValueError("graph is disconnected; mixing needs a connected graph")
    deg = np.zeros(N, dtype=int)
    for a, b in edges:
        deg[a] += 1
        deg[b] += 1
    U = np.zeros((N, N))
    for a, b in edges:
        U[a, b] = U[b, a] = 1.0 / (1.0 + max(deg[a], deg[b]))
    U[np.diag_indices(N)] = 1.0 - U.sum(axis=1)
    return U


def mixing_violations(U, edges, tol=1e-12):
    """List of violated mixing-matrix invariants (empty when all hold)."""
    U = np.asarray(U, dtype=float)
    N = U.shape[0]
    bad = []
    if not np.allclose(U, U.T, atol=tol, rtol=0):
        bad.append("not symmetric")
    if np.max(np.abs(U.sum(axis=1) - 1.0)) > tol or np.max(np.abs(U.sum(axis=0) - 1.0)) > tol:
        bad.append("rows or columns do not sum to 1")
    support = np.eye(N, dtype=bool)
    for a, b in edges:
        support[a, b] = support[b, a] = True
    if np.any(U[support] <= 0) or np.any(U[~support] != 0):
        bad.append("support differs from the graph")
    # null(I - U) = span(1): exactly one eigenvalue of U equal to 1
    eig = la.eigvalsh(0.5 * (U + U.T))
    if np.sum(np.abs(eig - 1.0) < 1e-9) != 1 or eig[0] <= -1.0 + 1e-12:
        bad.append("null(I - U) is not span(1)")
    return bad


def make_topology(N, edges):
    edges = _normalize_edges(N, edges)
    return NetworkTopology(N=int(N), edges=edges, U=metropolis_mixing(N, edges))


def path_graph(N):
    return make_topology(N, [(i, i + 1) for i in range(N - 1)])


def ring_graph(N):
    if N < 3:
        return path_graph(N)
    return make_topology(N, [(i, (i + 1) % N) for i in range(N)])


def star_graph(N):
    return make_topology(N, [(0, i) for i in range(1, N)])


def read_topology(path):
    """Parse ``N`` on the first line and one ``i j`` edge per following line."""
    with open(path) as fh:
        lines = [ln.split("#", 1)[0].strip() for ln in fh]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ValueError(f"{path}: empty topology file")
    try:
        N = int(lines[0])
        edges = [tuple(int(t) for t in ln.split()) for ln in lines[1:]]
    except ValueError:
        raise ValueError(f"{path}: expected integers") from None
    if any(len(e) != 2 for e in edges):
        raise ValueError(f"{path}: every edge line needs exactly two agent ids")
    return make_topology(N, edges)


def write_topology(path, topo):
    with open(path, "w") as fh:
        fh.write(f"{topo.N}\n")
        for a, b in topo.edges:
            fh.write(f"{a} {b}\n")


#%% AGENTS

class AgentDualFactor:
    """``S_i = ((a + a g)/g) I + (a/(1 - g)) B_i B_i^T``, factorized once."""

    def __init__(self, B, alpha, gamma):
        if not 0 < gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
        if not alpha > 0:
            raise ValueError("alpha must be positive")
        B = np.atleast_2d(np.asarray(B, dtype=float))
        p = B.shape[0]
        self.diag_coef = (alpha + alpha * gamma) / gamma
        self.gram_coef = alpha / (1.0 - gamma)
        self.B = B
        self.dim = p
        if p <= DENSE_FACTOR_LIMIT:
            self.matrix = self.diag_coef * np.eye(p) + self.gram_coef * (B @ B.T)
            self._chol = sla.cho_factor(self.matrix, lower=True)
        else:
            self.matrix = None
            self._chol = None
            self._diag = self.diag_coef + self.gram_coef * np.einsum("ij,ij->i", B, B)

    def apply(self, v):
        if self.matrix is not None:
            return self.matrix @ v
        return self.diag_coef * v + self.gram_coef * (self.B @ (self.B.T @ v))

    def solve(self, rhs):
        if self._chol is not None:
            return sla.cho_solve(self._chol, rhs)
        x, rel, it = pcg(self.apply, rhs, self._diag, tol=CG_TOL)
        if rel > CG_TOL:
            raise RuntimeError(f"agent dual solve stalled at residual {rel:.3e} after {it} iterations")
        return x

    def dense(self):
        return self.matrix if self.matrix is not None else self.apply(np.eye(self.dim))


def build_agent_dual_factor(B, alpha, gamma):
    return AgentDualFactor(B, alpha, gamma)


@dataclass(frozen=True)
class RoundMessage:
    sender: int
    payload: np.ndarray
    round: int


@dataclass
class AgentState:
    id: int
    x: np.ndarray
    y: np.ndarray
    mu: np.ndarray
    nu: np.ndarray
    f: object
    r: object
    B: np.ndarray
    factor: AgentDualFactor
    weights: dict                 # U_ij for j in neighbors and j == id
    estimator: object = None
    xbar: np.ndarray | None = None
    ybar: np.ndarray | None = None
    round: int = 0


def make_agent(i, problem, topo, alpha, gamma, x0=None, estimator="full", seed=0, **est_kw):
    """Agent ``i`` at ``(x0, B_i x0)`` with zero duals."""
    l, p = problem.f.dim, problem.B.shape[0]
    x0 = np.zeros(l) if x0 is None else np.array(x0, dtype=float)
    B = np.atleast_2d(np.asarray(problem.B, dtype=float))
    weights = {j: float(topo.U[i, j]) for j in topo.neighbors(i)}
    weights[i] = float(topo.U[i, i])
    est = make_estimator(estimator, problem.f, seed=seed + i, **est_kw)
    est.initialize(x0)
    return AgentState(id=i, x=x0, y=B @ x0, mu=np.zeros(l), nu=np.zeros(p), f=problem.f,
                      r=problem.r, B=B, factor=build_agent_dual_factor(B, alpha, gamma),
                      weights=weights, estimator=est)


def agent_local_half(agent, alpha_k, g):
    """
    ``xbar = x - a_k (mu + B^T nu + g)``, ``ybar = prox_r^{a_k}(y + a_k nu)``.

    Returns
    -------
    xbar, ybar : ndarray
    msg : RoundMessage
        Carries `xbar` to every neighbor.
    """
    xbar = agent.x - alpha_k * (agent.mu + agent.B.T @ agent.nu + g)
    ybar = agent.r.prox(agent.y + alpha_k * agent.nu, alpha_k)
    return xbar, ybar, RoundMessage(sender=agent.id, payload=xbar, round=agent.round)


def agent_dual_and_correct(agent, inbox, alpha, gamma, alpha_k):
    """
    Dual updates from the neighbors' ``xbar_j`` and the primal correction.

    Parameters
    ----------
    agent : AgentState
        With ``xbar``/``ybar`` already set by the local half step.
    inbox : dict
        ``sender -> RoundMessage`` for every neighbor.

    Raises
    ------
    MissingMessageError
        If a neighbor's message is absent.
    """
    xbar, ybar = agent.xbar, agent.ybar
    mixed = agent.weights[agent.id] * xbar
    for j, w in agent.weights.items():
        if j == agent.id:
            continue
        msg = inbox.get(j)
        if msg is None:
            raise MissingMessageError(f"agent {agent.id} did not receive a message from agent {j} "
                                      f"in round {agent.round}")
        mixed = mixed + w * msg.payload
    mu1 = agent.mu + (gamma / (2.0 * alpha)) * (xbar - mixed)
    nu1 = agent.nu + agent.factor.solve(agent.B @ xbar - ybar)
    x1 = xbar + alpha_k * (agent.mu - mu1 + agent.B.T @ (agent.nu - nu1))
    y1 = ybar - alpha_k * (agent.nu - nu1)
    return replace(agent, x=x1, y=y1, mu=mu1, nu=nu1, round=agent.round + 1)


@dataclass
class Network:
    topology: NetworkTopology
    agents: list
    alpha: float
    gamma: float
    round: int = 0
    messages_sent: int = 0

    @property
    def x(self):
        return np.stack([a.x for a in self.agents])


def make_network(problems, topo, alpha, gamma, x0=None, estimator="full", seed=0, **est_kw):
    if len(problems) != topo.N:
        raise ValueError(f"{len(problems)} agent problems for a graph on {topo.N} agents")
    agents = [make_agent(i, pb, topo, alpha, gamma, x0, estimator, seed, **est_kw)
              for i, pb in enumerate(problems)]
    return Network(topology=topo, agents=agents, alpha=float(alpha), gamma=float(gamma))


def dist_round(net, alpha_k=None):
    """
    One synchronous round; returns a new Network.

    Every agent sends its ``xbar`` once along each incident edge, so
    ``2 |edges|`` messages are counted.
    """
    alpha_k = net.alpha if alpha_k is None else alpha_k
    halves, outbox = [], []
    for ag in net.agents:
        g = ag.estimator.estimate(ag.x)
        xbar, ybar, msg = agent_local_half(ag, alpha_k, g)
        halves.append(replace(ag, xbar=xbar, ybar=ybar))
        outbox.append(msg)
    sent = 0
    inboxes = [dict() for _ in net.agents]
    for a, b in net.topology.edges:
        inboxes[b][a] = outbox[a]
        inboxes[a][b] = outbox[b]
        sent += 2
    agents = [agent_dual_and_correct(ag, inboxes[i], net.alpha, net.gamma, alpha_k)
              for i, ag in enumerate(halves)]
    return replace(net, agents=agents, round=net.round + 1, messages_sent=net.messages_sent + sent)


def consensus_violation(net):
    """``max_i ||x_i - mean_j x_j||``."""
    X = net.x
    return float(np.max(la.norm(X - X.mean(axis=0), axis=1)))


#%% COMPACT FORM

def consensus_root(U, l):
    """``D_c = ((I - U)/2 (x) I_l)^{1/2}`` by a symmetric eigendecomposition."""
    w, V = la.eigh(0.5 * (np.eye(U.shape[0]) - U))
    root = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
    return np.kron(root, np.eye(l))


def compact_problem(problems, topo):
    """
    Stacked problem ``min sum_i f_i(x_i) + r_i(y_i)`` s.t. ``y = blkdiag(B_i) x``
    and ``D_c x = 0``.
    """
    l = problems[0].f.dim
    N = len(problems)
    Bs = [np.atleast_2d(np.asarray(pb.B, dtype=float)) for pb in problems]
    dim = N * l + sum(B.shape[0] for B in Bs)
    if dim > COMPACT_DIM_LIMIT:
        raise ValueError(f"stacked dimension {dim} exceeds {COMPACT_DIM_LIMIT}; "
                         "the compact form is meant for desk-scale cross-checks")
    f = StackedSum([pb.f for pb in problems])
    r = Separable([(B.shape[0], pb.r) for B, pb in zip(Bs, problems)])
    return CompositeProblem(f=f, r=r, B=MatrixOperator(sla.block_diag(*Bs)),
                            D=MatrixOperator(consensus_root(topo.U, l)), d=np.zeros(N * l))


def compact_metric(lp, problems, alpha, gamma):
    """``Q = diag((alpha/gamma) I, S_1, ..., S_N)``."""
    S = sla.block_diag(*[build_agent_dual_factor(pb.B, alpha, gamma).dense() for pb in problems])
    p2 = lp.dual_dim - S.shape[0]
    Q = sla.block_diag((alpha / gamma) * np.eye(p2), S)
    return block_metric(lp.Dop, alpha, gamma, Q)


def compact_form_oracle(problems, topo, alpha, gamma, K, x0=None):
    """
    Run the unified framework with the block preconditioner on the stacked
    problem for `K` iterations with exact gradients.

    Returns
    -------
    list of dict
        Per iterate (including the start) the agent-shaped blocks ``x``,
        ``y``, ``mu`` (``D_c lambda``) and ``nu``, each an ``(N, .)`` list.
    """
    cp = compact_problem(problems, topo)
    lp = lift_problem(cp)
    metric = compact_metric(lp, problems, alpha, gamma)
    N, l = topo.N, problems[0].f.dim
    x0 = np.zeros(l) if x0 is None else np.asarray(x0, dtype=float)
    X0 = lp.lift_point(np.tile(x0, N))
    state = initial_state(lp, X0)
    Dc = cp.D.matrix
    sizes = [np.atleast_2d(pb.B).shape[0] for pb in problems]
    cuts = np.cumsum(sizes)[:-1]

    def unpack(st):
        x = st.X[:N * l].reshape(N, l)
        y = np.split(st.X[N * l:], cuts)
        lam, nu = st.Lambda[:N * l], st.Lambda[N * l:]
        return {"x": list(x), "y": y, "mu": list((Dc @ lam).reshape(N, l)),
                "nu": np.split(nu, cuts)}

    trace = [unpack(state)]
    for _ in range(K):
        g = lp.F.gradient(state.X)
        state = balpa_step(state, lp, metric, alpha, g)
        trace.append(unpack(state))
    return trace


def agent_trace_entry(net):
    return {"x": [a.x for a in net.agents], "y": [a.y for a in net.agents],
            "mu": [a.mu for a in net.agents], "nu": [a.nu for a in net.agents]}


def max_trace_gap(trace_a, trace_b):
    """Largest componentwise difference between two per-iterate traces."""
    gap = 0.0
    for ea, eb in zip(trace_a, trace_b):
        for key in ("x", "y", "mu", "nu"):
            for u, v in zip(ea[key], eb[key]):
                if np.size(u):
                    gap = max(gap, float(np.max(np.abs(np.asarray(u) - np.asarray(v)))))
    return gap


#%% DRIVER

def centralized_problem(problems):
    """``min sum_i f_i(x) + r_i(B_i x)`` on the shared variable, without constraints."""
    from balpa.bench.problems import SharedSum

    l = problems[0].f.dim
    Bs = [np.atleast_2d(np.asarray(pb.B, dtype=float)) for pb in problems]
    r = Separable([(B.shape[0], pb.r) for B, pb in zip(Bs, problems)])
    return CompositeProblem(f=SharedSum([pb.f for pb in problems]), r=r,
                            B=MatrixOperator(np.vstack(Bs)), D=MatrixOperator(np.zeros((0, l))),
                            d=np.zeros(0))


@dataclass
class DistConfig:
    alpha: float = 0.25
    gamma: float = 0.5
    max_rounds: int = 10000
    tol: float = 1e-6
    estimator: str = "full"
    seed: int = 0
    trace_every: int = 1
    estimator_kw: dict = field(default_factory=dict)


DIST_EXTRA_COLUMNS = ("consensus_violation", "messages_sent")


def network_objective(net):
    return sum(a.f.value(a.x) + a.r.value(a.y) for a in net.agents)


def network_violation(net):
    """Norm of the stacked residual ``(D_c x, B x - y)``."""
    X = net.x
    U = net.topology.U
    cons = 0.5 * float(np.sum(X * (X - U @ X)))
    lifted = sum(float(np.sum((a.B @ a.x - a.y) ** 2)) for a in net.agents)
    return math.sqrt(max(cons, 0.0) + lifted)


def run_distributed(problems, topo, config, x_star=None, callback=None):
    """
    Run rounds until the consensus violation and the relative distance to
    `x_star` are both at most `config.tol`, or `config.max_rounds` pass.
    Without `x_star` the round-to-round step length replaces the distance.

    Returns
    -------
    net : Network
    trace : list of (TraceRecord, dict)
        The dict holds the extra columns ``consensus_violation`` and
        ``messages_sent``.
    """
    net = make_network(problems, topo, config.alpha, config.gamma, estimator=config.estimator,
                       seed=config.seed, **config.estimator_kw)
    x0 = net.x.copy()
    denom = None if x_star is None else float(la.norm(x0 - x_star[None, :]))
    t0 = time.perf_counter()

    def relerr(n):
        if x_star is None:
            return None
        return float(la.norm(n.x - x_star[None, :])) / denom if denom else 0.0

    def epochs(n):
        return float(np.mean([a.estimator.epochs for a in n.agents]))

    def record(n, fpr):
        rec = TraceRecord(iter=n.round, objective=network_objective(n),
                          constraint_violation=network_violation(n), fixed_point_residual=fpr,
                          relative_error=relerr(n), wall_time=time.perf_counter() - t0,
                          epoch_equivalent=epochs(n))
        return rec, {"consensus_violation": consensus_violation(n), "messages_sent": n.messages_sent}

    def done(n, fpr):
        # agents start in consensus, so without x_star the step length decides
        if consensus_violation(n) > config.tol:
            return False
        if x_star is None:
            return fpr <= config.tol
        return relerr(n) <= config.tol

    fpr = math.inf
    trace = [record(net, fpr)]
    while net.round < config.max_rounds and not done(net, fpr):
        new = dist_round(net)
        fpr = math.sqrt(sum(float(np.sum((a.x - b.x) ** 2) + np.sum((a.mu - b.mu) ** 2)
                                  + np.sum((a.y - b.y) ** 2) + np.sum((a.nu - b.nu) ** 2))
                            for a, b in zip(net.agents, new.agents)))
        if callback is not None:
            callback(net, new)
        net = new
        if net.round % config.trace_every == 0 or done(net, fpr) or net.round >= config.max_rounds:
            trace.append(record(net, fpr))
    return net, trace
