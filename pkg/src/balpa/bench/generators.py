"""Seeded problem generators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy import linalg as la

from balpa.bench.problems import FiniteSumLeastSquares, LinearRegressionSum, LogisticSum
from balpa.opcore import (CompositeProblem, MatrixOperator, QuadraticOracle, ZeroOperator,
                          op_norm_sq)
from balpa.prox import L1Norm, Zero, make_prox


@dataclass(frozen=True)
class LassoEqInstance:
    """Generalized Lasso with equality constraints:
    ``(1/2m) sum ||A_i x - a_i||^2 + ||Bx||_1  s.t.  Dx = d``."""

    A: np.ndarray          # (m, 2n, n)
    a: np.ndarray          # (m, 2n)
    B: np.ndarray
    D: np.ndarray
    d: np.ndarray
    seed: int
    target_normDD: float
    l1_weight: float = 1.0

    @property
    def n(self):
        return self.A.shape[2]

    @property
    def m(self):
        return self.A.shape[0]

    def oracle(self, ridge=0.0):
        return FiniteSumLeastSquares(self.A, self.a, ridge=ridge)

    def problem(self, ridge=0.0):
        f = self.oracle(ridge)
        return CompositeProblem(f=f, r=L1Norm(self.B.shape[0], self.l1_weight),
                                B=MatrixOperator(self.B), D=MatrixOperator(self.D), d=self.d)

    @property
    def step_L(self):
        """``mean_i ||A_i^T A_i||``; the BALPA stepsize is its inverse."""
        return float(np.mean([la.norm(A, 2) ** 2 for A in self.A]))


def gen_lasso_eq(n, m=10, p1=20, p2=20, target_normDD=1e3, seed=0, sigma=1.0):
    """
    Draw every entry of ``A_i, a_i, B, D, d`` from ``N(0, sigma^2)`` and
    rescale ``(D, d)`` jointly so that ``||D^T D||`` equals `target_normDD`.

    Scaling ``d`` with ``D`` keeps the feasible set, hence the solution,
    independent of the target.
    """
    if min(n, m, p1, p2) <= 0 or not target_normDD > 0:
        raise ValueError("dimensions and target_normDD must be positive")
    rng = np.random.default_rng(seed)
    A = sigma * rng.standard_normal((m, 2 * n, n))
    a = sigma * rng.standard_normal((m, 2 * n))
    B = sigma * rng.standard_normal((p1, n))
    D = sigma * rng.standard_normal((p2, n))
    d = sigma * rng.standard_normal(p2)
    s = np.sqrt(target_normDD / op_norm_sq(MatrixOperator(D), tol=1e-12))
    return LassoEqInstance(A=A, a=a, B=B, D=s * D, d=s * d, seed=seed,
                           target_normDD=float(target_normDD))


@dataclass(frozen=True)
class QPInstance:
    """``min x^T H x / 2 + c^T x  s.t.  Dx = d``."""

    H: np.ndarray
    c: np.ndarray
    D: np.ndarray
    d: np.ndarray

    def problem(self):
        n = self.H.shape[0]
        return CompositeProblem(f=QuadraticOracle(self.H, self.c), r=Zero(0),
                                B=ZeroOperator(0, n), D=MatrixOperator(self.D), d=self.d)


def gen_qp(n, p2, seed=0, shift=0.5, D_scale=1.0):
    """Random strongly convex equality-constrained QP with full-row-rank ``D``."""
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((n, n))
    H = G.T @ G / n + shift * np.eye(n)
    c = rng.standard_normal(n)
    D = D_scale * rng.standard_normal((p2, n))
    d = D_scale * rng.standard_normal(p2)
    return QPInstance(H=H, c=c, D=D, d=d)


@dataclass(frozen=True)
class AgentProblem:
    """Local data of one agent: smooth ``f_i``, regularizer ``r_i``, matrix ``B_i``."""

    f: object
    r: object
    B: np.ndarray


def gen_dist_regression(dataset, N, p1, kind="logistic", seed=0, reg_weight=0.5,
                        ridge=1.0, reg_kind="l2_norm"):
    """
    Split `dataset` into `N` contiguous shards (remainder to the last agent)
    and attach ``B_i ~ N(0, 1)`` of shape ``(p1, l)``.

    Each agent holds ``(1/m_i) sum_j loss_j + (ridge/2)||x||^2`` and
    ``r_i = reg_weight * ||.||`` (unsquared).
    """
    X, y = dataset.samples, dataset.labels
    n_samples, l = X.shape
    if N < 1 or n_samples < N:
        raise ValueError(f"cannot split {n_samples} samples over {N} agents: empty agent shard")
    rng = np.random.default_rng(seed)
    size = n_samples // N
    oracle_cls = {"logistic": LogisticSum, "linear": LinearRegressionSum}[kind]
    agents = []
    for i in range(N):
        lo = i * size
        hi = n_samples if i == N - 1 else lo + size
        f = oracle_cls(X[lo:hi], y[lo:hi], ridge=ridge)
        r = make_prox(reg_kind, p1, reg_weight)
        agents.append(AgentProblem(f=f, r=r, B=rng.standard_normal((p1, l))))
    return agents
