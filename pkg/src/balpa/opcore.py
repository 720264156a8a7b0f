"""
Linear operators, smooth oracles, problem containers and the lifting
``min f(x) + r(Bx) s.t. Dx = d``  ->  ``min F(X) + R(X) s.t. DX = d``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy import linalg as la
from scipy import sparse

from balpa.prox import ProxOracle, Separable, Zero


class ConvergenceWarning(UserWarning):
    pass


class RankDeficientError(ValueError):
    pass


#%% LINEAR OPERATORS

class NormEstimate(float):
    """Float carrying the power-iteration residual and a convergence flag."""

    def __new__(cls, value, residual=0.0, converged=True, iterations=0):
        obj = super().__new__(cls, value)
        obj.residual = residual
        obj.converged = converged
        obj.iterations = iterations
        return obj


class LinearOperator:
    """
    Base linear map ``A: R^cols -> R^rows``.

    Subclasses implement ``_matvec`` and ``_rmatvec``. The estimate of
    ``||A^T A||`` is computed lazily and written once.
    """

    def __init__(self, rows, cols):
        self.rows = int(rows)
        self.cols = int(cols)
        self.norm_sq_estimate = None

    @property
    def shape(self):
        return (self.rows, self.cols)

    def apply(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.cols,):
            raise ValueError(f"expected vector of length {self.cols}, got shape {v.shape}")
        return self._matvec(v)

    def adjoint(self, w):
        w = np.asarray(w, dtype=float)
        if w.shape != (self.rows,):
            raise ValueError(f"expected vector of length {self.rows}, got shape {w.shape}")
        return self._rmatvec(w)

    def __matmul__(self, v):
        return self.apply(v)

    @property
    def T(self):
        return _Adjoint(self)

    def to_dense(self):
        out = np.zeros((self.rows, self.cols))
        e = np.zeros(self.cols)
        for j in range(self.cols):
            e[j] = 1.0
            out[:, j] = self._matvec(e)
            e[j] = 0.0
        return out

    def row_norms_sq(self):
        """Squared Euclidean norms of the rows, i.e. ``diag(A A^T)``."""
        return np.sum(self.to_dense() ** 2, axis=1)

    def gram(self):
        """Dense ``A A^T``."""
        M = self.to_dense()
        return M @ M.T

    def norm_sq(self, tol=1e-9, max_iter=20000):
        if self.norm_sq_estimate is None:
            self.norm_sq_estimate = op_norm_sq(self, tol=tol, max_iter=max_iter)
        return self.norm_sq_estimate

    def _matvec(self, v):
        raise NotImplementedError

    def _rmatvec(self, w):
        raise NotImplementedError


class _Adjoint(LinearOperator):

    def __init__(self, op):
        super().__init__(op.cols, op.rows)
        self.op = op

    def _matvec(self, v):
        return self.op._rmatvec(v)

    def _rmatvec(self, w):
        return self.op._matvec(w)


class MatrixOperator(LinearOperator):
    """Operator backed by a dense ndarray or a scipy sparse matrix."""

    def __init__(self, matrix):
        if sparse.issparse(matrix):
            matrix = sparse.csr_matrix(matrix, dtype=float)
        else:
            matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        super().__init__(*matrix.shape)
        self.matrix = matrix

    @property
    def is_sparse(self):
        return sparse.issparse(self.matrix)

    def _matvec(self, v):
        return np.asarray(self.matrix @ v).ravel()

    def _rmatvec(self, w):
        return np.asarray(self.matrix.T @ w).ravel()

    def to_dense(self):
        if self.is_sparse:
            return self.matrix.toarray()
        return self.matrix.copy()

    def row_norms_sq(self):
        if self.is_sparse:
            return np.asarray(self.matrix.multiply(self.matrix).sum(axis=1)).ravel()
        return np.einsum("ij,ij->i", self.matrix, self.matrix)

    def gram(self):
        G = self.matrix @ self.matrix.T
        return G.toarray() if sparse.issparse(G) else G


class ZeroOperator(LinearOperator):

    def __init__(self, rows, cols):
        super().__init__(rows, cols)
        self.norm_sq_estimate = NormEstimate(0.0)

    def _matvec(self, v):
        return np.zeros(self.rows)

    def _rmatvec(self, w):
        return np.zeros(self.cols)

    def row_norms_sq(self):
        return np.zeros(self.rows)

    def gram(self):
        return np.zeros((self.rows, self.rows))


class LiftedOperator(LinearOperator):
    """
    Composed map ``(x, y) -> (Dx, Bx - y)`` on ``R^{n+p1} -> R^{p2+p1}``.

    The adjoint is ``(mu, nu) -> (D^T mu + B^T nu, -nu)``. Never densified
    unless asked.
    """

    def __init__(self, D, B):
        if D.cols != B.cols:
            raise ValueError(f"D has {D.cols} columns but B has {B.cols}")
        self.D, self.B = D, B
        self.n, self.p1, self.p2 = D.cols, B.rows, D.rows
        super().__init__(self.p2 + self.p1, self.n + self.p1)
        # one product with [D; B] when both blocks are small and dense
        self._stack = None
        dense = all(isinstance(M, MatrixOperator) and not M.is_sparse for M in (D, B))
        if dense and (self.p1 + self.p2) * self.n <= 4_000_000:
            self._stack = np.vstack([D.matrix, B.matrix])

    def _matvec(self, v):
        x, y = v[:self.n], v[self.n:]
        if self._stack is not None:
            out = self._stack @ x
            out[self.p2:] -= y
            return out
        return np.concatenate([self.D._matvec(x), self.B._matvec(x) - y])

    def _rmatvec(self, w):
        if self._stack is not None:
            out = np.empty(self.cols)
            out[:self.n] = w @ self._stack
            out[self.n:] = -w[self.p2:]
            return out
        mu, nu = w[:self.p2], w[self.p2:]
        return np.concatenate([self.D._rmatvec(mu) + self.B._rmatvec(nu), -nu])

    def to_dense(self):
        out = np.zeros(self.shape)
        out[:self.p2, :self.n] = self.D.to_dense()
        out[self.p2:, :self.n] = self.B.to_dense()
        out[self.p2:, self.n:] = -np.eye(self.p1)
        return out

    def row_norms_sq(self):
        return np.concatenate([self.D.row_norms_sq(), self.B.row_norms_sq() + 1.0])

    def gram(self):
        Dm, Bm = self.D.to_dense(), self.B.to_dense()
        top = np.hstack([Dm @ Dm.T, Dm @ Bm.T])
        bot = np.hstack([Bm @ Dm.T, Bm @ Bm.T + np.eye(self.p1)])
        return np.vstack([top, bot])


def as_operator(A, rows=None, cols=None):
    """Wrap an array, sparse matrix or operator; ``None`` gives a zero map."""
    if isinstance(A, LinearOperator):
        return A
    if A is None:
        return ZeroOperator(rows, cols)
    return MatrixOperator(A)


def op_norm_sq(op, tol=1e-9, max_iter=20000, seed=0):
    r"""
    Largest eigenvalue of :math:`A^\top A` by power iteration.

    Parameters
    ----------
    op : LinearOperator
    tol : float
        Stop when the relative eigen-residual
        :math:`\|A^\top A v - \lambda v\| / \lambda` falls below `tol`.
    max_iter : int
    seed : int
        Seed of the fixed starting vector.

    Returns
    -------
    NormEstimate
        The estimate; ``converged`` is False (and a ConvergenceWarning is
        emitted) when `max_iter` is exhausted, with the achieved residual
        attached. The result is cached on `op`.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    v = np.random.default_rng(seed).standard_normal(op.cols)
    v /= la.norm(v)
    lam, res = 0.0, np.inf
    for it in range(1, max_iter + 1):
        w = op._rmatvec(op._matvec(v))
        lam = float(v @ w)
        if lam <= 0.0:
            est = NormEstimate(0.0, 0.0, True, it)
            op.norm_sq_estimate = est
            return est
        res = la.norm(w - lam * v) / lam
        if res <= tol:
            est = NormEstimate(lam, res, True, it)
            op.norm_sq_estimate = est
            return est
        v = w / la.norm(w)
    warnings.warn(f"power iteration stopped at residual {res:.3e} after {max_iter} iterations",
                  ConvergenceWarning)
    est = NormEstimate(lam, res, False, max_iter)
    op.norm_sq_estimate = est
    return est


#%% SMOOTH ORACLES

class SmoothOracle:
    """
    Differentiable convex function with an ``L``-Lipschitz gradient.

    Finite sums set ``m > 0`` and implement ``component_gradient``. The
    convention is ``"mean"`` for ``f = (1/m) sum f_i`` and ``"sum"`` for
    ``f = sum f_i``.
    """

    dim: int
    L: float
    mu: float = 0.0
    m: int = 0
    convention: str = "mean"

    def value(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError

    def component_gradient(self, i, x):
        raise NotImplementedError(f"{type(self).__name__} is not a finite sum")

    def component_lipschitz(self):
        """Largest Lipschitz constant over the components."""
        return self.L

    @property
    def scale(self):
        """Factor ``s`` with ``grad f = s * mean_i grad f_i``."""
        return float(self.m) if self.convention == "sum" else 1.0


class QuadraticOracle(SmoothOracle):
    """``f(x) = x^T H x / 2 + c^T x`` with exact ``L`` and ``mu``."""

    def __init__(self, H, c=None):
        self.H = np.atleast_2d(np.asarray(H, dtype=float))
        self.dim = self.H.shape[0]
        self.c = np.zeros(self.dim) if c is None else np.asarray(c, dtype=float)
        eig = la.eigvalsh(0.5 * (self.H + self.H.T))
        self.L = float(max(eig[-1], 0.0))
        self.mu = float(max(eig[0], 0.0))

    def value(self, x):
        return float(0.5 * x @ self.H @ x + self.c @ x)

    def gradient(self, x):
        return self.H @ x + self.c


class LiftedSmooth(SmoothOracle):
    """``F(x, y) = f(x)`` on ``R^{n+p1}``; components are padded with zeros."""

    def __init__(self, f, p1):
        self.f = f
        self.n, self.p1 = f.dim, int(p1)
        self.dim = self.n + self.p1
        self.L, self.mu = f.L, 0.0 if self.p1 else f.mu
        self.m, self.convention = f.m, f.convention

    def _pad(self, g):
        if not self.p1:
            return g
        out = np.zeros(self.dim)
        out[:self.n] = g
        return out

    def value(self, X):
        return self.f.value(X[:self.n])

    def gradient(self, X):
        return self._pad(self.f.gradient(X[:self.n]))

    def component_gradient(self, i, X):
        return self._pad(self.f.component_gradient(i, X[:self.n]))

    def component_lipschitz(self):
        return self.f.component_lipschitz()


#%% PROBLEMS

@dataclass(frozen=True)
class CompositeProblem:
    """``min f(x) + r(Bx)  s.t.  Dx = d``."""

    f: SmoothOracle
    r: ProxOracle
    B: LinearOperator
    D: LinearOperator
    d: np.ndarray

    def __post_init__(self):
        n = self.f.dim
        if self.B.cols != n or self.D.cols != n:
            raise ValueError(f"B ({self.B.shape}) and D ({self.D.shape}) must have {n} columns")
        if self.r.dim != self.B.rows:
            raise ValueError(f"r acts on R^{self.r.dim} but B has {self.B.rows} rows")
        if np.shape(self.d) != (self.D.rows,):
            raise ValueError(f"d must have length {self.D.rows}")

    @property
    def n(self):
        return self.f.dim

    @property
    def p1(self):
        return self.B.rows

    @property
    def p2(self):
        return self.D.rows

    def objective(self, x):
        return self.f.value(x) + self.r.value(self.B.apply(x))


@dataclass(frozen=True)
class LiftedProblem:
    """``min F(X) + R(X)  s.t.  Dop X = dvec`` with ``X = (x, y)``."""

    F: SmoothOracle
    R: ProxOracle
    Dop: LinearOperator
    dvec: np.ndarray
    n: int
    p1: int

    @property
    def dim(self):
        return self.Dop.cols

    @property
    def dual_dim(self):
        return self.Dop.rows

    def objective(self, X):
        """``Phi(X) = F(X) + R(X)``."""
        return self.F.value(X) + self.R.value(X)

    def violation(self, X):
        return float(la.norm(self.Dop.apply(X) - self.dvec))

    def lift_point(self, x, B=None):
        """``x -> (x, Bx)``; `B` defaults to the operator stored in `Dop`."""
        if not self.p1:
            return np.asarray(x, dtype=float).copy()
        B = B if B is not None else self.Dop.B
        return np.concatenate([x, B.apply(x)])


def lift_problem(p):
    """
    Introduce ``y = Bx`` and return the equivalent lifted problem.

    When ``p1 = 0`` the lifted operator is just ``D`` and ``dvec = d``.
    """
    if p.p1 == 0:
        return LiftedProblem(F=LiftedSmooth(p.f, 0), R=Zero(p.n), Dop=p.D,
                             dvec=np.asarray(p.d, dtype=float), n=p.n, p1=0)
    R = Separable([(p.n, Zero(p.n)), (p.p1, p.r)])
    dvec = np.concatenate([p.d, np.zeros(p.p1)])
    return LiftedProblem(F=LiftedSmooth(p.f, p.p1), R=R, Dop=LiftedOperator(p.D, p.B),
                         dvec=dvec, n=p.n, p1=p.p1)


def kkt_oracle(H, c, D, d):
    r"""
    Solve :math:`\min \tfrac12 x^\top H x + c^\top x` s.t. :math:`Dx = d`
    through the dense KKT system

    .. math:: \begin{pmatrix} H & D^\top \\ D & 0 \end{pmatrix}
              \begin{pmatrix} x \\ \lambda \end{pmatrix} =
              \begin{pmatrix} -c \\ d \end{pmatrix}.

    The multiplier follows the Lagrangian sign ``f(x) + <lambda, Dx - d>``.

    Raises
    ------
    RankDeficientError
        If `D` does not have full row rank.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    c = np.asarray(c, dtype=float)
    n = H.shape[0]
    Dm = as_operator(D).to_dense() if D is not None else np.zeros((0, n))
    Dm = Dm.reshape(-1, n)
    d = np.asarray(d, dtype=float).reshape(-1)
    p = Dm.shape[0]
    if p == 0:
        return la.solve(H, -c), np.zeros(0)
    rank = la.matrix_rank(Dm)
    if rank < p:
        raise RankDeficientError(f"D is rank deficient: {p - rank} of {p} rows are dependent")
    K = np.block([[H, Dm.T], [Dm, np.zeros((p, p))]])
    sol = la.solve(K, np.concatenate([-c, d]))
    return sol[:n], sol[n:]


#%% TEXT I/O

def load_matrix(path):
    """Whitespace-delimited matrix with a leading ``rows cols`` line."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}: first line must be 'rows cols'")
        rows, cols = int(header[0]), int(header[1])
        data = np.array(fh.read().split(), dtype=float)
    if data.size != rows * cols:
        raise ValueError(f"{path}: expected {rows * cols} entries, found {data.size}")
    return data.reshape(rows, cols)


def save_matrix(path, A):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    with open(path, "w") as fh:
        fh.write(f"{A.shape[0]} {A.shape[1]}\n")
        for row in A:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_vector(path):
    text = Path(path).read_text().split()
    return np.array(text, dtype=float)


def save_vector(path, v):
    Path(path).write_text("".join(f"{float(x)!r}\n" for x in np.ravel(v)))
