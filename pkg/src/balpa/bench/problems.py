"""Finite-sum smooth oracles used by the experiment generators."""

import numpy as np
from numpy import linalg as la
from scipy import sparse

from balpa.opcore import SmoothOracle


class FiniteSumLeastSquares(SmoothOracle):
    r"""
    :math:`f(x) = \frac1m \sum_i \left(\tfrac12 \|A_i x - a_i\|^2 + \tfrac{\mu}{2}\|x\|^2\right)`.

    `L` follows the stepsize rule of the generalized Lasso experiment,
    ``mean_i ||A_i^T A_i|| + mu``, which upper-bounds the true constant.
    """

    convention = "mean"

    def __init__(self, As, bs, ridge=0.0):
        self.As = np.asarray(As, dtype=float)
        self.bs = np.asarray(bs, dtype=float)
        self.m, _, self.dim = self.As.shape
        self.ridge = float(ridge)
        self.comp_L = np.array([la.norm(A, 2) ** 2 for A in self.As]) + self.ridge
        self.L = float(self.comp_L.mean())
        # sum_i A_i^T A_i / m, for the exact gradient in one product
        self._gram = np.einsum("kij,kil->jl", self.As, self.As) / self.m
        self._lin = np.einsum("kij,ki->j", self.As, self.bs) / self.m
        self._const = 0.5 * float(np.sum(self.bs * self.bs)) / self.m
        self.mu = float(la.eigvalsh(self._gram)[0]) + self.ridge

    def value(self, x):
        quad = 0.5 * float(x @ self._gram @ x) + 0.5 * self.ridge * float(x @ x)
        return quad - float(self._lin @ x) + self._const

    def value_direct(self, x):
        r = np.einsum("kij,j->ki", self.As, x) - self.bs
        return 0.5 * float(np.sum(r * r)) / self.m + 0.5 * self.ridge * float(x @ x)

    def gradient(self, x):
        return self._gram @ x - self._lin + self.ridge * x

    def component_gradient(self, i, x):
        A = self.As[i]
        return A.T @ (A @ x - self.bs[i]) + self.ridge * x

    def component_lipschitz(self):
        return float(self.comp_L.max())


class _SampleSum(SmoothOracle):
    """Mean over samples of a per-sample loss plus ``(ridge/2)||x||^2``."""

    convention = "mean"

    def __init__(self, A, b, ridge=1.0):
        self.A = sparse.csr_matrix(A, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.m, self.dim = self.A.shape
        if self.m == 0:
            raise ValueError("empty sample shard")
        self.ridge = float(ridge)
        self._row_sq = np.asarray(self.A.multiply(self.A).sum(axis=1)).ravel()

    def component_lipschitz(self):
        return self._curv * float(self._row_sq.max()) + self.ridge


class LogisticSum(_SampleSum):
    r""":math:`\frac1m\sum_j \ln(1 + e^{-b_j a_j^\top x}) + \tfrac{r}{2}\|x\|^2`."""

    _curv = 0.25

    def __init__(self, A, b, ridge=1.0):
        super().__init__(A, b, ridge)
        G = (self.A.T @ self.A).toarray() / self.m
        self.L = 0.25 * float(la.eigvalsh(G)[-1]) + self.ridge
        self.mu = self.ridge

    def value(self, x):
        z = self.b * (self.A @ x)
        return float(np.mean(np.logaddexp(0.0, -z))) + 0.5 * self.ridge * float(x @ x)

    def gradient(self, x):
        z = self.b * (self.A @ x)
        w = -self.b * _sigmoid(-z)
        return np.asarray(self.A.T @ w).ravel() / self.m + self.ridge * x

    def component_gradient(self, j, x):
        row = self.A.getrow(j)
        z = self.b[j] * float((row @ x)[0])
        w = -self.b[j] * _sigmoid(-z)
        return np.asarray(row.T.toarray()).ravel() * w + self.ridge * x


class LinearRegressionSum(_SampleSum):
    r""":math:`\frac1m\sum_j \tfrac12 (a_j^\top x - b_j)^2 + \tfrac{r}{2}\|x\|^2`."""

    _curv = 1.0

    def __init__(self, A, b, ridge=1.0):
        super().__init__(A, b, ridge)
        G = (self.A.T @ self.A).toarray() / self.m
        eig = la.eigvalsh(G)
        self.L = float(eig[-1]) + self.ridge
        self.mu = float(max(eig[0], 0.0)) + self.ridge

    def value(self, x):
        r = self.A @ x - self.b
        return 0.5 * float(r @ r) / self.m + 0.5 * self.ridge * float(x @ x)

    def gradient(self, x):
        return np.asarray(self.A.T @ (self.A @ x - self.b)).ravel() / self.m + self.ridge * x

    def component_gradient(self, j, x):
        row = self.A.getrow(j)
        r = float((row @ x)[0]) - self.b[j]
        return np.asarray(row.T.toarray()).ravel() * r + self.ridge * x


class StackedSum(SmoothOracle):
    """``f(x_1, ..., x_N) = sum_i f_i(x_i)`` on the stacked vector."""

    def __init__(self, oracles):
        self.oracles = list(oracles)
        self.sizes = [o.dim for o in self.oracles]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)])
        self.dim = int(self.offsets[-1])
        self.L = max(o.L for o in self.oracles)
        self.mu = min(o.mu for o in self.oracles)

    def _blocks(self, x):
        return [x[self.offsets[i]:self.offsets[i + 1]] for i in range(len(self.oracles))]

    def value(self, x):
        return sum(o.value(xi) for o, xi in zip(self.oracles, self._blocks(x)))

    def gradient(self, x):
        return np.concatenate([o.gradient(xi) for o, xi in zip(self.oracles, self._blocks(x))])


class SharedSum(SmoothOracle):
    """``f(x) = sum_i f_i(x)`` for oracles sharing one variable."""

    def __init__(self, oracles):
        self.oracles = list(oracles)
        self.dim = self.oracles[0].dim
        self.L = sum(o.L for o in self.oracles)
        self.mu = sum(o.mu for o in self.oracles)

    def value(self, x):
        return sum(o.value(x) for o in self.oracles)

    def gradient(self, x):
        return sum(o.gradient(x) for o in self.oracles)


def _sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))
