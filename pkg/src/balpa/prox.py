"""
Proximal operators.

Every ``prox(y, alpha)`` returns

    argmin_v  r(v) + ||v - y||^2 / (2 alpha)

and never modifies `y`.
"""

import numpy as np
from numpy import linalg as la


def _check_alpha(alpha):
    if not alpha > 0:
        raise ValueError(f"prox parameter must be positive, got {alpha}")


def prox_l1(y, alpha, w=1.0):
    """Soft thresholding, the prox of ``w * ||.||_1``."""
    _check_alpha(alpha)
    y = np.asarray(y, dtype=float)
    t = alpha * w
    return np.sign(y) * np.maximum(np.abs(y) - t, 0.0)


def prox_l2norm(y, alpha, w=1.0):
    """Block soft thresholding, the prox of the unsquared ``w * ||.||``."""
    _check_alpha(alpha)
    y = np.asarray(y, dtype=float)
    nrm = la.norm(y)
    t = alpha * w
    if nrm <= t:
        return np.zeros_like(y)
    return (1.0 - t / nrm) * y


def prox_separable(entries, y, alpha):
    """
    Apply each block's prox independently.

    Parameters
    ----------
    entries : list of (block, ProxOracle)
        `block` is either a size (blocks are then laid out contiguously) or
        a ``slice``. Blocks must partition `y`.
    y : ndarray
    alpha : float
    """
    _check_alpha(alpha)
    y = np.asarray(y, dtype=float)
    slices = _partition(entries, y.size)
    out = np.empty_like(y)
    for sl, (_, op) in zip(slices, entries):
        out[sl] = op.prox(y[sl], alpha)
    return out


def _partition(entries, dim):
    slices, start = [], 0
    covered = np.zeros(dim, dtype=int)
    for block, op in entries:
        if isinstance(block, slice):
            sl = block
        else:
            sl = slice(start, start + int(block))
        start = sl.stop
        idx = np.arange(dim)[sl]
        if idx.size != op.dim or sl.stop > dim:
            raise ValueError(f"block {sl} does not fit an operator of dimension {op.dim}")
        covered[idx] += 1
        slices.append(sl)
    if np.any(covered > 1):
        raise ValueError("prox blocks overlap")
    if np.any(covered == 0):
        raise ValueError(f"prox blocks leave {int(np.sum(covered == 0))} coordinates uncovered")
    return slices


#%% ORACLES

class ProxOracle:
    """Proper closed convex function accessed through its prox and value."""

    kind = None
    dim: int

    def prox(self, y, alpha):
        raise NotImplementedError

    def value(self, v):
        raise NotImplementedError

    def subgradient(self, v):
        """One element of the subdifferential at `v` (used only in tests)."""
        raise NotImplementedError


class Zero(ProxOracle):

    kind = "zero"

    def __init__(self, dim):
        self.dim = int(dim)
        self.weight = 0.0

    def prox(self, y, alpha):
        _check_alpha(alpha)
        return np.array(y, dtype=float)

    def value(self, v):
        return 0.0

    def subgradient(self, v):
        return np.zeros(self.dim)


class L1Norm(ProxOracle):

    kind = "l1_norm"

    def __init__(self, dim, weight=1.0):
        if weight < 0:
            raise ValueError("weight must be nonnegative")
        self.dim, self.weight = int(dim), float(weight)

    def prox(self, y, alpha):
        return prox_l1(y, alpha, self.weight)

    def value(self, v):
        return self.weight * float(np.sum(np.abs(v)))

    def subgradient(self, v):
        return self.weight * np.sign(v)


class L2Norm(ProxOracle):
    """Unsquared Euclidean norm ``w * ||v||``."""

    kind = "l2_norm"

    def __init__(self, dim, weight=1.0):
        if weight < 0:
            raise ValueError("weight must be nonnegative")
        self.dim, self.weight = int(dim), float(weight)

    def prox(self, y, alpha):
        return prox_l2norm(y, alpha, self.weight)

    def value(self, v):
        return self.weight * float(la.norm(v))

    def subgradient(self, v):
        nrm = la.norm(v)
        if nrm == 0:
            return np.zeros(self.dim)
        return self.weight * np.asarray(v) / nrm


class SquaredL2(ProxOracle):
    """``(w/2) * ||v||^2``, for regularizers read as squared."""

    kind = "l2_squared"

    def __init__(self, dim, weight=1.0):
        if weight < 0:
            raise ValueError("weight must be nonnegative")
        self.dim, self.weight = int(dim), float(weight)

    def prox(self, y, alpha):
        _check_alpha(alpha)
        return np.asarray(y, dtype=float) / (1.0 + alpha * self.weight)

    def value(self, v):
        return 0.5 * self.weight * float(np.dot(v, v))

    def subgradient(self, v):
        return self.weight * np.asarray(v, dtype=float)


class ScaledTranslated(ProxOracle):
    """``r(v) = w * h(v - shift)``."""

    kind = "scaled_translated"

    def __init__(self, base, weight=1.0, shift=None):
        if weight < 0:
            raise ValueError("weight must be nonnegative")
        self.base, self.weight = base, float(weight)
        self.dim = base.dim
        self.shift = np.zeros(self.dim) if shift is None else np.asarray(shift, dtype=float)

    def prox(self, y, alpha):
        _check_alpha(alpha)
        if self.weight == 0:
            return np.array(y, dtype=float)
        return self.shift + self.base.prox(np.asarray(y) - self.shift, alpha * self.weight)

    def value(self, v):
        return self.weight * self.base.value(np.asarray(v) - self.shift)

    def subgradient(self, v):
        return self.weight * self.base.subgradient(np.asarray(v) - self.shift)


class Separable(ProxOracle):
    """Block-separable sum; blocks are given as sizes laid out in order."""

    kind = "separable_sum"

    def __init__(self, entries):
        self.entries = list(entries)
        self.dim = sum(int(b) if not isinstance(b, slice) else b.stop - b.start
                       for b, _ in self.entries)
        self._slices = _partition(self.entries, self.dim)

    @property
    def block_structure(self):
        return [sl.stop - sl.start for sl in self._slices]

    def prox(self, y, alpha):
        _check_alpha(alpha)
        y = np.asarray(y, dtype=float)
        if y.size != self.dim:
            raise ValueError(f"expected a vector of size {self.dim}, got {y.size}")
        out = np.empty_like(y)
        for sl, (_, op) in zip(self._slices, self.entries):
            out[sl] = op.prox(y[sl], alpha)
        return out

    def value(self, v):
        return sum(op.value(v[sl]) for sl, (_, op) in zip(self._slices, self.entries))

    def subgradient(self, v):
        out = np.empty(self.dim)
        for sl, (_, op) in zip(self._slices, self.entries):
            out[sl] = op.subgradient(v[sl])
        return out


CATALOG = {
    "zero": lambda dim, weight=0.0: Zero(dim),
    "l1_norm": L1Norm,
    "l2_norm": L2Norm,
    "l2_squared": SquaredL2,
}


def make_prox(kind, dim, weight=1.0):
    """Build a catalog entry by name."""
    try:
        return CATALOG[kind](dim, weight)
    except KeyError:
        raise ValueError(f"unknown prox kind {kind!r}; known: {sorted(CATALOG)}") from None
