"""
Stepsize schedules and (stochastic) gradient estimators.

Estimators draw all randomness from one seeded generator. ``estimate``
advances the estimator; ``estimate_for`` evaluates the output for a given
draw without touching any state, which is what exhaustive enumeration and
variance probes use.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from numpy import linalg as la


#%% SCHEDULES

SCHEDULE_KINDS = ("constant", "diminishing_bounded", "diminishing_horizon", "strongly_convex")


@dataclass(frozen=True)
class StepsizeSchedule:
    r"""
    Primal stepsize rule :math:`k \mapsto (\alpha_k, \eta_k)`.

    ``constant``
        :math:`\alpha_k = \bar\alpha`; :math:`\eta_k` is unused and reported as 0.
    ``diminishing_bounded``
        :math:`\alpha_k = 1/(c+\sqrt{k})`, :math:`\eta_k = 1+\sqrt{k}`.
    ``diminishing_horizon``
        :math:`\alpha_k = 1/(c+\sqrt{K-1})`, :math:`\eta_k = 1+\sqrt{K-1}` for a fixed horizon K.
    ``strongly_convex``
        :math:`1/\alpha_k = c+\mu(k+1)`, :math:`\eta_k = \mu(k+1)`.

    `alpha_bar` caps every step and is the constant used in the dual metric;
    it defaults to the first step of the rule.
    """

    kind: str = "constant"
    alpha_bar: float | None = None
    c: float | None = None
    mu: float | None = None
    horizon_K: int | None = None

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "constant":
            if self.alpha_bar is None or not self.alpha_bar > 0:
                raise ValueError("constant schedule needs alpha_bar > 0")
            return
        if self.c is None or not self.c > 0:
            raise ValueError(f"{self.kind} schedule needs c > 0")
        if self.kind == "strongly_convex" and (self.mu is None or not self.mu > 0):
            raise ValueError("strongly_convex schedule needs mu > 0")
        if self.kind == "diminishing_horizon" and (self.horizon_K is None or self.horizon_K < 1):
            raise ValueError("diminishing_horizon schedule needs horizon_K >= 1")
        if self.alpha_bar is None:
            object.__setattr__(self, "alpha_bar", self._raw(0)[0])
        elif not self.alpha_bar > 0:
            raise ValueError("alpha_bar must be positive")

    def _raw(self, k):
        if self.kind == "diminishing_bounded":
            s = math.sqrt(k)
            return 1.0 / (self.c + s), 1.0 + s
        if self.kind == "diminishing_horizon":
            s = math.sqrt(self.horizon_K - 1)
            return 1.0 / (self.c + s), 1.0 + s
        t = self.mu * (k + 1)
        return 1.0 / (self.c + t), t

    def __call__(self, k):
        return schedule_step(self, k)


def schedule_step(s, k):
    """Return ``(alpha_k, eta_k)`` for iteration ``k >= 0``."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    if s.kind == "constant":
        return s.alpha_bar, 0.0
    alpha, eta = s._raw(k)
    return min(alpha, s.alpha_bar), eta


def diminishing_schedule(L, bounded=True, horizon_K=None, c=None):
    """Schedule for minibatch gradients; ``c`` defaults to ``1 + L``."""
    c = 1.0 + L if c is None else c
    if bounded:
        return StepsizeSchedule("diminishing_bounded", c=c)
    return StepsizeSchedule("diminishing_horizon", c=c, horizon_K=horizon_K)


def strongly_convex_schedule(L, mu, c=None):
    c = 1.0 + L if c is None else c
    return StepsizeSchedule("strongly_convex", c=c, mu=mu)


#%% ESTIMATORS

class GradientEstimator:
    """Base class; `oracle` is a (possibly lifted) SmoothOracle."""

    kind = None

    def __init__(self, oracle, seed=0):
        self.oracle = oracle
        self.m = max(int(oracle.m), 1)
        self.rng = np.random.default_rng(seed)
        self.component_evals = 0
        self.initialized = False

    @property
    def epochs(self):
        return self.component_evals / self.m

    def initialize(self, X0):
        self.initialized = True
        return self

    def estimate(self, X):
        raise NotImplementedError

    def draws(self):
        """All possible draws with their probabilities, or None if too many."""
        raise NotImplementedError

    def estimate_for(self, draw, X):
        raise NotImplementedError

    def _full(self, X):
        self.component_evals += self.m
        return self.oracle.gradient(X)


def full_gradient(oracle, X):
    """Exact lifted gradient ``(grad f(x), 0)``."""
    return oracle.gradient(X)


class FullGradient(GradientEstimator):

    kind = "full"

    def estimate(self, X):
        return self._full(X)

    def draws(self):
        return [(None, 1.0)]

    def estimate_for(self, draw, X):
        return self.oracle.gradient(X)


class MinibatchGradient(GradientEstimator):
    """Uniform minibatch without replacement, rescaled to be unbiased."""

    kind = "minibatch"

    def __init__(self, oracle, batch_size=1, seed=0):
        super().__init__(oracle, seed)
        if oracle.m < 1:
            raise ValueError("minibatch estimator needs a finite-sum oracle")
        if not 1 <= batch_size <= self.m:
            raise ValueError(f"batch_size must lie in [1, {self.m}]")
        self.batch_size = int(batch_size)

    def _sample(self):
        if self.batch_size == 1:
            return (int(self.rng.integers(self.m)),)
        return tuple(sorted(self.rng.choice(self.m, size=self.batch_size, replace=False)))

    def estimate(self, X):
        batch = self._sample()
        self.component_evals += len(batch)
        return self.estimate_for(batch, X)

    def draws(self, limit=100000):
        if math.comb(self.m, self.batch_size) > limit:
            return None
        combos = list(itertools.combinations(range(self.m), self.batch_size))
        p = 1.0 / len(combos)
        return [(c, p) for c in combos]

    def estimate_for(self, draw, X):
        g = sum(self.oracle.component_gradient(j, X) for j in draw)
        return (self.oracle.scale / len(draw)) * g


class SagaGradient(GradientEstimator):
    """
    SAGA: ``g = s * (grad f_j(x) - table[j] + mean(table))``, then
    ``table[j] <- grad f_j(x)``. The table is filled at ``X0``, charged as
    one epoch.
    """

    kind = "saga"

    def __init__(self, oracle, seed=0):
        super().__init__(oracle, seed)
        if oracle.m < 1:
            raise ValueError("SAGA needs a finite-sum oracle")
        self.table = None

    def initialize(self, X0):
        self.table = np.array([self.oracle.component_gradient(i, X0) for i in range(self.m)])
        self.component_evals += self.m
        self.initialized = True
        return self

    def _check(self):
        if self.table is None:
            raise RuntimeError("SAGA table is not initialized; call initialize(X0)")

    def estimate(self, X):
        self._check()
        j = int(self.rng.integers(self.m))
        gj = self.oracle.component_gradient(j, X)
        self.component_evals += 1
        g = self.oracle.scale * (gj - self.table[j] + self.table.mean(axis=0))
        self.table[j] = gj
        return g

    def draws(self):
        return [(j, 1.0 / self.m) for j in range(self.m)]

    def estimate_for(self, draw, X):
        self._check()
        gj = self.oracle.component_gradient(draw, X)
        return self.oracle.scale * (gj - self.table[draw] + self.table.mean(axis=0))


class LsvrgGradient(GradientEstimator):
    """
    Loopless SVRG. Order per call: sample ``j``, form
    ``g = s * (grad f_j(x) - grad f_j(anchor)) + full_grad(anchor)``, then
    refresh the anchor at ``x`` with probability `p_update` (charged ``m``).
    """

    kind = "lsvrg"

    def __init__(self, oracle, p_update=None, seed=0):
        super().__init__(oracle, seed)
        if oracle.m < 1:
            raise ValueError("L-SVRG needs a finite-sum oracle")
        self.p_update = 1.0 / self.m if p_update is None else float(p_update)
        if not 0 < self.p_update <= 1:
            raise ValueError("p_update must lie in (0, 1]")
        self.anchor = None
        self.anchor_full_gradient = None

    def initialize(self, X0):
        self.anchor = np.array(X0, dtype=float)
        self.anchor_full_gradient = self._full(self.anchor)
        self.initialized = True
        return self

    def _check(self):
        if self.anchor is None:
            raise RuntimeError("L-SVRG anchor is not initialized; call initialize(X0)")

    def estimate(self, X):
        self._check()
        j = int(self.rng.integers(self.m))
        g = self.estimate_for(j, X)
        self.component_evals += 2
        if self.rng.random() < self.p_update:
            self.anchor = np.array(X, dtype=float)
            self.anchor_full_gradient = self._full(self.anchor)
        return g

    def draws(self):
        return [(j, 1.0 / self.m) for j in range(self.m)]

    def estimate_for(self, draw, X):
        self._check()
        diff = self.oracle.component_gradient(draw, X) - self.oracle.component_gradient(draw, self.anchor)
        return self.oracle.scale * diff + self.anchor_full_gradient


ESTIMATORS = {
    "full": FullGradient,
    "minibatch": MinibatchGradient,
    "saga": SagaGradient,
    "lsvrg": LsvrgGradient,
}


def make_estimator(kind, oracle, seed=0, **kwargs):
    try:
        cls = ESTIMATORS[kind]
    except KeyError:
        raise ValueError(f"unknown estimator {kind!r}; known: {sorted(ESTIMATORS)}") from None
    return cls(oracle, seed=seed, **kwargs)


def estimator_variance_probe(est, X, trials=1000, seed=12345):
    """
    Mean and ``E||g - grad F(X)||^2`` of `est` at `X`.

    Enumerates every draw when there are at most `trials` of them, otherwise
    samples `trials` draws from a private generator. The estimator itself is
    left untouched.

    Returns
    -------
    emp_mean : ndarray
    emp_second_moment : float
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    full = est.oracle.gradient(X)
    draws = est.draws()
    if draws is not None and len(draws) <= trials:
        mean = np.zeros_like(full)
        second = 0.0
        for draw, p in draws:
            g = est.estimate_for(draw, X)
            mean += p * g
            second += p * float(la.norm(g - full) ** 2)
        return mean, second
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(trials):
        if isinstance(est, MinibatchGradient):
            draw = tuple(sorted(rng.choice(est.m, size=est.batch_size, replace=False)))
        else:
            draw = int(rng.integers(est.m))
        samples.append(est.estimate_for(draw, X))
    samples = np.array(samples)
    return samples.mean(axis=0), float(np.mean(np.sum((samples - full) ** 2, axis=1)))


#%% VARIANCE-REDUCTION CONSTANTS

def vr_constants(kind, L_max, m, p_update=None):
    r"""
    Default ``(c1, c2, c3, c4)`` of the variance-reduction assumption
    for uniform-sampling SAGA and L-SVRG on a mean-convention finite sum
    whose components are ``L_max``-smooth:

    SAGA:   ``(2 L_max, 2, 1/m, L_max/m)``
    L-SVRG: ``(2 L_max, 2, p, p L_max)``

    These are user-overridable defaults, not derived here.
    """
    if kind == "saga":
        return 2.0 * L_max, 2.0, 1.0 / m, L_max / m
    if kind == "lsvrg":
        p = 1.0 / m if p_update is None else p_update
        return 2.0 * L_max, 2.0, p, p * L_max
    raise ValueError(f"no variance-reduction constants for {kind!r}")


def vr_max_stepsize(c1, c2, c3, c4):
    r"""Upper bound :math:`1 / (2(c_1 + \kappa c_4))` with :math:`\kappa = c_2/c_3`."""
    kappa = c2 / c3
    return 1.0 / (2.0 * (c1 + kappa * c4))
