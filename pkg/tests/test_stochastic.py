import numpy as np
import pytest

from balpa.bench.generators import gen_lasso_eq
from balpa.bench.problems import FiniteSumLeastSquares
from balpa.opcore import LiftedSmooth, QuadraticOracle
from balpa.stochastic import (FullGradient, LsvrgGradient, MinibatchGradient, SagaGradient,
                              StepsizeSchedule, diminishing_schedule, estimator_variance_probe,
                              full_gradient, make_estimator, schedule_step,
                              strongly_convex_schedule, vr_constants, vr_max_stepsize)


def toy_sum(m=3, n=2, seed=0, p1=1):
    rng = np.random.default_rng(seed)
    f = FiniteSumLeastSquares(rng.standard_normal((m, 3, n)), rng.standard_normal((m, 3)))
    return LiftedSmooth(f, p1)


# schedules

def test_schedule_examples():
    a, eta = schedule_step(StepsizeSchedule("diminishing_bounded", c=2.0), 4)
    assert a == pytest.approx(0.25) and eta == pytest.approx(3.0)
    assert schedule_step(StepsizeSchedule("constant", alpha_bar=0.3), 17) == (0.3, 0.0)
    a, eta = schedule_step(StepsizeSchedule("strongly_convex", c=2.0, mu=1.0), 0)
    assert a == pytest.approx(1 / 3) and eta == pytest.approx(1.0)


def test_schedule_horizon_is_constant():
    s = diminishing_schedule(3.0, bounded=False, horizon_K=10)
    assert s(0) == s(9) == (1.0 / (4.0 + 3.0), 4.0)


@pytest.mark.parametrize("s", [diminishing_schedule(5.0), strongly_convex_schedule(5.0, 0.5),
                               StepsizeSchedule("diminishing_bounded", c=1.0, alpha_bar=0.2)])
def test_schedule_monotone_and_capped(s):
    steps = [schedule_step(s, k)[0] for k in range(500)]
    assert all(0 < a <= s.alpha_bar for a in steps)
    assert all(b <= a for a, b in zip(steps, steps[1:]))


def test_schedule_validation():
    with pytest.raises(ValueError):
        StepsizeSchedule("constant")
    with pytest.raises(ValueError):
        StepsizeSchedule("strongly_convex", c=1.0)
    with pytest.raises(ValueError):
        StepsizeSchedule("cosine", c=1.0)
    with pytest.raises(ValueError):
        schedule_step(diminishing_schedule(1.0), -1)


def test_default_c_is_one_plus_L():
    assert diminishing_schedule(4.0).c == 5.0
    assert strongly_convex_schedule(4.0, 1.0).alpha_bar == pytest.approx(1 / 6)


# estimators

def test_full_gradient_of_half_norm():
    F = LiftedSmooth(QuadraticOracle(np.eye(2)), 3)
    np.testing.assert_array_equal(full_gradient(F, np.array([1.0, 2.0, 5.0, 6.0, 7.0])),
                                  [1.0, 2.0, 0.0, 0.0, 0.0])


def test_identical_components():
    A = np.random.default_rng(1).standard_normal((1, 4, 2))
    f = FiniteSumLeastSquares(np.concatenate([A, A]), np.zeros((2, 4)))
    x = np.array([0.3, -1.0])
    np.testing.assert_allclose(f.gradient(x), f.component_gradient(0, x))


def test_lasso_loss_gradient_termwise():
    inst = gen_lasso_eq(8, m=4, p1=2, p2=2, seed=3)
    f = inst.oracle()
    x = np.random.default_rng(0).standard_normal(8)
    expect = sum(A.T @ (A @ x - a) for A, a in zip(inst.A, inst.a)) / inst.m
    np.testing.assert_allclose(f.gradient(x), expect, rtol=1e-12, atol=1e-12)
    assert f.value(x) == pytest.approx(f.value_direct(x), rel=1e-12)


def test_saga_zero_variance_state():
    F = toy_sum()
    X = np.array([0.5, -0.2, 9.0])
    est = SagaGradient(F, seed=0).initialize(X)
    for _ in range(5):
        np.testing.assert_allclose(est.estimate(X), F.gradient(X), atol=1e-14)
    mean, var = estimator_variance_probe(est, X)
    assert var < 1e-28


def test_saga_single_component():
    F = toy_sum(m=1)
    est = SagaGradient(F, seed=2).initialize(np.zeros(3))
    rng = np.random.default_rng(0)
    for _ in range(5):
        X = rng.standard_normal(3)
        np.testing.assert_allclose(est.estimate(X), F.gradient(X), atol=1e-14)


def test_saga_table_tracks_last_sample():
    F = toy_sum(m=3)
    est = SagaGradient(F, seed=7).initialize(np.zeros(3))
    rng = np.random.default_rng(1)
    last = {}
    for _ in range(20):
        X = rng.standard_normal(3)
        probe = np.random.default_rng(0)
        probe.bit_generator.state = est.rng.bit_generator.state
        j = int(probe.integers(3))
        est.estimate(X)
        last[j] = X
    for j, X in last.items():
        np.testing.assert_array_equal(est.table[j], F.component_gradient(j, X))


def test_saga_exhaustive_unbiased():
    F = toy_sum(m=3)
    est = SagaGradient(F, seed=0).initialize(np.array([1.0, 1.0, 0.0]))
    X = np.array([-0.4, 0.9, 0.0])
    mean = sum(p * est.estimate_for(j, X) for j, p in est.draws())
    np.testing.assert_allclose(mean, F.gradient(X), atol=1e-14)


def test_saga_requires_initialize():
    with pytest.raises(RuntimeError):
        SagaGradient(toy_sum()).estimate(np.zeros(3))


def test_lsvrg_at_anchor():
    F = toy_sum()
    X = np.array([0.2, 0.1, 0.0])
    est = LsvrgGradient(F, seed=0).initialize(X)
    for j in range(3):
        np.testing.assert_array_equal(est.estimate_for(j, X), est.anchor_full_gradient)


def test_lsvrg_always_refreshing():
    F = toy_sum()
    est = LsvrgGradient(F, p_update=1.0, seed=0).initialize(np.zeros(3))
    rng = np.random.default_rng(4)
    prev = np.zeros(3)
    for _ in range(4):
        X = rng.standard_normal(3)
        g = est.estimate(X)
        # g is formed against the previous anchor, then the anchor moves to X
        j_free = [est.oracle.scale * (F.component_gradient(j, X) - F.component_gradient(j, prev))
                  + F.gradient(prev) for j in range(3)]
        assert any(np.allclose(g, c, atol=1e-14) for c in j_free)
        np.testing.assert_array_equal(est.anchor, X)
        np.testing.assert_allclose(est.anchor_full_gradient, F.gradient(X))
        prev = X


def test_lsvrg_exhaustive_unbiased():
    F = toy_sum(m=4, seed=2)
    est = LsvrgGradient(F, seed=0).initialize(np.array([0.5, 0.5, 0.0]))
    X = np.array([1.0, -3.0, 0.0])
    mean, _ = estimator_variance_probe(est, X)
    np.testing.assert_allclose(mean, F.gradient(X), atol=1e-13)


def test_minibatch_two_point_variance():
    F = toy_sum(m=2)
    X = np.array([0.7, -0.1, 0.0])
    est = MinibatchGradient(F, 1, seed=0)
    mean, var = estimator_variance_probe(est, X)
    np.testing.assert_allclose(mean, F.gradient(X), atol=1e-14)
    diff = F.component_gradient(0, X) - F.component_gradient(1, X)
    assert var == pytest.approx(0.25 * diff @ diff, rel=1e-12)


def test_minibatch_batches_and_sampling():
    F = toy_sum(m=5)
    est = MinibatchGradient(F, 3, seed=1)
    assert len(est.draws()) == 10
    X = np.array([0.1, 0.2, 0.0])
    mean, _ = estimator_variance_probe(est, X)
    np.testing.assert_allclose(mean, F.gradient(X), atol=1e-14)
    est.estimate(X)
    assert est.component_evals == 3 and est.epochs == pytest.approx(0.6)
    sampled_mean, _ = estimator_variance_probe(est, X, trials=5, seed=0)
    assert sampled_mean.shape == X.shape
    with pytest.raises(ValueError):
        MinibatchGradient(F, 6)


def test_full_estimator_zero_variance():
    F = toy_sum()
    est = FullGradient(F)
    X = np.ones(3)
    _, var = estimator_variance_probe(est, X)
    assert var == 0.0
    est.estimate(X)
    assert est.epochs == 1.0


def test_make_estimator():
    F = toy_sum()
    assert isinstance(make_estimator("lsvrg", F, seed=3, p_update=0.5), LsvrgGradient)
    with pytest.raises(ValueError, match="unknown estimator"):
        make_estimator("adam", F)


def test_vr_constants():
    assert vr_constants("saga", 2.0, 4) == (4.0, 2.0, 0.25, 0.5)
    assert vr_constants("lsvrg", 2.0, 4) == (4.0, 2.0, 0.25, 0.5)
    # kappa = 8, so 1 / (2 (4 + 8 * 0.5)) = 1/16 = 1/(8 L_max)
    assert vr_max_stepsize(*vr_constants("saga", 2.0, 4)) == pytest.approx(1 / 16)
    with pytest.raises(ValueError):
        vr_constants("minibatch", 1.0, 2)
