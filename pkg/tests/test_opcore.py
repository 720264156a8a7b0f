import numpy as np
import pytest
from numpy import linalg as la
from scipy import sparse

from balpa.opcore import (CompositeProblem, LiftedOperator, MatrixOperator, QuadraticOracle,
                          RankDeficientError, ZeroOperator, as_operator, kkt_oracle, lift_problem,
                          load_matrix, load_vector, op_norm_sq, save_matrix, save_vector)
from balpa.prox import L1Norm, Zero


def test_apply_diagonal():
    D = MatrixOperator([[3.0, 0.0], [0.0, 1.0]])
    np.testing.assert_array_equal(D.apply(np.ones(2)), [3.0, 1.0])


def test_apply_zero_operator():
    Z = ZeroOperator(3, 4)
    np.testing.assert_array_equal(Z.apply(np.arange(4.0)), np.zeros(3))
    np.testing.assert_array_equal(Z.adjoint(np.ones(3)), np.zeros(4))


def test_apply_matches_row_dot_products():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((4, 3))
    v = rng.standard_normal(3)
    expect = np.array([sum(A[i, j] * v[j] for j in range(3)) for i in range(4)])
    np.testing.assert_allclose(MatrixOperator(A).apply(v), expect, rtol=0, atol=1e-14)


def test_apply_rejects_wrong_length():
    with pytest.raises(ValueError):
        MatrixOperator(np.eye(3)).apply(np.ones(2))


def test_sparse_operator_matches_dense():
    rng = np.random.default_rng(1)
    A = sparse.random(6, 5, density=0.4, random_state=1, format="csr")
    op = MatrixOperator(A)
    v, w = rng.standard_normal(5), rng.standard_normal(6)
    np.testing.assert_allclose(op.apply(v), A.toarray() @ v)
    np.testing.assert_allclose(op.adjoint(w), A.toarray().T @ w)


def test_op_norm_sq_small_cases():
    assert abs(op_norm_sq(MatrixOperator(np.diag([3.0, 1.0]))) - 9.0) < 1e-8
    for n in (1, 4, 7):
        assert abs(op_norm_sq(MatrixOperator(np.eye(n))) - 1.0) < 1e-8
    assert op_norm_sq(ZeroOperator(2, 3)) == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_op_norm_sq_matches_eigensolve(seed):
    A = np.random.default_rng(seed).standard_normal((5, 4))
    est = op_norm_sq(MatrixOperator(A), tol=1e-12)
    true = la.eigvalsh(A.T @ A)[-1]
    assert abs(est - true) <= 1e-6 * true


def test_lift_scalar_example():
    p = CompositeProblem(f=QuadraticOracle([[1.0]]), r=L1Norm(1), B=MatrixOperator([[2.0]]),
                         D=MatrixOperator([[1.0]]), d=np.array([5.0]))
    lp = lift_problem(p)
    x, y = 1.5, 0.7
    np.testing.assert_allclose(lp.Dop.apply(np.array([x, y])), [x, 2 * x - y])
    np.testing.assert_array_equal(lp.dvec, [5.0, 0.0])


def test_lift_without_r_term():
    D = MatrixOperator([[1.0, 2.0]])
    p = CompositeProblem(f=QuadraticOracle(np.eye(2)), r=Zero(0), B=ZeroOperator(0, 2),
                         D=D, d=np.array([1.0]))
    lp = lift_problem(p)
    assert lp.Dop is D
    assert lp.dim == 2 and lp.p1 == 0
    np.testing.assert_array_equal(lp.dvec, [1.0])


def test_lifted_adjoint_matches_dense_transpose():
    rng = np.random.default_rng(3)
    D, B = rng.standard_normal((3, 2)), rng.standard_normal((2, 2))
    Dop = LiftedOperator(MatrixOperator(D), MatrixOperator(B))
    dense = np.block([[D, np.zeros((3, 2))], [B, -np.eye(2)]])
    np.testing.assert_allclose(Dop.to_dense(), dense)
    mu, nu = rng.standard_normal(3), rng.standard_normal(2)
    np.testing.assert_allclose(Dop.adjoint(np.concatenate([mu, nu])),
                               np.concatenate([D.T @ mu + B.T @ nu, -nu]))


def test_lifted_smooth_keeps_L_and_pads_gradient():
    f = QuadraticOracle(np.diag([2.0, 3.0]), [1.0, -1.0])
    p = CompositeProblem(f=f, r=L1Norm(1), B=MatrixOperator([[1.0, 1.0]]),
                         D=MatrixOperator(np.zeros((0, 2))), d=np.zeros(0))
    lp = lift_problem(p)
    assert lp.F.L == f.L == 3.0
    X = np.array([1.0, 2.0, -4.0])
    np.testing.assert_allclose(lp.F.gradient(X), [3.0, 5.0, 0.0])
    assert lp.R.value(X) == 4.0


def test_composite_problem_checks_shapes():
    with pytest.raises(ValueError):
        CompositeProblem(f=QuadraticOracle(np.eye(2)), r=L1Norm(2), B=MatrixOperator(np.eye(3)),
                         D=MatrixOperator(np.zeros((0, 2))), d=np.zeros(0))


def test_kkt_hand_examples():
    x, lam = kkt_oracle(np.eye(2), np.zeros(2), MatrixOperator([[1.0, 1.0]]), [2.0])
    np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-14)
    np.testing.assert_allclose(lam, [-1.0], atol=1e-14)

    x, lam = kkt_oracle(np.diag([2.0, 2.0]), [-2.0, 0.0], MatrixOperator([[0.0, 1.0]]), [0.0])
    np.testing.assert_allclose(x, [1.0, 0.0], atol=1e-14)
    np.testing.assert_allclose(lam, [0.0], atol=1e-14)


def test_kkt_unconstrained_limit():
    H = np.array([[2.0, 0.5], [0.5, 1.0]])
    c = np.array([1.0, -1.0])
    x, lam = kkt_oracle(H, c, None, np.zeros(0))
    np.testing.assert_allclose(x, -la.solve(H, c))
    assert lam.size == 0


def test_kkt_rank_deficient():
    with pytest.raises(RankDeficientError):
        kkt_oracle(np.eye(3), np.zeros(3), np.array([[1.0, 0, 0], [2.0, 0, 0]]), [1.0, 2.0])


def test_as_operator_passthrough_and_wrap():
    op = MatrixOperator(np.eye(2))
    assert as_operator(op) is op
    assert as_operator(np.ones((2, 3))).shape == (2, 3)


def test_matrix_and_vector_roundtrip(tmp_path):
    A = np.random.default_rng(0).standard_normal((3, 4))
    save_matrix(tmp_path / "A.txt", A)
    np.testing.assert_array_equal(load_matrix(tmp_path / "A.txt"), A)
    v = np.array([1.5, -2.0, 1e-300])
    save_vector(tmp_path / "v.txt", v)
    np.testing.assert_array_equal(load_vector(tmp_path / "v.txt"), v)


def test_load_matrix_bad_count(tmp_path):
    (tmp_path / "bad.txt").write_text("2 2\n1 2 3\n")
    with pytest.raises(ValueError, match="expected 4"):
        load_matrix(tmp_path / "bad.txt")
