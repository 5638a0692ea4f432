import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from sgpstab.objectives import (LogisticL2, PLQuadratic, Sample, empirical_minimizer, empirical_risk, gradient,
                                loss, pl_residual, sigmoid, smoothness_info, softplus, stack)

from oracles import central_diff, logistic_loss_mp


def test_logistic_at_zero():
    s = Sample.from_dense([1.0, -2.0, 0.5], 1)
    assert loss(LogisticL2(3, 1e-4), np.zeros(3), s) == pytest.approx(math.log(2), abs=1e-15)
    np.testing.assert_allclose(gradient(LogisticL2(3, 0.0), np.zeros(3), s), -0.5 * s.dense(3))


def test_quadratic_examples():
    q = PLQuadratic(np.eye(2))
    empty = Sample(np.array([], dtype=int), np.array([]), 1)
    assert loss(q, np.array([3.0, 4.0]), empty) == 12.5
    np.testing.assert_array_equal(gradient(q, np.array([1.0, -2.0]), empty), [1.0, -2.0])


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        loss(LogisticL2(3), np.zeros(4), Sample.from_dense([1, 0, 0], 1))


def test_stable_for_large_margins():
    for z in (-800.0, -700.0, 700.0, 800.0):
        assert np.isfinite(softplus(np.array([z]))).all()
        assert 0 <= sigmoid(np.array([z]))[0] <= 1
    s = Sample.from_dense([1.0], -1)
    assert loss(LogisticL2(1, 0), np.array([700.0]), s) == pytest.approx(700.0)


@given(st.integers(0, 10_000))
def test_logistic_matches_extended_precision(seed):
    rng = np.random.default_rng(seed)
    d = 6
    w = rng.normal(0, 5, d)
    a = rng.normal(0, 3, d)
    b = rng.choice([-1.0, 1.0])
    got = loss(LogisticL2(d, 1e-4), w, Sample.from_dense(a, b))
    assert got == pytest.approx(logistic_loss_mp(w, a, b, 1e-4), rel=1e-12, abs=1e-300)


@given(st.integers(0, 10_000), st.booleans())
def test_gradient_matches_finite_differences(seed, logistic):
    rng = np.random.default_rng(seed)
    d = 5
    if logistic:
        model = LogisticL2(d, 1e-2)
    else:
        M = rng.normal(size=(d, d))
        model = PLQuadratic(M @ M.T + np.eye(d), rng.normal(size=d))
    w = rng.normal(size=d)
    s = Sample.from_dense(rng.normal(size=d), rng.choice([-1.0, 1.0]))
    g = gradient(model, w, s)
    fd = central_diff(lambda x: loss(model, x, s), w)
    assert np.linalg.norm(g - fd) <= 1e-6 * max(1.0, np.linalg.norm(g))


@given(st.integers(0, 10_000))
def test_logistic_midpoint_convexity(seed):
    rng = np.random.default_rng(seed)
    model = LogisticL2(4, 1e-4)
    s = Sample.from_dense(rng.normal(size=4), 1)
    x, y = rng.normal(0, 3, 4), rng.normal(0, 3, 4)
    assert loss(model, (x + y) / 2, s) <= (loss(model, x, s) + loss(model, y, s)) / 2 + 1e-12


def test_batch_matches_single_sample():
    rng = np.random.default_rng(0)
    samples = [Sample.from_dense(rng.normal(size=4) * (rng.random(4) < .6), rng.choice([-1., 1.])) for _ in range(30)]
    X, y = stack(samples, 4)
    w = rng.normal(size=4)
    for model in (LogisticL2(4, 1e-3), PLQuadratic(np.diag([1., 2., 3., 4.]), rng.normal(size=4))):
        per = np.array([loss(model, w, s) for s in samples])
        np.testing.assert_allclose(model.losses(w, X, y), per, rtol=1e-13, atol=1e-14)
        grads = model.row_grads(np.tile(w, (30, 1)), X.toarray(), y)
        np.testing.assert_allclose(grads, [gradient(model, w, s) for s in samples], rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(model.full_gradient(w, X, y), grads.mean(axis=0), rtol=1e-12, atol=1e-14)
        assert empirical_risk(model, w, X, y) == pytest.approx(per.mean(), rel=1e-13)


def test_empirical_minimizer_zero_gradient():
    rng = np.random.default_rng(1)
    q = PLQuadratic(np.diag([1., 4.]), rng.normal(size=2))
    X = sp.csr_matrix(rng.normal(size=(40, 2)))
    w = empirical_minimizer(q, X)
    assert np.linalg.norm(q.full_gradient(w, X, np.ones(40))) < 1e-12


def test_smoothness_quadratic():
    info = smoothness_info(PLQuadratic(np.diag([1.0, 4.0])), sp.csr_matrix(np.ones((1, 2))), 1.0)
    assert (info.L, info.alpha, info.kappa) == (4.0, 1.0, 4.0)


def test_smoothness_logistic_unit_features():
    rng = np.random.default_rng(2)
    A = rng.normal(size=(200, 5))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    model = LogisticL2(5, 1e-4)
    info = smoothness_info(model, sp.csr_matrix(A), 10.0)
    assert info.L == pytest.approx(0.2501)
    assert info.G == pytest.approx(1.001)
    assert info.kappa is None
    # sampled gradient norms on the ball stay under G, Hessian norms under L
    for _ in range(200):
        w = rng.normal(size=5)
        w *= 10 * rng.random() / np.linalg.norm(w)
        k = rng.integers(200)
        s = Sample.from_dense(A[k], rng.choice([-1., 1.]))
        assert np.linalg.norm(gradient(model, w, s)) <= info.G + 1e-12
        p = sigmoid(np.array([s.label * A[k] @ w]))[0]
        H = p * (1 - p) * np.outer(A[k], A[k]) + 1e-4 * np.eye(5)
        assert np.linalg.norm(H, 2) <= info.L + 1e-12
    with pytest.raises(ValueError):
        smoothness_info(model, sp.csr_matrix((0, 5)), 1.0)


def test_pl_residual():
    q = PLQuadratic(np.diag([1.0, 4.0]), np.array([1.0, 2.0]))
    lhs, rhs = pl_residual(q, q.minimizer())
    assert lhs == pytest.approx(0, abs=1e-24) and rhs == pytest.approx(0, abs=1e-24)
    rng = np.random.default_rng(3)
    for _ in range(1000):
        lhs, rhs = pl_residual(q, rng.normal(0, 5, 2))
        assert lhs <= rhs * (1 + 1e-12)
    eye = PLQuadratic(np.eye(3), np.ones(3))
    w = rng.normal(size=3)
    lhs, rhs = pl_residual(eye, w)
    assert lhs == pytest.approx(rhs, rel=1e-14)


def test_quadratic_validation():
    with pytest.raises(ValueError):
        PLQuadratic(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        Sample(np.array([0]), np.array([1.0]), 0.5)
