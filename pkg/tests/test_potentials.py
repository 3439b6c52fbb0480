import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cavi_mf.errors import (
    DimensionMismatch,
    DuplicatePair,
    IndexOutOfRange,
    NonFiniteInput,
    NonPositiveSigma,
    NotPositiveDefinite,
    NotSymmetric,
)
from cavi_mf.potentials import (
    PairTerm,
    Unary,
    as_pairwise,
    bilinear_pair,
    double_well_prior,
    gaussian_prior,
    make_pairwise,
    make_quadratic,
    make_regression,
    regression_as_quadratic,
)

half_sq = Unary(f=lambda x: 0.5 * np.asarray(x) ** 2, df=lambda x: np.asarray(x))


class TestMakeQuadratic:
    def test_extreme_eigenvalues(self):
        # roots of t^2 - 4t + 3, the characteristic polynomial of [[2,1],[1,2]]
        tr, det = 4.0, 3.0
        disc = math.sqrt(tr * tr - 4 * det)
        lo, hi = (tr - disc) / 2, (tr + disc) / 2
        p = make_quadratic([[2, 1], [1, 2]], [0, 0])
        assert p.lam == pytest.approx(lo, abs=1e-12)
        assert p.lipschitz == pytest.approx(hi, abs=1e-12)
        assert (lo, hi) == (1.0, 3.0)

    def test_identity(self):
        p = make_quadratic(np.eye(3), np.zeros(3))
        assert p.lam == p.lipschitz == 1.0
        assert p.log_partition == pytest.approx(1.5 * math.log(2 * math.pi), rel=1e-14)

    def test_log_partition_matches_quadrature(self):
        from scipy import integrate

        A = np.array([[2.0, 0.5], [0.5, 1.0]])
        p = make_quadratic(A, [0.3, -0.2])
        val, _ = integrate.dblquad(lambda y, x: math.exp(-p.value([x, y])), -12, 12, -12, 12,
                                   epsabs=1e-12)
        assert p.log_partition == pytest.approx(math.log(val), abs=1e-8)

    def test_indefinite(self):
        with pytest.raises(NotPositiveDefinite):
            make_quadratic([[1, 2], [2, 1]], [0, 0])

    def test_asymmetric(self):
        with pytest.raises(NotSymmetric):
            make_quadratic([[1, 0.5], [0.4, 1]], [0, 0])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            make_quadratic(np.eye(2), [0, 0, 0])

    def test_near_singular_rejected(self):
        with pytest.raises(NotPositiveDefinite):
            make_quadratic(np.diag([1.0, 1e-12]), [0, 0])


class TestMakePairwise:
    def test_bilinear_example(self):
        p = make_pairwise([half_sq, half_sq], [bilinear_pair(0, 1, 1.0)])
        assert p.value([1.0, 1.0]) == 0.5 + 0.5 + 1.0

    def test_single_block(self):
        p = make_pairwise([half_sq])
        assert p.value([0.0]) == 0.0
        assert p.value([2.0]) == 2.0

    def test_misordered_pair(self):
        with pytest.raises(IndexOutOfRange):
            make_pairwise([half_sq, half_sq], [bilinear_pair(1, 0, 1.0)])

    def test_out_of_range(self):
        with pytest.raises(IndexOutOfRange):
            make_pairwise([half_sq, half_sq], [bilinear_pair(0, 2, 1.0)])

    def test_duplicate(self):
        with pytest.raises(DuplicatePair):
            make_pairwise([half_sq, half_sq], [bilinear_pair(0, 1, 1.0), bilinear_pair(0, 1, 2.0)])


class TestMakeRegression:
    def test_lambda_and_lipschitz_from_spectrum(self):
        # X^T X = diag(0.5, 2) has eigenvalue range [0.5, 2]
        X = np.diag([math.sqrt(0.5), math.sqrt(2.0)])
        p = make_regression([0.0, 0.0], X, 1.0, gaussian_prior(1.0))
        assert p.lam == pytest.approx(1.5)
        assert p.lipschitz == pytest.approx(3.0)

    def test_sigma_scaling(self):
        X = np.diag([math.sqrt(0.5), math.sqrt(2.0)])
        p = make_regression([0.0, 0.0], X, 2.0, gaussian_prior(1.0))
        assert p.lam == pytest.approx(1 + 0.5 / 4)
        assert p.lipschitz == pytest.approx(1 + 2.0 / 4)

    def test_no_data_is_prior(self):
        prior = double_well_prior(1.5)
        p = make_regression(np.zeros(5), np.zeros((5, 3)), 1.0, prior)
        assert p.lam == prior.a and p.lipschitz == prior.a_upper
        assert p.pairs == ()
        x = np.array([0.3, -1.2, 2.0])
        assert p.value(x) == pytest.approx(float(np.sum(prior.f(x))))

    def test_nonpositive_sigma(self):
        with pytest.raises(NonPositiveSigma):
            make_regression([1.0], [[1.0]], 0.0, gaussian_prior())

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            make_regression([1.0, 2.0], [[1.0]], 1.0, gaussian_prior())

    def test_posterior_matches_quadratic_up_to_constant(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(20, 3))
        y = rng.normal(size=20)
        pr = make_regression(y, X, 0.7, gaussian_prior(1.3))
        pq = regression_as_quadratic(y, X, 0.7, 1.3)
        pts = rng.normal(size=(10, 3))
        diffs = [pr.value(x) - pq.value(x) for x in pts]
        assert np.ptp(diffs) < 1e-9


class TestEval:
    def test_quadratic_minimum(self):
        p = make_quadratic([[2, 1], [1, 2]], [0.5, -1.0])
        assert p.value([0.5, -1.0]) == 0.0
        assert p.grad_i([0.5, -1.0], 0) == 0.0

    def test_quadratic_point(self):
        p = make_quadratic([[2, 1], [1, 2]], [0, 0])
        # x^T A x / 2 = (2 + 2 + 2)/2 and (A x)_1 = 3
        assert p.value([1, 1]) == 3.0
        assert p.grad_i([1, 1], 0) == 3.0

    def test_non_finite(self):
        p = make_quadratic(np.eye(2), [0, 0])
        with pytest.raises(NonFiniteInput):
            p.value([np.nan, 0.0])
        with pytest.raises(NonFiniteInput):
            p.grad_i([np.inf, 0.0], 0)

    def test_bad_index(self):
        p = make_quadratic(np.eye(2), [0, 0])
        with pytest.raises(IndexOutOfRange):
            p.grad_i([0.0, 0.0], 2)


def _spd(seed, d):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(d, d))
    return B @ B.T + 0.5 * np.eye(d), rng.normal(size=d)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), d=st.integers(1, 5))
def test_quadratic_agrees_with_pairwise_expansion(seed, d):
    A, m = _spd(seed, d)
    p = make_quadratic(A, m)
    q = as_pairwise(p)
    rng = np.random.default_rng(seed + 1)
    for x in rng.normal(scale=2.0, size=(100, d)):
        a, b = p.value(x), q.value(x)
        assert abs(a - b) <= 1e-10 * max(1.0, abs(a))


def _pairwise_nonlinear():
    logcosh = Unary(f=lambda x: np.log(np.cosh(x)) + 0.5 * np.asarray(x) ** 2,
                    df=lambda x: np.tanh(x) + np.asarray(x))
    quartic = Unary(f=lambda x: 0.25 * np.asarray(x) ** 4 + np.asarray(x) ** 2,
                    df=lambda x: np.asarray(x) ** 3 + 2 * np.asarray(x))
    soft = PairTerm(0, 2,
                    g=lambda x, y: np.log1p(np.exp(x - y)),
                    dg_dx=lambda x, y: 1 / (1 + np.exp(y - x)),
                    dg_dy=lambda x, y: -1 / (1 + np.exp(y - x)))
    return make_pairwise([logcosh, quartic, half_sq], [soft, bilinear_pair(1, 2, 0.3)])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.integers(0, 2),
       st.sampled_from(["quadratic", "pairwise", "expanded"]))
def test_gradient_matches_central_differences(x, i, form):
    A, m = _spd(7, 3)
    p = {"quadratic": make_quadratic(A, m), "expanded": as_pairwise(make_quadratic(A, m)),
         "pairwise": _pairwise_nonlinear()}[form]
    h = 1e-5
    e = np.zeros(3)
    e[i] = h
    x = np.array(x)
    fd = (p.value(x + e) - p.value(x - e)) / (2 * h)
    assert p.grad_i(x, i) == pytest.approx(fd, abs=1e-5)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), d=st.integers(1, 6))
def test_quadratic_curvature_between_lambda_and_L(seed, d):
    A, m = _spd(seed, d)
    p = make_quadratic(A, m)
    assert p.lam <= p.lipschitz
    v = np.random.default_rng(seed).normal(size=d)
    vv = float(v @ v)
    q = float(v @ p.A @ v)
    assert p.lam * vv <= q * (1 + 1e-12) and q <= p.lipschitz * vv * (1 + 1e-12)


def test_shift_changes_value_and_partition_only():
    p = make_quadratic([[2, 1], [1, 2]], [0, 0])
    q = p.shifted(5.0)
    assert q.value([1, 1]) == p.value([1, 1]) + 5.0
    assert q.log_partition == pytest.approx(p.log_partition - 5.0)
    assert q.grad_i([1, 1], 0) == p.grad_i([1, 1], 0)
    assert q.envelope.alpha == p.envelope.alpha + 5.0


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), d=st.integers(1, 4))
def test_quadratic_envelope_holds(seed, d):
    A, m = _spd(seed, d)
    p = make_quadratic(A, m)
    rng = np.random.default_rng(seed)
    for x in rng.normal(scale=5.0, size=(50, d)):
        assert p.value(x) >= p.envelope.alpha + p.envelope.beta * np.linalg.norm(x) - 1e-9
