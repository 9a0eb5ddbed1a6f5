import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from wddp.data import normalize_rows
from wddp.losses import (PL_SMOOTHNESS, LabeledDataset, LogisticLoss, LossMetadata, PLScalarLoss,
                         QuadraticLoss, RegularizedLogisticLoss, certified_pl_constant, get_loss,
                         logistic_gradient, logistic_loss, pl_infimum_ratio, pl_test_function,
                         pl_verify, regularized_logistic)

from oracles import central_fd, naive_logistic_loss, pl_ratio_infimum

# frozen from oracles.pl_ratio_infimum() on 400001 points
ORACLE_PL_INF = 0.17553098598906502


def random_data(rng, n=30, d=4, scale=1.0):
    x = normalize_rows(rng.standard_normal((n, d))) * scale
    y = (rng.random(n) < 0.5).astype(float)
    return LabeledDataset(x, y)


finite = st.floats(-5, 5, allow_nan=False)


class TestMetadata:
    def test_rejects(self):
        with pytest.raises(ValueError):
            LossMetadata(0, 1)
        with pytest.raises(ValueError):
            LossMetadata(1, 0.1, strong_convexity=0.5)
        with pytest.raises(ValueError):
            LossMetadata(1, 1, pl_constant=0)

    def test_curvature_prefers_strong_convexity(self):
        assert LossMetadata(1, 1, strong_convexity=0.3, pl_constant=0.1).curvature == 0.3
        assert LossMetadata(1, 1, pl_constant=0.1).curvature == 0.1
        assert LossMetadata(1, 1).curvature is None

    def test_dataset_checks(self):
        with pytest.raises(ValueError):
            LabeledDataset(np.zeros(3), np.zeros(3))
        with pytest.raises(ValueError):
            LabeledDataset(np.zeros((3, 2)), np.zeros(2))
        with pytest.raises(ValueError, match="exceeds 1"):
            LabeledDataset(np.array([[2.0, 0.0]]), np.zeros(1)).check_normalized()
        with pytest.raises(ValueError, match="0/1"):
            LabeledDataset(np.array([[0.5, 0.0]]), np.array([2.0])).check_normalized()


class TestLogistic:
    def test_theta_zero_is_ln2(self):
        data = random_data(np.random.default_rng(0))
        assert logistic_loss(np.zeros(4), data) == pytest.approx(math.log(2), abs=1e-15)

    def test_metadata(self):
        meta = LogisticLoss().metadata
        assert (meta.lipschitz_g, meta.smoothness_l, meta.strong_convexity) == (1.0, 0.25, None)

    def test_matches_naive(self):
        rng = np.random.default_rng(1)
        data = random_data(rng, n=50, d=5)
        for _ in range(20):
            theta = rng.standard_normal(5) * 3
            assert logistic_loss(theta, data) == pytest.approx(naive_logistic_loss(theta, data.features, data.labels), rel=1e-12)

    def test_extreme_margins_stay_finite(self):
        data = LabeledDataset(np.array([[1.0], [1.0]]), np.array([1.0, 0.0]))
        theta = np.array([800.0])
        assert np.isfinite(logistic_loss(theta, data))
        assert logistic_loss(theta, data) == pytest.approx(400.0, rel=1e-12)
        g = logistic_gradient(theta, data)
        assert np.all(np.isfinite(g)) and abs(g[0] - 0.5) < 1e-12

    @settings(max_examples=60)
    @given(seed=st.integers(0, 10**6))
    def test_gradient_matches_fd(self, seed):
        rng = np.random.default_rng(seed)
        data = random_data(rng, n=20, d=3)
        theta = rng.standard_normal(3) * 2
        fd = central_fd(lambda t: logistic_loss(t, data), theta)
        g = logistic_gradient(theta, data)
        assert np.linalg.norm(g - fd) <= 1e-6 * max(1.0, np.linalg.norm(fd))

    @settings(max_examples=60)
    @given(seed=st.integers(0, 10**6), scale=st.floats(0, 100))
    def test_per_example_gradients_bounded(self, seed, scale):
        rng = np.random.default_rng(seed)
        data = random_data(rng, n=40, d=6)
        theta = rng.standard_normal(6) * scale
        norms = np.linalg.norm(LogisticLoss().per_example_gradients(theta, data), axis=1)
        assert norms.max() <= 1 + 1e-12

    @settings(max_examples=40)
    @given(seed=st.integers(0, 10**6))
    def test_smoothness_quarter(self, seed):
        rng = np.random.default_rng(seed)
        data = random_data(rng, n=30, d=4)
        a, b = rng.standard_normal(4) * 3, rng.standard_normal(4) * 3
        diff = np.linalg.norm(logistic_gradient(a, data) - logistic_gradient(b, data))
        assert diff <= 0.25 * np.linalg.norm(a - b) * (1 + 1e-12)

    def test_shard_gradients_match_loop(self):
        rng = np.random.default_rng(3)
        data = random_data(rng, n=25, d=3)
        offsets = [0, 4, 11, 25]
        thetas = rng.standard_normal((3, 3))
        loss = LogisticLoss()
        fast = loss.shard_gradients(thetas, data, offsets)
        for j in range(3):
            shard = data.subset(range(offsets[j], offsets[j + 1]))
            assert np.allclose(fast[j], loss.gradient(thetas[j], shard), rtol=1e-13, atol=1e-15)


class TestRegularized:
    def test_metadata(self):
        meta = RegularizedLogisticLoss(0.1, radius=10).metadata
        assert meta.lipschitz_g == pytest.approx(2.0)
        assert meta.smoothness_l == pytest.approx(0.35)
        assert meta.strong_convexity == 0.1

    def test_rejects(self):
        with pytest.raises(ValueError):
            RegularizedLogisticLoss(0)
        with pytest.raises(ValueError):
            RegularizedLogisticLoss(0.1, radius=0)

    def test_penalty_at_origin_vanishes(self):
        data = random_data(np.random.default_rng(0))
        val, grad = regularized_logistic(np.zeros(4), data, 0.5)
        assert val == pytest.approx(math.log(2))
        assert np.allclose(grad, logistic_gradient(np.zeros(4), data))

    @settings(max_examples=60)
    @given(seed=st.integers(0, 10**6), lam=st.floats(1e-3, 2))
    def test_gradient_matches_fd(self, seed, lam):
        rng = np.random.default_rng(seed)
        data = random_data(rng, n=20, d=3)
        theta = rng.standard_normal(3) * 2
        fd = central_fd(lambda t: regularized_logistic(t, data, lam)[0], theta)
        g = regularized_logistic(theta, data, lam)[1]
        assert np.linalg.norm(g - fd) <= 1e-6 * max(1.0, np.linalg.norm(fd))

    @settings(max_examples=40)
    @given(seed=st.integers(0, 10**6))
    def test_lipschitz_in_ball(self, seed):
        rng = np.random.default_rng(seed)
        loss = RegularizedLogisticLoss(0.1, radius=10)
        data = random_data(rng, n=30, d=4)
        theta = rng.standard_normal(4)
        theta *= 10 * rng.random() / np.linalg.norm(theta)
        norms = np.linalg.norm(loss.per_example_gradients(theta, data), axis=1)
        assert norms.max() <= loss.metadata.lipschitz_g * (1 + 1e-12)

    def test_strong_convexity_inequality(self):
        rng = np.random.default_rng(5)
        loss = RegularizedLogisticLoss(0.2)
        data = random_data(rng, n=40, d=3)
        for _ in range(200):
            a, b = rng.standard_normal(3) * 3, rng.standard_normal(3) * 3
            lhs = loss.value(b, data)
            rhs = loss.value(a, data) + loss.gradient(a, data) @ (b - a) + 0.1 * np.sum((b - a) ** 2)
            assert lhs >= rhs - 1e-12

    def test_shard_gradients(self):
        rng = np.random.default_rng(4)
        data = random_data(rng, n=12, d=2)
        loss = RegularizedLogisticLoss(0.3)
        thetas = rng.standard_normal((2, 2))
        fast = loss.shard_gradients(thetas, data, [0, 5, 12])
        assert np.allclose(fast[1], loss.gradient(thetas[1], data.subset(range(5, 12))))


class TestQuadratic:
    def test_minimizer_is_mean(self):
        rng = np.random.default_rng(0)
        data = random_data(rng, n=10, d=3)
        loss = QuadraticLoss()
        assert np.allclose(loss.gradient(data.features.mean(axis=0), data), 0)

    def test_shard_gradients(self):
        rng = np.random.default_rng(1)
        data = random_data(rng, n=9, d=2)
        loss = QuadraticLoss()
        thetas = rng.standard_normal((3, 2))
        fast = loss.shard_gradients(thetas, data, [0, 2, 5, 9])
        for j, (lo, hi) in enumerate([(0, 2), (2, 5), (5, 9)]):
            assert np.allclose(fast[j], loss.gradient(thetas[j], data.subset(range(lo, hi))))


class TestPL:
    def test_values(self):
        f, g, meta = pl_test_function(np.array([0.0]))
        assert f == 0 and g[0] == 0
        assert meta.smoothness_l == PL_SMOOTHNESS == 8.0
        assert meta.lipschitz_g == 23.0

    def test_not_convex(self):
        # f'' = 2 + 6 cos 2t is negative near t = pi/2
        t = math.pi / 2
        h = 1e-4
        second = (PLScalarLoss().value([t + h]) - 2 * PLScalarLoss().value([t]) + PLScalarLoss().value([t - h])) / h ** 2
        assert second < 0

    def test_infimum_matches_oracle(self):
        assert pl_infimum_ratio() == pytest.approx(ORACLE_PL_INF, rel=1e-6)
        assert pl_ratio_infimum(points=40_001) == pytest.approx(ORACLE_PL_INF, rel=1e-4)

    def test_certified_constant_below_infimum(self):
        mu = certified_pl_constant()
        assert mu == pytest.approx(0.95 * pl_infimum_ratio())
        assert 0 < mu < ORACLE_PL_INF

    @settings(max_examples=100)
    @given(t=st.floats(-10, 10))
    def test_gradient_matches_fd(self, t):
        fd = central_fd(lambda x: PLScalarLoss().value(x), np.array([t]))
        assert PLScalarLoss().gradient([t])[0] == pytest.approx(fd[0], rel=1e-6, abs=1e-6)

    @settings(max_examples=100)
    @given(a=st.floats(-10, 10), b=st.floats(-10, 10))
    def test_smoothness(self, a, b):
        loss = PLScalarLoss()
        assert abs(loss.gradient([a])[0] - loss.gradient([b])[0]) <= 8.0 * abs(a - b) + 1e-12

    def test_verify_passes_certified(self):
        mu = certified_pl_constant()
        check = pl_verify(lambda t: pl_test_function(t)[:2], 0.0, mu, [(-10, 10)], 5000)
        assert check and check.min_ratio >= mu

    def test_verify_rejects_too_large_mu(self):
        check = pl_verify(lambda t: pl_test_function(t)[:2], 0.0, 0.5, [(-10, 10)], 2000)
        assert not check
        assert check.witness is not None and check.witness_lhs < check.witness_rhs

    def test_verify_quadratic_exact(self):
        # f = 0.5 ||t||^2 has ratio exactly 1
        fn = lambda t: (0.5 * float(t @ t), t.copy())
        assert pl_verify(fn, 0.0, 1.0, [(-1, 1), (-1, 1)], 400)
        assert not pl_verify(fn, 0.0, 1.01, [(-1, 1), (-1, 1)], 400)

    def test_verify_rejects_zero_samples(self):
        with pytest.raises(ValueError):
            pl_verify(lambda t: (0.0, t), 0.0, 1.0, [(-1, 1)], 0)


def test_get_loss():
    assert isinstance(get_loss("logistic"), LogisticLoss)
    assert get_loss("regularized_logistic", 0.2).reg_lambda == 0.2
    assert isinstance(get_loss("quadratic"), QuadraticLoss)
    assert isinstance(get_loss("pl_scalar"), PLScalarLoss)
    with pytest.raises(ValueError, match="unknown loss"):
        get_loss("hinge")


@settings(max_examples=30)
@given(x=arrays(float, (8, 3), elements=finite))
def test_normalized_rows_certify(x):
    data = LabeledDataset(normalize_rows(x), np.zeros(8))
    data.check_normalized()
