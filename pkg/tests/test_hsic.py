"""HSIC checks against a brute-force estimator and Monte-Carlo level/power."""

from __future__ import annotations

import numpy as np
import pytest

from macrobottle import autodiff as ad
from macrobottle import hsic
from macrobottle.errors import DataError, DegenerateDataError


def brute_force_statistic(x, y, bw_x, bw_y):
    """n * HSIC_b from the textbook double-sum expansion, entry by entry."""
    n = len(x)
    k = np.empty((n, n))
    l = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            k[i, j] = np.exp(-((x[i] - x[j]) ** 2) / (2 * bw_x ** 2))
            l[i, j] = np.exp(-((y[i] - y[j]) ** 2) / (2 * bw_y ** 2))
    term1 = sum(k[i, j] * l[i, j] for i in range(n) for j in range(n)) / n**2
    term2 = k.sum() * l.sum() / n**4
    term3 = sum(k[i, :].sum() * l[i, :].sum() for i in range(n)) * 2 / n**3
    return n * (term1 + term2 - term3)


class TestMedianBandwidth:
    def test_two_points(self):
        assert hsic.median_bandwidth(np.array([0.0, 1.0])) == 1.0

    def test_three_points(self):
        # pairwise distances 1, 1, 2 -> median 1
        assert hsic.median_bandwidth(np.array([0.0, 1.0, 2.0])) == 1.0

    def test_subsample_equals_full_when_small(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=1000)
        full = np.median(np.abs(x[:, None] - x[None, :])[np.triu_indices(1000, k=1)])
        assert hsic.median_bandwidth(x) == full

    def test_all_equal_degenerate(self):
        with pytest.raises(DegenerateDataError):
            hsic.median_bandwidth(np.full(10, 3.0))

    def test_subsample_deterministic_per_seed(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=5000)
        assert hsic.median_bandwidth(x, seed=3) == hsic.median_bandwidth(x, seed=3)


class TestStatistic:
    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=50)
        y = 0.5 * x + rng.normal(size=50)
        res = hsic.hsic_statistic(x, y)
        expected = brute_force_statistic(x, y, *res.bandwidths)
        assert abs(res.statistic - expected) < 1e-10

    def test_symmetry(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=80)
        y = rng.normal(size=80)
        a = hsic.hsic_statistic(x, y)
        b = hsic.hsic_statistic(y, x)
        assert abs(a.statistic - b.statistic) < 1e-12

    def test_joint_permutation_invariance(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=60)
        y = x ** 2 + rng.normal(size=60)
        perm = rng.permutation(60)
        a = hsic.hsic_statistic(x, y, bandwidths=(1.0, 1.0))
        b = hsic.hsic_statistic(x[perm], y[perm], bandwidths=(1.0, 1.0))
        assert abs(a.statistic - b.statistic) < 1e-10

    def test_nonnegative(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            x = rng.normal(size=30)
            y = rng.normal(size=30)
            assert hsic.hsic_statistic(x, y).statistic >= 0.0

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            hsic.hsic_statistic(np.zeros(10), np.zeros(11))

    def test_independent_level(self):
        # independent pairs stay below threshold in >= 90% of trials
        rng = np.random.default_rng(9)
        below = 0
        trials = 100
        for _ in range(trials):
            x = rng.normal(size=500)
            y = rng.permutation(x.copy())
            res = hsic.hsic_statistic(x, y)
            below += res.statistic < res.threshold
        assert below >= 90

    def test_dependent_power(self):
        rng = np.random.default_rng(10)
        for _ in range(100):
            x = rng.normal(size=500)
            res = hsic.hsic_statistic(x, x)
            assert res.statistic > res.threshold

    def test_type_one_error_of_gamma_threshold(self):
        rng = np.random.default_rng(11)
        rejections = 0
        trials = 200
        for _ in range(trials):
            x = rng.normal(size=200)
            y = rng.normal(size=200)
            rejections += hsic.hsic_statistic(x, y).rejected
        assert rejections / trials <= 0.10


class TestLoss:
    def test_equals_statistic_on_same_bandwidths(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(64, 1))
        y = rng.normal(size=(64, 1))
        bw = (1.3, 0.7)
        loss = hsic.hsic_loss(ad.Tensor(x), ad.Tensor(y), bandwidths=bw)
        res = hsic.hsic_statistic(x, y, bandwidths=bw)
        assert abs(loss.item() - res.statistic) < 1e-12

    def test_constant_column_contributes_zero(self):
        rng = np.random.default_rng(13)
        x = rng.normal(size=(32, 1))
        y = np.full((32, 1), 2.0)
        loss = hsic.hsic_loss(ad.Tensor(x), ad.Tensor(y))
        assert abs(loss.item()) < 1e-12

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(14)
        store = ad.ParamStore()
        x = store.add("x", rng.normal(size=(16, 1)))
        y = store.add("y", rng.normal(size=(16, 1)))
        bw = (1.0, 1.2)

        def loss_value():
            return hsic.hsic_loss(x, y, bandwidths=bw).item()

        store.zero_grad()
        ad.backward(hsic.hsic_loss(x, y, bandwidths=bw))
        h = 1e-6
        for t in (x, y):
            fd = np.zeros_like(t.data)
            flat = t.data.reshape(-1)
            fdflat = fd.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = loss_value()
                flat[i] = orig - h
                down = loss_value()
                flat[i] = orig
                fdflat[i] = (up - down) / (2 * h)
            denom = max(np.abs(fd).max(), 1e-12)
            assert np.abs(t.grad - fd).max() / denom < 1e-4

    def test_minibatch_size_guard(self):
        with pytest.raises(DataError):
            hsic.hsic_loss(ad.Tensor(np.zeros((4, 1))), ad.Tensor(np.zeros((4, 1))))
