import numpy as np
import pytest

from nnimpute.smoothers import (
    KernelConfig,
    KernelRegression,
    bandwidth_rule,
    kernel_density,
    kernel_regression,
    s_derivative,
    smoothed_cdf,
)

PHI0 = 0.3989422804014327
PHI1 = 0.24197072451914337


def test_constant_response():
    rng = np.random.default_rng(0)
    kr = KernelRegression(0.3).fit(rng.normal(size=50), np.full(50, 2.5), rng.uniform(0.1, 1, 50))
    np.testing.assert_allclose(kr.predict(np.linspace(-3, 3, 13)), 2.5, rtol=1e-14)


def test_two_point_hand_value():
    kr = KernelRegression(1.0).fit([0.0, 1.0], [0.0, 1.0])
    assert kr.predict([0.0])[0] == pytest.approx(PHI1 / (PHI0 + PHI1), rel=1e-12)
    assert kr.predict([0.0])[0] == pytest.approx(0.37754, abs=1e-5)


def test_symmetric_data():
    m = np.array([-2.0, -1.0, 1.0, 2.0])
    z = np.array([1.0, 4.0, 0.0, 3.0])  # mirror pairs (1,3), (4,0) average 2
    assert KernelRegression(0.7).fit(m, z).predict([0.0])[0] == pytest.approx(2.0, rel=1e-14)


def test_convex_combination_and_2d():
    rng = np.random.default_rng(1)
    m, z = rng.normal(size=80), rng.normal(size=(80, 3))
    kr = KernelRegression(0.2).fit(m, z, rng.uniform(0.1, 2, 80))
    pred = kr.predict(np.linspace(-4, 4, 101))
    assert pred.shape == (101, 3)
    assert np.all(pred >= z.min(0) - 1e-12) and np.all(pred <= z.max(0) + 1e-12)
    np.testing.assert_allclose(pred[:, 1], KernelRegression(0.2).fit(m, z[:, 1], kr.w_).predict(np.linspace(-4, 4, 101)))


def test_underflow_falls_back_to_nearest():
    kr = KernelRegression(0.01).fit([0.0, 1.0], [5.0, 7.0])
    vals, flags = kr.predict_with_flags([100.0, 0.02])
    assert flags.tolist() == [True, False]
    assert vals[0] == 7.0


def test_kernel_regression_helper_uses_rule():
    kr = kernel_regression(np.arange(32.0), np.ones(32), np.ones(32), KernelConfig())
    assert kr.bandwidth == pytest.approx(1.5 * 32 ** -0.2)


def test_density_single_point():
    assert kernel_density([0.0], [1.0], 1.0, 0.0) == pytest.approx(PHI0, rel=1e-14)
    assert kernel_density([0.0], [1.0], 2.0, 0.0) == pytest.approx(PHI0 / 2, rel=1e-14)


def test_density_standard_normal():
    y = np.random.default_rng(2).normal(size=2000)
    assert abs(kernel_density(y, None, bandwidth_rule(2000), 0.0) - PHI0) < 0.02


def test_density_integrates_to_one():
    rng = np.random.default_rng(3)
    y, w, h = rng.normal(size=300), rng.uniform(0.1, 3, 300), 0.25
    grid = np.linspace(y.min() - 8 * h, y.max() + 8 * h, 20001)
    assert abs(np.trapezoid(kernel_density(y, w, h, grid), grid) - 1.0) < 1e-3


def test_cdf_limits():
    y = np.random.default_rng(4).normal(size=100)
    assert abs(smoothed_cdf(y, None, 0.3, 1e6) - 1.0) < 1e-12
    assert smoothed_cdf([0.0], [1.0], 0.7, 0.0) == 0.5


def test_cdf_converges_to_empirical():
    y = np.random.default_rng(5).normal(size=500)
    grid = np.sort(np.r_[y, y - 1e-9, np.linspace(-4, 4, 200)])
    ecdf = np.searchsorted(np.sort(y), grid, side="right") / y.size
    sup = [np.max(np.abs(smoothed_cdf(y, None, h, grid) - ecdf)) for h in (0.5, 0.1, 0.02)]
    assert sup[0] > sup[1] > sup[2]


def test_s_derivative_single_point():
    assert s_derivative([1.5], [3.0], 0.4, 1.5) == pytest.approx(PHI0 / 0.4, rel=1e-14)


def test_s_derivative_uniform():
    y = np.random.default_rng(6).random(2000)
    assert abs(s_derivative(y, None, bandwidth_rule(2000, 0.3), 0.5) - 1.0) < 0.05


def test_s_derivative_is_cdf_slope():
    rng = np.random.default_rng(7)
    y, w, h = rng.normal(size=400), rng.uniform(0.5, 2, 400), 0.35
    eps = h / 100
    for xi in np.linspace(-2, 2, 21):
        fd = (smoothed_cdf(y, w, h, xi + eps) - smoothed_cdf(y, w, h, xi - eps)) / (2 * eps)
        assert s_derivative(y, w, h, xi) == pytest.approx(fd, rel=1e-4)


def test_bandwidth_rule_arithmetic():
    assert bandwidth_rule(800) == pytest.approx(1.5 * 800 ** -0.2, rel=1e-15)
    assert bandwidth_rule(800) == pytest.approx(0.39398, abs=1e-5)
    assert KernelConfig(bandwidth=0.2).h(800) == 0.2
    with pytest.raises(ValueError):
        KernelConfig(bandwidth=0.0)
