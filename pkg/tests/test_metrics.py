import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ictlab.metrics import Metric, huber_c, metric_value_grad

# mpmath: sqrt(1.0009) - 0.03
PH_UNIT = 0.9704498987955368872290699464181873737319


def fd_grad(m, x, y, h=1e-6):
    g = np.zeros_like(x)
    for j in range(len(x)):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (metric_value_grad(m, x + e, y)[0] - metric_value_grad(m, x - e, y)[0]) / (2 * h)
    return g


@pytest.mark.parametrize("kind", ["squared_l2", "l1", "pseudo_huber"])
def test_zero_at_coincidence(kind):
    x = np.array([0.3, -1.2, 4.0])
    v, g = metric_value_grad(Metric(kind, 0.03), x, x)
    assert v == 0.0
    np.testing.assert_array_equal(g, 0.0)


def test_pseudo_huber_unit_distance():
    x = np.array([0.6, 0.8])
    v, _ = metric_value_grad(Metric("pseudo_huber", 0.03), x, np.zeros(2))
    assert v == pytest.approx(PH_UNIT, rel=1e-14)


def test_squared_l2_pythagorean():
    v, g = metric_value_grad(Metric("squared_l2"), np.array([3.0, 4.0]), np.zeros(2))
    assert v == 25.0
    np.testing.assert_array_equal(g, [6.0, 8.0])


def test_l1_subgradient_zero_at_ties():
    v, g = metric_value_grad(Metric("l1"), np.array([1.0, 2.0, -3.0]), np.array([1.0, 0.0, 0.0]))
    assert v == 5.0
    np.testing.assert_array_equal(g, [0.0, 1.0, -1.0])


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        metric_value_grad(Metric(), np.zeros(2), np.zeros(3))


def test_nonpositive_c_rejected():
    with pytest.raises(ValueError):
        Metric("pseudo_huber", 0.0)


def test_batch_reduction_over_last_axis():
    x = np.random.default_rng(0).standard_normal((5, 3))
    v, g = metric_value_grad(Metric("pseudo_huber", 0.1), x, np.zeros((5, 3)))
    assert v.shape == (5,) and g.shape == (5, 3)
    for b in range(5):
        vb, gb = metric_value_grad(Metric("pseudo_huber", 0.1), x[b], np.zeros(3))
        assert v[b] == vb
        np.testing.assert_array_equal(g[b], gb)


@pytest.mark.parametrize("kind", ["squared_l2", "pseudo_huber", "l1"])
def test_gradient_matches_finite_differences(kind):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(200):
        d = int(rng.integers(1, 6))
        x, y = rng.standard_normal(d), rng.standard_normal(d)
        m = Metric(kind, float(np.exp(rng.uniform(np.log(0.01), np.log(3.0)))))
        _, g = metric_value_grad(m, x, y)
        num = fd_grad(m, x, y)
        worst = max(worst, np.max(np.abs(g - num) / np.maximum(np.abs(num), 1e-3)))
    assert worst < 1e-6


def test_huber_c():
    assert 0.0299 <= huber_c(3072) <= 0.0300
    assert huber_c(1) == 0.00054
    for d in (1, 7, 3072):
        assert huber_c(4 * d) == pytest.approx(2 * huber_c(d), rel=1e-15)
    with pytest.raises(ValueError):
        huber_c(0)


def test_interpolates_l1_and_scaled_l2():
    x, y = np.array([0.3, -0.4, 1.2]), np.zeros(3)
    r = np.linalg.norm(x - y)
    small = metric_value_grad(Metric("pseudo_huber", 1e-6), x, y)[0]
    large = metric_value_grad(Metric("pseudo_huber", 1e6), x, y)[0]
    assert small == pytest.approx(r, rel=1e-3)
    assert large * 2e6 / r**2 == pytest.approx(1.0, rel=1e-3)


@given(r=st.floats(1.0, 1e3), c=st.floats(1e-6, 1.0))
def test_pseudo_huber_below_squared_l2_for_large_errors(r, c):
    x = np.array([r, 0.0])
    ph = metric_value_grad(Metric("pseudo_huber", c), x, np.zeros(2))[0]
    l2 = metric_value_grad(Metric("squared_l2"), x, np.zeros(2))[0]
    assert ph <= l2


@given(c=st.floats(1e-3, 10.0))
@settings(max_examples=30)
def test_pseudo_huber_second_derivative_continuous_at_zero(c):
    # along a ray, d''(r) -> 1/c as r -> 0 from either side
    m = Metric("pseudo_huber", c)
    direction = np.array([0.6, 0.8])
    h = c * 1e-3

    def f(t):
        return metric_value_grad(m, t * direction, np.zeros(2))[0]

    second = [(f(t + h) - 2 * f(t) + f(t - h)) / h**2 for t in (-5 * h, 0.0, 5 * h)]
    assert np.all(np.isfinite(second))
    np.testing.assert_allclose(second, 1 / c, rtol=1e-3)
