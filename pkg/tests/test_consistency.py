import numpy as np
import pytest

from ictlab.consistency import (
    ConsistencyModel,
    multistep_sample,
    nearest_index,
    one_step_sample,
    skip_scales,
)
from ictlab.net import Network, make_embedding
from ictlab.schedules import build_grid
from ictlab.synthetic import ExactConsistency, delta


def model(seed=0):
    rng = np.random.default_rng(seed)
    return ConsistencyModel(Network(2, 2, (16,), make_embedding(rng=rng), rng=rng))


def test_skip_scales_boundary():
    c_skip, c_out = skip_scales(0.002, 0.002, 0.5)
    assert c_skip == 1.0 and c_out == 0.0
    with pytest.raises(ValueError):
        skip_scales(0.001, 0.002)


def test_skip_scales_large_sigma():
    c_skip, c_out = skip_scales(80.0)
    assert c_skip < 1e-4
    assert c_out == pytest.approx(0.5 * 79.998 / np.sqrt(0.25 + 6400), rel=1e-14)


def test_boundary_condition_holds_for_any_params():
    m = model()
    x = np.random.default_rng(1).standard_normal((7, 2))
    for seed in range(3):
        m.network.params = np.random.default_rng(seed).standard_normal(m.network.n_params) * 10
        np.testing.assert_array_equal(m(x, 0.002), x)


def test_sigma_out_of_range():
    m = model()
    with pytest.raises(ValueError):
        m(np.zeros((1, 2)), 81.0)
    with pytest.raises(ValueError):
        m(np.zeros((1, 2)), 0.001)


def test_backward_matches_finite_differences():
    m = model()
    rng = np.random.default_rng(2)
    x = rng.standard_normal((3, 2))
    sigma = np.array([0.01, 1.0, 40.0])
    v = rng.standard_normal((3, 2))
    _, tape = m.forward(x, sigma)
    g = m.backward(tape, v)
    p0 = m.params.copy()
    for j in rng.integers(0, p0.size, size=10):
        e = np.zeros_like(p0)
        e[j] = 1e-6
        num = (np.sum(m(x, sigma, p0 + e) * v) - np.sum(m(x, sigma, p0 - e) * v)) / 2e-6
        assert g[j] == pytest.approx(num, rel=1e-5, abs=1e-9)


def test_two_index_multistep_equals_one_step():
    m = model()
    g = build_grid(11)
    a = multistep_sample(m, g, [1, 11], 20, np.random.default_rng(5))
    b = one_step_sample(m, 20, 80.0, np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("indices", [[2, 11], [1, 5, 5, 11], [1, 10], [1]])
def test_multistep_rejects_bad_indices(indices):
    with pytest.raises(ValueError):
        multistep_sample(model(), build_grid(11), indices, 4, np.random.default_rng(0))


def test_exact_oracle_one_step_recovers_delta():
    f = ExactConsistency(delta([0.7]))
    x = one_step_sample(f, 1000, 80.0, np.random.default_rng(0))
    # f(z, 80) = 0.7 + (sigma_min / 80) (z - 0.7), a tiny spread around xi
    assert abs(x.mean() - 0.7) < 1e-3
    assert x.std() < 0.01


def test_nearest_index():
    g = build_grid(150)
    assert nearest_index(g, 0.821) in range(2, 150)
    assert nearest_index(g, 1e-9) == 2
    assert nearest_index(g, 1e9) == 149
    j = nearest_index(g, 0.821)
    assert abs(g.sigma(j) - 0.821) <= min(abs(g.sigma(j - 1) - 0.821), abs(g.sigma(j + 1) - 0.821))
    with pytest.raises(ValueError):
        nearest_index(build_grid(2), 1.0)


def test_boundary_invariance_random_params_and_inputs():
    m = model()
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(100):
        m.network.params = rng.standard_normal(m.network.n_params) * rng.uniform(0.1, 10)
        x = rng.standard_normal((1, 2)) * 100
        worst = max(worst, np.abs(m(x, 0.002) - x).max())
    assert worst == 0.0


def test_three_index_multistep_on_gaussian_oracle():
    from ictlab.synthetic import gaussian

    d = gaussian([0.5], 0.3)
    g = build_grid(150)
    x = multistep_sample(ExactConsistency(d), g, [1, nearest_index(g, 0.821), 150], 100_000, np.random.default_rng(0))
    assert x.mean() == pytest.approx(0.5, abs=4 * 0.3 / np.sqrt(1e5))
    # the oracle maps N(mu, s^2 + sigma^2) onto N(mu, s^2 + sigma_min^2)
    assert x.var() == pytest.approx(0.09 + 0.002**2, rel=0.02)


def test_multistep_deterministic():
    m, g = model(), build_grid(11)
    a = multistep_sample(m, g, [1, 4, 11], 8, np.random.default_rng(3))
    b = multistep_sample(m, g, [1, 4, 11], 8, np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)


def test_skip_scales_midpoint_and_monotone():
    c_skip, _ = skip_scales(0.502, 0.002, 0.5)
    assert c_skip == pytest.approx(0.5, rel=1e-14)
    sigmas = np.geomspace(0.002, 80.0, 200)
    c = np.array([skip_scales(s)[0] for s in sigmas])
    assert np.all(np.diff(c) < 0)


def test_zero_network_gives_skip_connection():
    m = model()
    m.network.params = np.zeros(m.network.n_params)
    x = np.random.default_rng(3).standard_normal((4, 2))
    for s in (0.002, 0.1, 3.0, 80.0):
        np.testing.assert_array_equal(m(x, np.full(4, s)), skip_scales(s)[0] * x)
