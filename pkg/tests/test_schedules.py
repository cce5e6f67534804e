import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from ictlab.schedules import (
    CURRICULUM_SHAPES,
    Curriculum,
    NoiseIndexSampler,
    WeightingFn,
    build_grid,
    curriculum_n,
    index_pmf,
    sample_index,
    weight,
)

# 40-digit mpmath evaluation of the rho-interpolation at i=2 of a 3-level grid
LEVEL2_N3 = 2.515218976147158578827532275841355908371


def test_grid_endpoints_exact():
    g = build_grid(150, 0.002, 80.0, 7.0)
    assert g.levels[0] == 0.002
    assert g.levels[-1] == 80.0
    assert g.sigma(1) == 0.002 and g.sigma(150) == 80.0


def test_grid_midpoint_matches_independent_evaluation():
    g = build_grid(3, 0.002, 80.0, 7.0)
    assert g.sigma(2) == pytest.approx(LEVEL2_N3, rel=1e-13)


@given(n=st.integers(2, 3000), smin=st.floats(1e-4, 1.0), ratio=st.floats(1.5, 1e5), rho=st.floats(1.0, 10.0))
@settings(max_examples=60, deadline=None)
def test_grid_invariants(n, smin, ratio, rho):
    smax = smin * ratio
    g = build_grid(n, smin, smax, rho)
    assert g.levels[0] == smin and g.levels[-1] == smax
    assert np.all(np.diff(g.levels) > 0)
    i = np.arange(1, n + 1)
    ref = (smin ** (1 / rho) + (i - 1) / (n - 1) * (smax ** (1 / rho) - smin ** (1 / rho))) ** rho
    np.testing.assert_allclose(g.levels, ref, rtol=1e-12)


def test_linear_grid_is_evenly_spaced():
    g = build_grid(11, 0.002, 80.0, spacing="linear")
    np.testing.assert_allclose(np.diff(g.levels), (80 - 0.002) / 10, rtol=1e-12)


@pytest.mark.parametrize("args", [(1, 0.002, 80.0), (10, 0.0, 80.0), (10, 80.0, 0.002), (10, -1.0, 1.0)])
def test_grid_rejects_bad_inputs(args):
    with pytest.raises(ValueError):
        build_grid(*args)


def test_exponential_curriculum_values():
    c = Curriculum("exponential", 10, 1280, 400_000)
    assert c.plateau_length == 50_000
    assert curriculum_n(c, 0) == 11
    assert curriculum_n(c, 50_000) == 21
    assert curriculum_n(c, 399_999) == 1281


def test_exponential_curriculum_has_eight_plateaus():
    c = Curriculum("exponential", 10, 1280, 400_000)
    values = [curriculum_n(c, k) for k in range(0, 400_000, 1000)] + [curriculum_n(c, 399_999)]
    assert sorted(set(values)) == [11, 21, 41, 81, 161, 321, 641, 1281]


def test_sqrt_curriculum_endpoints():
    # ceil(sqrt(s0^2) - 1) + 1 = s0 at k=0; the last step approaches s1 + 1
    c = Curriculum("sqrt_original", 2, 150, 400_000)
    assert curriculum_n(c, 0) == 2
    assert curriculum_n(c, 399_999) == 151


@pytest.mark.parametrize("shape", CURRICULUM_SHAPES)
def test_curriculum_monotone_and_bounded(shape):
    c = Curriculum(shape, 10, 1280, 5000)
    values = np.array([curriculum_n(c, k) for k in range(c.K)])
    assert np.all(np.diff(values) >= 0)
    assert values.min() >= 10 and values.max() <= 1281
    if shape == "constant":
        assert np.all(values == 1281)
    elif shape == "exponential":
        assert values[0] == 11
    else:
        assert values[0] == 10
    assert values[-1] >= 1280


def test_curriculum_rejects_out_of_range_step():
    c = Curriculum("exponential", 10, 1280, 100)
    with pytest.raises(ValueError):
        curriculum_n(c, 100)
    with pytest.raises(ValueError):
        curriculum_n(c, -1)


def test_uniform_pmf():
    assert index_pmf(NoiseIndexSampler("uniform"), build_grid(2)).tolist() == [1.0]
    pmf = index_pmf(NoiseIndexSampler("uniform"), build_grid(11))
    np.testing.assert_allclose(pmf, 0.1)


@pytest.mark.parametrize("n", [2, 11, 150, 1281])
def test_lognormal_pmf_normalized(n):
    pmf = index_pmf(NoiseIndexSampler("lognormal", -1.1, 2.0), build_grid(n))
    assert abs(pmf.sum() - 1.0) < 1e-12
    assert np.all(pmf > 0)


def test_lognormal_pmf_matches_quadrature():
    g = build_grid(1281)
    pmf = index_pmf(NoiseIndexSampler("lognormal", -1.1, 2.0), g)
    density = stats.norm(-1.1, 2.0).pdf
    logs = np.log(g.levels)
    total = integrate.quad(density, logs[0], logs[-1])[0]
    idx = np.r_[0:20, 600:620, 1260:1280]
    ref = np.array([integrate.quad(density, logs[j], logs[j + 1])[0] for j in idx]) / total
    np.testing.assert_allclose(pmf[idx], ref, atol=1e-6)


def test_lognormal_downweights_high_noise():
    g = build_grid(150)
    pmf = index_pmf(NoiseIndexSampler("lognormal", -1.1, 2.0), g)
    near_mode = int(np.argmin(np.abs(g.levels[:-1] - math.exp(-1.1))))
    assert pmf[near_mode] > pmf[-1]


def test_sample_index_uniform_two_levels():
    rng = np.random.default_rng(0)
    assert set(sample_index(NoiseIndexSampler("uniform"), build_grid(2), rng, size=100)) == {1}


def test_sample_index_frequencies_match_pmf():
    s, g = NoiseIndexSampler("lognormal", -1.1, 2.0), build_grid(150)
    draws = 100_000
    i = sample_index(s, g, np.random.default_rng(1), size=draws)
    assert i.min() >= 1 and i.max() <= 149
    freq = np.bincount(i - 1, minlength=149) / draws
    assert np.max(np.abs(freq - index_pmf(s, g))) < 3 / math.sqrt(draws)


def test_sample_index_deterministic():
    s, g = NoiseIndexSampler(), build_grid(150)
    a = sample_index(s, g, np.random.default_rng(7), size=50)
    b = sample_index(s, g, np.random.default_rng(7), size=50)
    np.testing.assert_array_equal(a, b)


def test_weights():
    g = build_grid(3)
    assert weight(WeightingFn("uniform"), g, 1) == 1.0
    assert weight(WeightingFn("inverse_gap"), g, 1) == pytest.approx(1 / (LEVEL2_N3 - 0.002), rel=1e-12)
    assert weight(WeightingFn("inverse_gap"), g, 1) == pytest.approx(0.397896, abs=1e-6)
    with pytest.raises(ValueError):
        weight(WeightingFn("inverse_gap"), g, 3)
    with pytest.raises(ValueError):
        weight(WeightingFn("inverse_gap"), g, 0)


@pytest.mark.parametrize("n", [10, 150, 1281])
def test_inverse_gap_strictly_decreasing(n):
    g = build_grid(n)
    w = weight(WeightingFn("inverse_gap"), g, np.arange(1, n))
    assert np.all(np.diff(w) < 0)
    assert np.all(w > 0)
