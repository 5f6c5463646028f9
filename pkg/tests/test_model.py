import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hetcache.model import (
    CachingStrategy,
    ConfigError,
    NetworkConfig,
    ParametricFamily,
    PopularityProfile,
    affine_family,
    derivative_norm_bound,
    mixture_family,
    validate,
    zipf_profile,
)


def test_default_parameters_are_valid():
    cfg = NetworkConfig(lambda_u=0.001, lambda_s=1e-5, lambda_r=1 / 360, B=1e7, R0=1e6, gamma=100, R=2000)
    assert validate(cfg) is cfg


@pytest.mark.parametrize(
    "change, name",
    [
        ({"lambda_u": 0.0}, "lambda_u"),
        ({"M": 0}, "M"),
        ({"N": 0}, "N"),
        ({"gamma": -1.0}, "gamma"),
        ({"lambda_r": math.inf}, "lambda_r"),
        ({"M": 1.5}, "M"),
        ({"R0": "fast"}, "R0"),
    ],
)
def test_validate_names_the_bad_field(change, name):
    with pytest.raises(ConfigError) as info:
        validate(NetworkConfig().with_(**change))
    assert info.value.field == name
    assert str(info.value).startswith(name)


def test_gamma_may_exceed_R():
    validate(NetworkConfig(gamma=5000.0, R=100.0))


@given(
    st.floats(1e-9, 1.0), st.floats(1e-9, 1.0), st.integers(1, 10), st.integers(1, 10_000),
)
def test_validate_idempotent(lu, ls, M, N):
    cfg = NetworkConfig(lambda_u=lu, lambda_s=ls, M=M, N=N)
    assert validate(validate(cfg)) == cfg


def test_zipf_examples():
    np.testing.assert_array_equal(zipf_profile(4, 0.0).p, [0.25] * 4)
    np.testing.assert_allclose(zipf_profile(2, 1.0).p, [2 / 3, 1 / 3], rtol=1e-15)


def test_zipf_matches_summation_loop():
    total = 0.0
    for j in range(1, 11):
        total += 1.0 / j**0.8
    expected = [(1.0 / i**0.8) / total for i in range(1, 11)]
    np.testing.assert_allclose(zipf_profile(10, 0.8).p, expected, rtol=0, atol=1e-12)


@given(st.integers(1, 500), st.floats(0.0, 8.0))
def test_zipf_sorted_and_normalised(N, theta):
    p = zipf_profile(N, theta).p
    assert abs(p.sum() - 1) <= 1e-12 * N
    assert np.all(np.diff(p) <= 1e-18)


def test_zipf_huge_exponent_does_not_underflow():
    p = zipf_profile(50, 2000.0).p
    assert p[0] == pytest.approx(1.0)


def test_zipf_rejects_empty_catalog():
    with pytest.raises(ValueError):
        zipf_profile(0, 1.0)


@pytest.mark.parametrize("cls", [PopularityProfile, CachingStrategy])
def test_simplex_checks(cls):
    with pytest.raises(ValueError):
        cls([0.5, 0.6])
    with pytest.raises(ValueError):
        cls([1.2, -0.2])
    with pytest.raises(ValueError):
        cls([])
    obj = cls([0.25, 0.75])
    arr = obj.p if cls is PopularityProfile else obj.pi
    with pytest.raises(ValueError):
        arr[0] = 0.5
    assert len(obj) == 2


def test_simplex_tolerance():
    PopularityProfile([0.5, 0.5 + 5e-13])
    with pytest.raises(ValueError):
        PopularityProfile([0.5, 0.5 + 1e-10])


def test_point_masses():
    assert PopularityProfile.point_mass(3, 1) == PopularityProfile([0, 1, 0])
    assert CachingStrategy.point_mass(3, 2) == CachingStrategy([0, 0, 1])
    assert CachingStrategy.uniform(4) == CachingStrategy([0.25] * 4)


def test_affine_family_estimator_is_unbiased():
    u = np.full(4, 0.25)
    V = np.array([[0.25, 0.25, -0.25, -0.25]]).T
    fam = affine_family(u, V, a=-1.0, b=1.0)
    per_file = fam.estimate_one(np.arange(4))
    for t in (-1.0, -0.3, 0.0, 0.8):
        theta = np.array([t])
        p = fam.profile_of(theta).p
        np.testing.assert_allclose(p, u + V @ theta)
        # exact expectation over one request
        np.testing.assert_allclose(p @ per_file, theta, atol=1e-12)


def test_affine_family_rejects_unbounded_estimator():
    V = np.array([[0.1, -0.1, 0.0, 0.0]]).T
    with pytest.raises(ValueError, match="not bounded"):
        affine_family(np.full(4, 0.25), V, a=-1.0, b=1.0)


def test_mixture_family_estimator_is_unbiased():
    q0 = [0.5, 0.5, 0, 0]
    q1 = [0, 0, 0.3, 0.7]
    fam = mixture_family(q0, q1, a=0.2, b=0.7)
    for t in (0.2, 0.45, 0.7):
        p = fam.profile_of(np.array([t])).p
        est = fam.estimate_one(np.arange(4))[:, 0]
        assert p @ est == pytest.approx(t, abs=1e-12)


def test_derivative_bound_of_affine_family():
    V = np.array([[0.1, -0.1, 0.0]]).T
    u = np.full(3, 1 / 3)
    C = derivative_norm_bound(lambda th: PopularityProfile(u + V @ th), 1, -1.0, 1.0, safety=1.0)
    assert C == pytest.approx(0.2, rel=1e-6)


def test_family_without_estimator():
    fam = ParametricFamily(2, 0.0, 0.5, 2.0)
    assert fam.width == 0.5
    with pytest.raises(ValueError):
        fam.estimate_one([0])
    with pytest.raises(ValueError):
        ParametricFamily(0, 0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        ParametricFamily(1, 1.0, 1.0, 1.0)
