import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gsacpd.basis import (
    BasisSpec,
    basis_rule,
    eval_basis,
    excess_kurtosis,
    hill_estimator,
    select_basis,
)
from gsacpd.distributions import Gaussian, Pareto, PearsonIII, StudentT, sample
from gsacpd.errors import DegenerateSampleError, ParameterError


def test_poly_values():
    np.testing.assert_allclose(eval_basis(BasisSpec("poly", 3), 2.0), [2, 4, 8])


def test_poly_clips():
    np.testing.assert_allclose(eval_basis(BasisSpec("poly", 2), 5.0), [5, 10])


def test_hermite_values():
    np.testing.assert_allclose(eval_basis(BasisSpec("hermite", 3), 1.0), [1, 0, -2])


def test_hermite_matches_numpy():
    from numpy.polynomial import hermite_e as H
    x = np.linspace(-2, 2, 9)
    got = eval_basis(BasisSpec("hermite", 5, clip_bound=1e9), x)
    for i in range(1, 6):
        c = np.zeros(i + 1)
        c[i] = 1
        np.testing.assert_allclose(got[:, i - 1], H.hermeval(x, c), atol=1e-12)


def test_log_order_and_floor():
    v = eval_basis(BasisSpec("log", 4), math.e)
    np.testing.assert_allclose(v, [math.e, 1.0, math.e, 1.0])
    z = eval_basis(BasisSpec("log", 4), 0.0)
    # ln(1e-12) = -27.6 clips to -10; x ln|x| and the square follow
    np.testing.assert_allclose(z, [0.0, -10.0, 0.0, 10.0])


def test_frac_defaults():
    spec = BasisSpec("frac", 3)
    assert spec.exponents == (1 / 2, 1 / 3, 1 / 4)
    np.testing.assert_allclose(eval_basis(spec, -8.0), [-math.sqrt(8), -2.0, -8 ** 0.25])


def test_vector_shape():
    assert eval_basis(BasisSpec("poly", 3), np.zeros((4, 5))).shape == (4, 5, 3)


@pytest.mark.parametrize("kw", [
    dict(family="harmonic"), dict(order=0), dict(order=7), dict(family="log", order=5),
    dict(clip_bound=0), dict(family="frac", order=2, frac_exponents=(0.3, 0.5)),
    dict(family="frac", order=2, frac_exponents=(0.5, 1.0)),
    dict(family="frac", order=2, frac_exponents=(0.5,)),
    dict(family="poly", order=1, frac_exponents=(0.5,)),
])
def test_spec_validation(kw):
    with pytest.raises(ParameterError):
        BasisSpec(**kw)


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(["poly", "log", "frac", "hermite"]), st.integers(1, 4),
       st.floats(-1e12, 1e12, allow_nan=False), st.floats(0.1, 100))
def test_clip_bound_holds(fam, s, x, cb):
    v = eval_basis(BasisSpec(fam, s, cb), x)
    assert v.shape == (s,)
    assert np.all(np.abs(v) <= cb)


def test_spec_dict_round_trip():
    for spec in [BasisSpec("poly", 3), BasisSpec("frac", 2, 5.0, (0.6, 0.2)), BasisSpec("frac", 2)]:
        back = BasisSpec.from_dict(spec.to_dict())
        assert back.exponents == spec.exponents and back.order == spec.order


def test_kurtosis_two_point():
    assert excess_kurtosis([-1, 1, -1, 1]) == -2.0


def test_kurtosis_normal():
    x = sample(Gaussian(), 1_000_000, np.random.default_rng(0))
    assert abs(excess_kurtosis(x)) < 0.05


def test_kurtosis_pearson3():
    x = sample(PearsonIII(2.0), 1_000_000, np.random.default_rng(1))
    assert abs(excess_kurtosis(x) - 6.0) < 0.2


def test_kurtosis_degenerate():
    with pytest.raises(DegenerateSampleError):
        excess_kurtosis([3.0] * 10)
    with pytest.raises(DegenerateSampleError):
        excess_kurtosis([1.0, 2.0, 3.0])


def _hill_oracle(values, k):
    xs = sorted(abs(v) for v in values)
    n = len(xs)
    ref = xs[n - k - 1]
    return 1.0 / (sum(math.log(xs[n - i] / ref) for i in range(1, k + 1)) / k)


def test_hill_hand_example():
    x = [math.exp(i) for i in range(5)]
    assert hill_estimator(x, 2) == pytest.approx(2 / 3, abs=1e-12)
    assert hill_estimator(x, 2) == pytest.approx(_hill_oracle(x, 2), abs=1e-12)


def test_hill_pareto():
    x = sample(Pareto(3.0), 100_000, np.random.default_rng(4))
    assert abs(hill_estimator(x) - 3.0) < 0.5


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 1e3), min_size=12, max_size=60, unique=True), st.floats(1e-3, 1e3))
def test_hill_scale_invariance(values, c):
    k = 4
    a = hill_estimator(values, k)
    b = hill_estimator([c * v for v in values], k)
    assert a == pytest.approx(b, rel=1e-9)
    assert a == pytest.approx(_hill_oracle(values, k), rel=1e-9)


def test_hill_errors():
    with pytest.raises(DegenerateSampleError):
        hill_estimator([0.0, 0.0, 1.0], 2)
    with pytest.raises(ParameterError):
        hill_estimator([1.0, 2.0, 3.0], 1)


@pytest.mark.parametrize("kurt,alpha,fam", [
    (0.0, 10.0, "poly"), (5.9, 9.0, "poly"), (6.0, 9.0, "frac"), (19.9, 9.0, "frac"),
    (20.0, 9.0, "log"), (25.0, 9.0, "log"), (0.0, 3.99, "log"), (0.0, 4.0, "frac"),
    (0.0, 7.99, "frac"), (0.0, 8.0, "poly"),
])
def test_rule_branches(kurt, alpha, fam):
    assert basis_rule(kurt, alpha) == fam


@pytest.mark.parametrize("dist,fam", [(Gaussian(), "poly"), (StudentT(5), "frac"), (Pareto(3), "log")])
def test_select_basis(dist, fam):
    # the Hill cutoffs sit close to the sampling spread at n=1e4, so the seed is pinned
    x = sample(dist, 10_000, np.random.default_rng(3))
    spec = select_basis(x)
    assert spec.family == fam and spec.order == 2


def test_select_basis_needs_100():
    with pytest.raises(ParameterError):
        select_basis(np.arange(99.0))


def test_hermite_orthogonality():
    x = sample(Gaussian(), 1_000_000, np.random.default_rng(8))
    B = eval_basis(BasisSpec("hermite", 3, clip_bound=1e9), x)
    for i in range(3):
        for j in range(3):
            prod = B[:, i] * B[:, j]
            se = prod.std() / math.sqrt(x.size)
            target = math.factorial(i + 1) if i == j else 0.0
            assert abs(prod.mean() - target) < 4 * se


def test_select_basis_gaussian_mostly_poly():
    fams = [select_basis(sample(Gaussian(), 10_000, np.random.default_rng(s))).family for s in range(100)]
    assert fams.count("poly") >= 80
    assert set(fams) <= {"poly", "frac"}


def test_select_basis_pure_in_stats():
    x = sample(StudentT(5), 2000, np.random.default_rng(5))
    assert select_basis(x).family == basis_rule(excess_kurtosis(x), hill_estimator(x))
