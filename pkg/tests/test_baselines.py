import math

import numpy as np
import pytest

from gsacpd.baselines import BaselineSpec, baseline_alarms, calibrate_baseline, run_baseline
from gsacpd.basis import BasisSpec
from gsacpd.bench import BaselineConfig, ExperimentManifest, GsaConfig, run_experiment
from gsacpd.calibration import MdeSpec
from gsacpd.distributions import Gaussian, MeanShift, SeriesSpec
from gsacpd.errors import DegenerateSampleError, ParameterError
from gsacpd.threshold import ThresholdSpec


def test_mad_hand_example():
    sample = [1, 2, 3, 4, 5] * 6
    spec = calibrate_baseline("mad_cusum", sample)
    assert spec.median == 3.0
    assert spec.mad == pytest.approx(1.4826)


def test_ewma_center_is_mean():
    x = np.concatenate([-np.arange(1.0, 21.0), np.arange(1.0, 21.0)]) + 7.0
    spec = calibrate_baseline("ewma", x)
    assert spec.mean == pytest.approx(7.0)


def test_constant_sample_degenerate():
    for kind in ("sign_cusum", "mad_cusum", "ewma"):
        with pytest.raises(DegenerateSampleError):
            calibrate_baseline(kind, np.full(40, 2.0))


def test_short_sample_and_params():
    with pytest.raises(ParameterError):
        calibrate_baseline("ewma", np.arange(29.0))
    with pytest.raises(ParameterError):
        calibrate_baseline("ewma", np.arange(40.0), lam=0.0)
    with pytest.raises(ParameterError):
        calibrate_baseline("nope", np.arange(40.0))


def test_ewma_factor():
    spec = BaselineSpec("ewma", lam=0.1, L=1.0, sd=1.0)
    assert spec.threshold == pytest.approx(math.sqrt(1 / 19))
    assert spec.threshold == pytest.approx(0.2294, abs=1e-4)


def test_ewma_constant_at_mean_never_alarms():
    spec = calibrate_baseline("ewma", np.random.default_rng(0).normal(2.0, 1.0, 200))
    assert run_baseline(spec, np.full(5000, spec.mean)).first_alarm is None


def test_ewma_lambda_one_is_shewhart():
    spec = calibrate_baseline("ewma", np.random.default_rng(1).normal(size=200), lam=1.0, L=3.5)
    x = np.random.default_rng(2).normal(size=(2000, 50)) * 1.5
    alarms = baseline_alarms(spec, x)
    expect = np.abs(x - spec.mean) > 3.5 * spec.sd
    first = np.where(expect.any(axis=1), expect.argmax(axis=1) + 1, 0)
    np.testing.assert_array_equal(alarms, first)


def test_sign_cusum_threshold_and_two_sided():
    spec = calibrate_baseline("sign_cusum", np.random.default_rng(3).normal(size=100), eps=0.01)
    assert spec.threshold == pytest.approx(9.5)
    # each step adds 1 - k = 0.5; 10.0 > 9.5 first at t = 20
    assert run_baseline(spec, np.full(30, 100.0)).first_alarm == 20
    assert run_baseline(spec, np.full(30, -100.0)).first_alarm == 20
    assert run_baseline(spec, np.full(2000, spec.median)).first_alarm is None


def test_sign_cusum_monotone_invariance():
    r = np.random.default_rng(4)
    spec = calibrate_baseline("sign_cusum", r.normal(size=300))
    med = spec.median
    x = r.normal(0.3, 1.0, size=(200, 300))
    for f in (lambda v: med + np.sinh(v - med), lambda v: med + 5.0 * (v - med) ** 3):
        np.testing.assert_array_equal(baseline_alarms(spec, x), baseline_alarms(spec, f(x)))


@pytest.mark.parametrize("a,b", [(2.0, -3.0), (0.5, 10.0), (7.25, 0.125)])
def test_mad_cusum_affine_invariance(a, b):
    r = np.random.default_rng(5)
    cal = r.normal(size=500)
    x = r.normal(0.4, 1.0, size=(300, 400))
    s1 = calibrate_baseline("mad_cusum", cal)
    s2 = calibrate_baseline("mad_cusum", a * cal + b)
    np.testing.assert_array_equal(baseline_alarms(s1, x), baseline_alarms(s2, a * x + b))


def test_mad_cusum_one_sided():
    spec = calibrate_baseline("mad_cusum", np.random.default_rng(6).normal(size=200))
    assert run_baseline(spec, np.full(500, spec.median - 10 * spec.mad)).first_alarm is None


def test_sign_cusum_slower_than_gsa():
    m = ExperimentManifest(
        SeriesSpec(Gaussian(), MeanShift(1.0), 200, 1000),
        [GsaConfig("gsa_s1", BasisSpec("poly", 1), MdeSpec(1.0), 0.0), BaselineConfig("sign", "sign_cusum")],
        ThresholdSpec("pe", 0.01, 1.0), n_trials=500, n_cal=1000, base_seed=8, workers=4)
    rep = run_experiment(m)["configs"]
    sign, gsa = rep["sign"], rep["gsa_s1"]
    # detections among trials still running at the change point
    assert sign["n_detected"] / (sign["n_trials"] - sign["n_false"]) >= 0.9
    assert sign["add_mean"] > gsa["add_mean"]
