import json
import math

import numpy as np
import pytest

from gsacpd.basis import BasisSpec
from gsacpd.bench import (
    BaselineConfig,
    ExperimentManifest,
    GsaConfig,
    alarms_csv,
    ar1_wrap,
    oc_curve,
    oc_csv,
    relative_change_rho,
    report_json,
    run_experiment,
)
from gsacpd.calibration import MdeSpec, calibrate, calibrate_exact
from gsacpd.distributions import Gaussian, MeanShift, PearsonIII, SeriesSpec, sample
from gsacpd.errors import ParameterError
from gsacpd.threshold import ThresholdSpec

SERIES = SeriesSpec(Gaussian(), MeanShift(1.0), 200, 1000)


def manifest(configs, **kw):
    kw.setdefault("n_trials", 60)
    kw.setdefault("n_cal", 500)
    kw.setdefault("base_seed", 5)
    kw.setdefault("threshold", ThresholdSpec("pe", 0.01, 1.0))
    return ExperimentManifest(kw.pop("series", SERIES), configs, **kw)


def test_accounting():
    cfgs = [GsaConfig("g1", BasisSpec("poly", 1), MdeSpec(1.0)), GsaConfig("auto", None, MdeSpec(1.0)),
            BaselineConfig("ewma", "ewma"), BaselineConfig("sign", "sign_cusum"), BaselineConfig("mad", "mad_cusum")]
    rep = run_experiment(manifest(cfgs))
    for r in rep["configs"].values():
        assert r["n_false"] + r["n_detected"] + r["n_missed"] == r["n_trials"] == 60
        assert r["far"] + r["det_rate"] + r["miss_rate"] == pytest.approx(1.0)
        det = [a - 200 for a in r["alarms"] if a is not None and a >= 200]
        assert r["n_detected"] == len(det)
        assert r["add_mean"] == pytest.approx(np.mean(det))
        assert r["add_se"] == pytest.approx(np.std(det, ddof=1) / math.sqrt(len(det)))


def test_never_alarms():
    rep = run_experiment(manifest([BaselineConfig("never", "ewma", L=1e9)]))
    r = rep["configs"]["never"]
    assert r["far"] == 0 and r["det_rate"] == 0 and r["add_mean"] is None and r["n_missed"] == 60


def test_always_alarms_at_one():
    rep = run_experiment(manifest([BaselineConfig("always", "ewma", L=1e-12)]))
    r = rep["configs"]["always"]
    assert r["far"] == 1.0 and r["det_rate"] == 0.0 and set(r["alarms"]) == {1}


def test_alarm_at_tau_is_zero_delay():
    # a detector that fires only on the first post-change sample: huge shift, Shewhart EWMA
    series = SeriesSpec(Gaussian(), MeanShift(1000.0), 200, 400)
    rep = run_experiment(manifest([BaselineConfig("shew", "ewma", lam=1.0, L=8.0)], series=series))
    r = rep["configs"]["shew"]
    assert r["n_detected"] == 60 and r["add_mean"] == 0.0


def test_failed_trials_are_reported():
    # n_cal below the s=3 minimum: every trial fails calibration
    rep = run_experiment(manifest([GsaConfig("s3", BasisSpec("poly", 3), MdeSpec(1.0))], n_cal=200))
    r = rep["configs"]["s3"]
    assert r["n_failed"] == 60 and r["n_missed"] == 60 and r["errors"]
    assert "500" in r["errors"][0]


def test_deterministic_and_worker_independent():
    cfgs = [GsaConfig("g1", BasisSpec("poly", 2), MdeSpec(1.0)), BaselineConfig("mad", "mad_cusum")]
    a = report_json(run_experiment(manifest(cfgs, n_trials=40, chunk=7)))
    b = report_json(run_experiment(manifest(cfgs, n_trials=40, chunk=7)))
    c = report_json(run_experiment(manifest(cfgs, n_trials=40, chunk=7, workers=3)))
    assert a == b == c
    d = json.loads(a)
    assert d["schema_version"] == 1 and "workers" not in d["manifest"]


def test_simulation_and_arl0_thresholds_in_bench():
    cfgs = [GsaConfig("sim", BasisSpec("poly", 1), MdeSpec(1.0), threshold=ThresholdSpec("simulation", 0.05)),
            GsaConfig("arl", BasisSpec("poly", 1), MdeSpec(1.0), threshold=ThresholdSpec("arl0", arl0_target=300.0)),
            GsaConfig("srp", BasisSpec("poly", 1), MdeSpec(1.0), rule="srp",
                      threshold=ThresholdSpec("arl0", arl0_target=300.0))]
    rep = run_experiment(manifest(cfgs, n_trials=6))["configs"]
    for r in rep.values():
        # ARL0 = 300 against tau = 200 leaves room for false alarms, but every trial alarms
        assert r["n_failed"] == 0 and r["n_false"] + r["n_detected"] == 6
    assert rep["sim"]["n_detected"] >= 4
    assert rep["srp"]["threshold_mean"] > 1.0


def test_efficiency_ratio():
    cfgs = [GsaConfig("a", BasisSpec("poly", 1), MdeSpec(1.0)), GsaConfig("b", BasisSpec("poly", 2), MdeSpec(1.0))]
    rep = run_experiment(manifest(cfgs, reference="a"))["configs"]
    assert rep["a"]["efficiency_ratio"] == pytest.approx(1.0)
    assert rep["b"]["efficiency_ratio"] == pytest.approx(rep["a"]["add_mean"] / rep["b"]["add_mean"])


def test_single_trial_null_se():
    rep = run_experiment(manifest([GsaConfig("a", BasisSpec("poly", 1), MdeSpec(1.0))], n_trials=1))
    r = rep["configs"]["a"]
    assert r["add_se"] is None
    assert "null" in report_json(rep)


def test_alarms_csv():
    rep = run_experiment(manifest([BaselineConfig("never", "ewma", L=1e9), BaselineConfig("always", "ewma", L=1e-12)],
                                  n_trials=3))
    assert alarms_csv(rep) == "trial,always,never\n0,1,\n1,1,\n2,1,\n"


def test_manifest_validation():
    g = GsaConfig("a", BasisSpec("poly", 1))
    with pytest.raises(ParameterError):
        manifest([g, g])
    with pytest.raises(ParameterError):
        manifest([g], reference="zzz")
    with pytest.raises(ParameterError):
        manifest([])
    with pytest.raises(ParameterError):
        ExperimentManifest.from_dict({"series": SERIES.to_dict(), "configs": [], "bogus": 1})
    with pytest.raises(ParameterError):
        ExperimentManifest.from_dict({"configs": []})


def test_manifest_round_trip():
    m = manifest([GsaConfig("a", BasisSpec("frac", 2), MdeSpec((0.1, 0.2), "additive"), 0.05,
                            ThresholdSpec("cantelli", 0.02), "grsh"),
                  BaselineConfig("e", "ewma", lam=0.2)], ar1_rho=0.3, reference="a")
    back = ExperimentManifest.from_dict(json.loads(json.dumps(m.to_dict())))
    assert back.to_dict() == m.to_dict()


# AR(1) ----------------------------------------------------------------------


def test_ar1_identity():
    x = np.random.default_rng(0).normal(size=100)
    np.testing.assert_array_equal(ar1_wrap(x, 0.0), x)
    with pytest.raises(ParameterError):
        ar1_wrap(x, 1.0)


def test_ar1_autocorrelation_and_variance():
    x = np.random.default_rng(1).normal(size=1_000_000)
    y = ar1_wrap(x, 0.5)
    r1 = np.corrcoef(y[:-1], y[1:])[0, 1]
    assert abs(r1 - 0.5) < 0.02
    assert abs(y.var() / x.var() - 1) < 0.03


def test_ar1_recursion_oracle():
    x = np.random.default_rng(2).normal(size=50)
    rho = -0.4
    c = math.sqrt(1 - rho * rho)
    prev = x[0] / c
    out = [prev]
    for e in x[1:]:
        prev = rho * prev + e
        out.append(prev)
    np.testing.assert_allclose(ar1_wrap(x, rho), np.array(out) * c, rtol=1e-12)


def test_ar1_manifest_runs():
    rep = run_experiment(manifest([GsaConfig("a", BasisSpec("poly", 1), MdeSpec(1.0),
                                             threshold=ThresholdSpec("pe", 0.01, 1.0, ar1_rho=0.5))],
                                  ar1_rho=0.5, n_trials=30))
    assert rep["configs"]["a"]["n_failed"] == 0


# relative change -----------------------------------------------------------


def test_rho_gaussian():
    m = calibrate_exact(BasisSpec("poly", 1, 1e12), [0.0], [[1.0]], [0.5])
    assert relative_change_rho(m) == pytest.approx(0.5, abs=1e-12)


def test_rho_pearson10():
    # ablation default winsorization 5%; 1e5 samples keep the MC spread near 0.01
    x = sample(PearsonIII(10.0), 100_000, np.random.default_rng(3))
    rho = relative_change_rho(calibrate(x, BasisSpec("poly", 1), MdeSpec(0.3), w=0.05))
    assert abs(rho - 0.6) <= 0.15


def test_j_column_monotone():
    cfgs = [GsaConfig(f"s{s}", BasisSpec("poly", s), MdeSpec(0.3), 0.0) for s in (1, 2, 3)]
    rep = run_experiment(manifest(cfgs, series=SeriesSpec(PearsonIII(10.0), MeanShift(0.3), 200, 400),
                                  n_cal=1000, n_trials=40))["configs"]
    assert rep["s1"]["j_s"] <= rep["s2"]["j_s"] <= rep["s3"]["j_s"]


# OC curve ------------------------------------------------------------------


@pytest.mark.slow
def test_oc_gaussian():
    m = manifest([GsaConfig("s1", BasisSpec("poly", 1), MdeSpec(1.0), 0.0)], n_trials=500, n_cal=5000)
    rows = oc_curve(m, [100, 1000], runs=1000)
    assert [r["arl0_target"] for r in rows] == [100.0, 1000.0]
    for r in rows:
        assert abs(r["arl0_achieved"] - r["arl0_target"]) / r["arl0_target"] <= 0.10
    assert 8 <= rows[1]["add"] <= 12
    text = oc_csv(rows)
    assert text.splitlines()[0] == "config,arl0_target,arl0_achieved,add,add_se"
    assert len(text.splitlines()) == 3


def test_oc_failure_flagged():
    # a model that never moves: bisection cannot reach the target and the row carries the error
    series = SeriesSpec(Gaussian(), MeanShift(1.0), 200, 1000)
    m = manifest([GsaConfig("s1", BasisSpec("poly", 1), MdeSpec(1.0), 0.0)], series=series)
    rows = oc_curve(m, [100], runs=200, max_iter=1, tol=1e-9)
    assert rows[0]["add"] is None and "error" in rows[0]


def test_oc_grid_validation():
    with pytest.raises(ParameterError):
        oc_curve(manifest([GsaConfig("s1", BasisSpec("poly", 1))]), [10])
