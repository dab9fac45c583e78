import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vlmsearch.clustering import Candidate
from vlmsearch.errors import ConfigError, DegenerateFitError
from vlmsearch.oracle import CurveOracle, SyntheticCurveParams
from vlmsearch.scaling import (
    ScalingConfig,
    ScalingFit,
    fit_loglinear,
    predict_candidate,
    scaling_prediction,
    select_best,
)

C = Candidate("ve", "llm")


def oracle_for(**params):
    return CurveOracle({C: SyntheticCurveParams(**params)})


def test_ratio_schedule():
    assert ScalingConfig().ratios() == [0.125 / 2**k for k in range(6)]
    assert ScalingConfig(min_ratio=0.03).ratios() == [0.125, 0.0625, 0.03125]
    with pytest.raises(ConfigError):
        ScalingConfig(min_ratio=0.05)
    with pytest.raises(ConfigError):
        ScalingConfig(shrink_u=1.0)


def test_fit_matches_polyfit():
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = np.log(rng.uniform(0.001, 0.2, 6))
        y = rng.normal(-1, 0.3, 6)
        slope, intercept, mse = fit_loglinear(list(zip(x, y)))
        ps, pi = np.polyfit(x, y, 1)
        assert slope == pytest.approx(ps, rel=1e-9, abs=1e-12)
        assert intercept == pytest.approx(pi, rel=1e-9, abs=1e-12)
        assert mse == pytest.approx(np.mean((y - np.polyval([ps, pi], x)) ** 2), rel=1e-9, abs=1e-15)


def test_degenerate_fit():
    with pytest.raises(DegenerateFitError):
        fit_loglinear([(0.0, 1.0)])
    with pytest.raises(DegenerateFitError):
        fit_loglinear([(-1.0, 1.0), (-1.0, 2.0)])


def test_exact_power_law_recovered():
    o = oracle_for(coeff_b=0.3, exponent_beta=0.1, family="pure-power-law")
    fit = predict_candidate(C, o, ScalingConfig())
    assert fit.converged
    assert len(fit.points) == 4  # first fit once more than p=3 points
    assert fit.slope == pytest.approx(-0.1, abs=1e-9)
    assert fit.predicted_full_error == pytest.approx(0.3, rel=1e-9)
    # cost: train to R once, then one evaluation per point
    assert o.ledger.total == pytest.approx(0.125 + 4 * 0.01)


def test_constant_error_gives_flat_fit():
    o = oracle_for(floor_e=0.25, coeff_b=0.0, exponent_beta=0.1)
    fit = predict_candidate(C, o, ScalingConfig())
    assert fit.slope == pytest.approx(0.0, abs=1e-12)
    assert fit.predicted_full_error == pytest.approx(0.25)


def test_unconverged_keeps_best_fit_and_flags():
    # strongly floored curve is visibly non-linear in log-log space
    o = oracle_for(floor_e=0.3, coeff_b=0.02, exponent_beta=0.9)
    cfg = ScalingConfig(fit_tol_delta=1e-8)
    fit = predict_candidate(C, o, cfg)
    assert not fit.converged
    assert o.ledger.phase_costs()  # queried every ratio
    assert len(o.ledger.charges) == len(cfg.ratios())
    assert fit.fit_mse > cfg.fit_tol_delta


def test_literal_mode_returns_first_bad_fit():
    o = oracle_for(floor_e=0.3, coeff_b=0.02, exponent_beta=0.9)
    cfg = ScalingConfig(fit_tol_delta=1e-8, literal=True)
    fit = predict_candidate(C, o, cfg)
    assert len(fit.points) == 4
    assert fit.fit_mse > cfg.fit_tol_delta
    # exact power law never triggers the break and uses every ratio
    o2 = oracle_for(coeff_b=0.3, exponent_beta=0.1, family="pure-power-law")
    fit2 = predict_candidate(C, o2, ScalingConfig(literal=True))
    assert fit2.converged and len(fit2.points) == 6


def test_window_limits_points():
    o = oracle_for(floor_e=0.3, coeff_b=0.02, exponent_beta=0.9)
    fit = predict_candidate(C, o, ScalingConfig(fit_tol_delta=1e-12, window=3, min_points_p=3))
    assert len(fit.points) == 3


def test_oracle_failure_recorded_per_candidate():
    good = Candidate("a", "b")
    o = CurveOracle({good: SyntheticCurveParams(coeff_b=0.3, exponent_beta=0.1, family="pure-power-law")})
    fits = scaling_prediction([good, Candidate("x", "y")], o, ScalingConfig())
    assert fits[0].error is None
    assert fits[1].error is not None and fits[1].predicted_full_error == 1.0
    assert fits[1].to_json()["slope"] is None
    assert select_best(fits) == good


def test_select_best_ordering():
    a, b, c, d = (Candidate(x, "l") for x in "abcd")
    fits = [
        ScalingFit(a, -0.1, math.log(0.2), 1e-3, converged=False),
        ScalingFit(b, -0.1, math.log(0.3), 1e-6),
        ScalingFit(c, -0.1, math.log(0.3), 1e-6),
        ScalingFit(d, float("nan"), float("nan"), float("nan"), error="boom", converged=False),
    ]
    assert select_best(fits) == b
    assert select_best([fits[0], fits[3]]) == a
    with pytest.raises(ValueError):
        select_best([])


def test_parallel_matches_serial():
    cands = [Candidate(f"v{i}", "l") for i in range(6)]
    curves = {c: SyntheticCurveParams(floor_e=0.1, coeff_b=0.1 + 0.01 * i, exponent_beta=0.2, noise_sigma=0.01)
              for i, c in enumerate(cands)}
    f1 = scaling_prediction(cands, CurveOracle(curves, seed=1), ScalingConfig())
    f2 = scaling_prediction(cands, CurveOracle(curves, seed=1), ScalingConfig(), workers=4)
    assert [f.to_json() for f in f1] == [f.to_json() for f in f2]


def test_noisy_power_law_median_error():
    rel = []
    for seed in range(100):
        o = CurveOracle({C: SyntheticCurveParams(coeff_b=0.3, exponent_beta=0.1, noise_sigma=0.01,
                                                 family="pure-power-law")}, seed=seed)
        fit = predict_candidate(C, o, ScalingConfig())
        rel.append(abs(fit.predicted_full_error - 0.3) / 0.3)
    assert np.median(rel) <= 0.05


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 0.8), st.floats(0.02, 0.6))
def test_pure_power_law_exact(b, beta):
    o = oracle_for(coeff_b=b, exponent_beta=beta, family="pure-power-law")
    fit = predict_candidate(C, o, ScalingConfig())
    if b * (0.125 / 32) ** (-beta) < 1.0:  # no clamping anywhere on the schedule
        assert fit.predicted_full_error == pytest.approx(b, rel=1e-9)
        assert fit.slope == pytest.approx(-beta, rel=1e-9)
