"""
Extrapolating to full data
==========================

Errors measured at ``R, R/2, R/4, ...`` are fitted with a straight line in
log-log space, and the line's value at ``r = 1`` is the predicted full-data
error. Points below ``R`` come from intermediate checkpoints, so each one
costs a single evaluation.
"""

import math

from vlmsearch import Candidate, CurveOracle, ScalingConfig, SyntheticCurveParams
from vlmsearch.scaling import predict_candidate

c = Candidate("ve0", "llm0")

# noiseless pure power law: the fit is exact
oracle = CurveOracle({c: SyntheticCurveParams(coeff_b=0.3, exponent_beta=0.1, family="pure-power-law")})
fit = predict_candidate(c, oracle, ScalingConfig())
print(f"pure power law: slope {fit.slope:.6f}, Err(1) {fit.predicted_full_error:.6f} (true 0.3)")
print(f"  {len(fit.points)} points, cost {oracle.ledger.total:.3f}")

# noisy curve: prediction lands within a few percent
oracle = CurveOracle({c: SyntheticCurveParams(coeff_b=0.3, exponent_beta=0.1, noise_sigma=0.01,
                                              family="pure-power-law")}, seed=3)
fit = predict_candidate(c, oracle, ScalingConfig())
print(f"noisy: Err(1) {fit.predicted_full_error:.4f}, fit mse {fit.fit_mse:.2e}, converged {fit.converged}")

# a curve with a floor bends in log-log space; a strict tolerance is never met
params = SyntheticCurveParams(floor_e=0.2, coeff_b=0.05, exponent_beta=0.5)
oracle = CurveOracle({c: params})
fit = predict_candidate(c, oracle, ScalingConfig(fit_tol_delta=1e-6))
print(f"floored: Err(1) {fit.predicted_full_error:.4f} vs true {params.mean_error(1.0):.4f}, converged {fit.converged}")
for lr, le in fit.points:
    print(f"  r={math.exp(lr):.5f} err={math.exp(le):.4f}")
