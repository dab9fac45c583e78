"""Log-linear extrapolation of learning curves to full data.

For each shortlisted candidate, errors are collected at ratios
``R, R/u, R/u**2, ...`` (cheap after the first point, since every smaller
ratio is read off an intermediate checkpoint). Once more than ``p`` points
exist a least-squares line ``log Err = intercept + slope * log r`` is fitted;
collection stops when its mean squared residual is at most ``delta``.
The prediction at full data (``r = 1``, ``log r = 0``) is ``exp(intercept)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .clustering import Candidate
from .errors import ConfigError, DegenerateFitError, SearchError
from .oracle import ERROR_FLOOR, Oracle, clamp_error


@dataclass(frozen=True)
class ScalingConfig:
    max_ratio_R: float = 0.125
    shrink_u: float = 2.0
    min_points_p: int = 3
    fit_tol_delta: float = 5e-5
    min_ratio: float | None = None
    window: int | None = None
    literal: bool = False

    def __post_init__(self):
        if not 0 < self.max_ratio_R <= 1:
            raise ConfigError("scaling R must be in (0, 1]")
        if self.shrink_u <= 1:
            raise ConfigError("scaling u must be > 1")
        if self.min_points_p < 1:
            raise ConfigError("scaling p must be positive")
        if self.fit_tol_delta <= 0:
            raise ConfigError("scaling delta must be positive")
        if self.window is not None and self.window < 2:
            raise ConfigError("scaling window must be at least 2 points")
        if self.max_ratio_R / self.shrink_u ** (self.min_points_p - 1) < self.floor_ratio * (1 - 1e-12):
            raise ConfigError("min_ratio too large: p points are not reachable")

    @property
    def floor_ratio(self) -> float:
        if self.min_ratio is not None:
            return self.min_ratio
        return self.max_ratio_R / self.shrink_u**5

    def ratios(self) -> list[float]:
        out, r = [], self.max_ratio_R
        while r >= self.floor_ratio * (1 - 1e-12):
            out.append(r)
            r /= self.shrink_u
        return out


@dataclass
class ScalingFit:
    candidate: Candidate
    slope: float
    intercept: float
    fit_mse: float
    points: list[tuple[float, float]] = field(default_factory=list)
    converged: bool = True
    error: str | None = None

    @property
    def predicted_full_error(self) -> float:
        if self.error is not None:
            return 1.0
        return clamp_error(math.exp(self.intercept)) if self.intercept < 700 else 1.0

    def to_json(self) -> dict:
        def num(v):
            return None if math.isnan(v) else v

        return {
            "candidate": str(self.candidate),
            "slope": num(self.slope),
            "intercept": num(self.intercept),
            "fit_mse": num(self.fit_mse),
            "predicted_full_error": self.predicted_full_error,
            "converged": self.converged,
            "points": [list(p) for p in self.points],
            "error": self.error,
        }


def fit_loglinear(points: Sequence[tuple[float, float]]) -> tuple[float, float, float]:
    """Ordinary least squares of log error on log ratio.

    Returns ``(slope, intercept, mse)`` where ``mse`` is the mean squared
    residual over the given points.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
        raise DegenerateFitError("need at least 2 (log_ratio, log_error) points")
    x, y = pts[:, 0], pts[:, 1]
    if np.unique(x).size < 2:
        raise DegenerateFitError("need at least 2 distinct ratios")
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    slope = float(np.dot(dx, y - ym) / np.dot(dx, dx))
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    return slope, intercept, float(np.mean(resid**2))


def predict_candidate(candidate: Candidate, oracle: Oracle, cfg: ScalingConfig) -> ScalingFit:
    points: list[tuple[float, float]] = []
    fits: list[ScalingFit] = []
    for r in cfg.ratios():
        rec = oracle.query(candidate, r)
        points.append((math.log(r), math.log(max(rec.error, ERROR_FLOOR))))
        if len(points) <= cfg.min_points_p:
            continue
        used = points[-cfg.window:] if cfg.window else points
        slope, intercept, mse = fit_loglinear(used)
        fit = ScalingFit(candidate, slope, intercept, mse, list(used), converged=mse <= cfg.fit_tol_delta)
        fits.append(fit)
        if cfg.literal:
            # as written: keep shrinking while the fit is good, stop on the first bad one
            if mse > cfg.fit_tol_delta:
                return fit
        elif fit.converged:
            return fit
    if cfg.literal and fits and fits[-1].converged:
        return fits[-1]
    if not fits:
        slope, intercept, mse = fit_loglinear(points)
        return ScalingFit(candidate, slope, intercept, mse, list(points), converged=False)
    best = min(fits, key=lambda f: f.fit_mse)
    best.converged = False
    return best


def scaling_prediction(shortlist: Sequence[Candidate], oracle: Oracle, cfg: ScalingConfig, workers: int = 1) -> list[ScalingFit]:
    """Fit every shortlisted candidate. Oracle failures are recorded per fit."""
    if not shortlist:
        raise ValueError("shortlist must be non-empty")

    def one(c: Candidate) -> ScalingFit:
        try:
            return predict_candidate(c, oracle, cfg)
        except SearchError as exc:
            return ScalingFit(c, float("nan"), float("nan"), float("nan"), [], converged=False, error=str(exc))

    if workers > 1 and len(shortlist) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, shortlist))
    return [one(c) for c in shortlist]


def fit_sort_key(fit: ScalingFit):
    """Failed fits last, then unconverged, then by predicted error and id."""
    return (fit.error is not None, not fit.converged, fit.predicted_full_error, fit.candidate)


def select_best(fits: Sequence[ScalingFit]) -> Candidate:
    if not fits:
        raise ValueError("no fits to select from")
    return min(fits, key=fit_sort_key).candidate
