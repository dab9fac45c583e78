"""Search pipeline: candidate clustering, inter-cluster successive halving over
cluster representatives, intra-cluster successive halving over the pooled
members of surviving clusters, then scaling prediction on the shortlist.

All oracle charges go through the oracle's :class:`~vlmsearch.oracle.CostLedger`,
so checkpoints trained in one phase are reused by the next.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

from .clustering import Candidate, CandidateCluster, ClusterSet, two_step_clusters
from .errors import ConfigError, SearchError, UnsupportedRatioError
from .metrics import kendall_tau, speedup, topk_tau, weighted_kendall_tau
from .oracle import Oracle
from .scaling import ScalingConfig, ScalingFit, fit_sort_key, scaling_prediction, select_best
from .trace import default_ratio_grid

PARALLELISM_ENV = "MORDAL_PARALLELISM"
PHASE_ORDER = {"inter_es": 0, "intra_es": 1}


def default_workers() -> int:
    raw = os.environ.get(PARALLELISM_ENV)
    if raw:
        try:
            value = int(raw)
        except ValueError:
            raise ConfigError(f"{PARALLELISM_ENV} must be a positive integer, got {raw!r}") from None
        if value < 1:
            raise ConfigError(f"{PARALLELISM_ENV} must be a positive integer, got {raw!r}")
        return value
    return os.cpu_count() or 1


@dataclass(frozen=True)
class ShaConfig:
    max_ratio_R: float = 0.125
    initial_budget_b: float = 0.03
    eta: float = 2.0
    keep_k: int = 1

    def __post_init__(self):
        if not 0 < self.max_ratio_R <= 1:
            raise ConfigError("early-stopping R must be in (0, 1]")
        if not 0 < self.initial_budget_b <= self.max_ratio_R:
            raise ConfigError("early-stopping b must be in (0, R]")
        if self.eta <= 1:
            raise ConfigError("eta must be > 1")
        if self.keep_k < 1:
            raise ConfigError("keep_k must be positive")

    def budgets(self) -> list[float]:
        """Capped geometric sequence ``min(b * eta**k, R)`` ending at ``R``."""
        out, k = [], 0
        while True:
            budget = min(self.initial_budget_b * self.eta**k, self.max_ratio_R)
            out.append(budget)
            if budget >= self.max_ratio_R:
                return out
            k += 1


@dataclass(frozen=True)
class SearchConfig:
    t_ve: float = 0.7
    t_llm: float = 0.8
    topk_inter: int = 3
    topk_intra: int = 3
    sha: ShaConfig = field(default_factory=ShaConfig)
    scaling: ScalingConfig = field(default_factory=ScalingConfig)
    seed: int = 0
    cka_batch_size: int | None = None
    cka_cost: float = 0.0

    def __post_init__(self):
        for name in ("t_ve", "t_llm"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must be in [0, 1]")
        if self.topk_inter < 1 or self.topk_intra < 1:
            raise ConfigError("top-k values must be positive")
        if not math.isclose(self.sha.max_ratio_R, self.scaling.max_ratio_R, rel_tol=0, abs_tol=1e-15):
            raise ConfigError(
                f"early_stopping.R ({self.sha.max_ratio_R}) and scaling_prediction.R "
                f"({self.scaling.max_ratio_R}) must agree"
            )
        if self.cka_batch_size is not None and self.cka_batch_size < 4:
            raise ConfigError("cka_batch_size must be at least 4")
        if self.cka_cost < 0:
            raise ConfigError("cka_cost must be non-negative")

    def required_ratios(self, include_full: bool = False) -> list[float]:
        return default_ratio_grid(
            R=self.sha.max_ratio_R,
            b=self.sha.initial_budget_b,
            eta=self.sha.eta,
            u=self.scaling.shrink_u,
            min_ratio=self.scaling.floor_ratio,
            include_full=include_full,
        )

    def to_json(self) -> dict:
        """Nested layout mirroring the job-submission keys."""
        sc = self.scaling
        scaling = {"R": sc.max_ratio_R, "u": sc.shrink_u, "delta": sc.fit_tol_delta, "p": sc.min_points_p}
        if sc.min_ratio is not None:
            scaling["min_ratio"] = sc.min_ratio
        if sc.window is not None:
            scaling["window"] = sc.window
        if sc.literal:
            scaling["literal"] = True
        out = {
            "clustering": {"t_ve": self.t_ve, "t_llm": self.t_llm},
            "exploration": {"top_k_inter": self.topk_inter, "top_k_intra": self.topk_intra},
            "early_stopping": {"R": self.sha.max_ratio_R, "b": self.sha.initial_budget_b, "eta": self.sha.eta},
            "scaling_prediction": scaling,
            "seed": self.seed,
        }
        if self.cka_batch_size is not None:
            out["clustering"]["cka_batch_size"] = self.cka_batch_size
        if self.cka_cost:
            out["clustering"]["cka_cost"] = self.cka_cost
        return out

    @classmethod
    def from_json(cls, data: Mapping) -> "SearchConfig":
        allowed = {
            "clustering": {"t_ve", "t_llm", "cka_batch_size", "cka_cost"},
            "exploration": {"top_k_inter", "top_k_intra"},
            "early_stopping": {"R", "b", "eta"},
            "scaling_prediction": {"R", "u", "delta", "p", "min_ratio", "window", "literal"},
        }
        sections = {}
        for name, keys in allowed.items():
            sec = data.get(name) or {}
            if not isinstance(sec, Mapping):
                raise ConfigError(f"{name} must be a mapping")
            unknown = set(sec) - keys
            if unknown:
                raise ConfigError(f"unknown keys in {name}: {sorted(unknown)}")
            sections[name] = sec
        cl, ex, es, sp = (sections[k] for k in allowed)
        R_es = es.get("R", sp.get("R", 0.125))
        R_sp = sp.get("R", es.get("R", 0.125))
        try:
            return cls(
                t_ve=float(cl.get("t_ve", 0.7)),
                t_llm=float(cl.get("t_llm", 0.8)),
                cka_batch_size=cl.get("cka_batch_size"),
                cka_cost=float(cl.get("cka_cost", 0.0)),
                topk_inter=int(ex.get("top_k_inter", 3)),
                topk_intra=int(ex.get("top_k_intra", 3)),
                sha=ShaConfig(max_ratio_R=float(R_es), initial_budget_b=float(es.get("b", 0.03)), eta=float(es.get("eta", 2))),
                scaling=ScalingConfig(
                    max_ratio_R=float(R_sp),
                    shrink_u=float(sp.get("u", 2)),
                    fit_tol_delta=float(sp.get("delta", 5e-5)),
                    min_points_p=int(sp.get("p", 3)),
                    min_ratio=sp.get("min_ratio"),
                    window=sp.get("window"),
                    literal=bool(sp.get("literal", False)),
                ),
                seed=int(data.get("seed", 0)),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid search config: {exc}") from None


@dataclass(frozen=True)
class Elimination:
    candidate: Candidate
    phase: str
    rung: int
    budget: float
    error: float
    observed: bool = True

    def to_json(self) -> dict:
        return {
            "candidate": str(self.candidate),
            "phase": self.phase,
            "rung": self.rung,
            "budget": self.budget,
            "error": self.error,
            "observed": self.observed,
        }


def _evaluate(oracle: Oracle, arms: Sequence[Candidate], ratio: float, workers: int) -> dict[Candidate, float]:
    if workers > 1 and len(arms) > 1:
        with ThreadPoolExecutor(max_workers=min(workers, len(arms))) as pool:
            futures = [pool.submit(oracle.query, c, ratio) for c in arms]
            results, first_exc = {}, None
            for c, fut in zip(arms, futures):
                try:
                    results[c] = fut.result().error
                except SearchError as exc:
                    first_exc = first_exc or exc
            if first_exc is not None:
                raise first_exc
            return results
    return {c: oracle.query(c, ratio).error for c in arms}


def sha(
    arms: Sequence[Candidate],
    oracle: Oracle,
    cfg: ShaConfig,
    phase: str = "inter_es",
    log: list[Elimination] | None = None,
    workers: int = 1,
) -> tuple[list[Candidate], list[Elimination], list[dict]]:
    """Successive halving.

    Rung ``k`` trains every live arm to ``min(b * eta**k, R)``, ranks by
    observed error (ties by candidate id) and keeps ``max(ceil(n/eta), keep_k)``.
    Once at most ``keep_k`` arms are live, or the budget reaches ``R``, a final
    rung brings the live arms to ``R`` and keeps the best ``keep_k``.

    Returns survivors (best first), the elimination log, and one dict per rung
    with its budget and live count.
    """
    if not arms:
        raise ValueError("sha needs at least one arm")
    log = [] if log is None else log
    budgets = cfg.budgets()
    live = list(arms)
    rungs = []
    last: dict[Candidate, float] = {}
    k = 0
    while True:
        final = len(live) <= cfg.keep_k or budgets[min(k, len(budgets) - 1)] >= cfg.max_ratio_R
        budget = cfg.max_ratio_R if final else budgets[k]
        rungs.append({"rung": k, "budget": budget, "live": len(live)})
        errors = _evaluate(oracle, live, budget, workers)
        last.update(errors)
        ranked = sorted(live, key=lambda c: (errors[c], c))
        keep = cfg.keep_k if final else max(math.ceil(len(live) / cfg.eta), cfg.keep_k)
        for c in ranked[keep:]:
            log.append(Elimination(c, phase, k, budget, errors[c]))
        live = ranked[:keep]
        if final:
            return live, log, rungs
        k += 1


def run_inter_cluster(
    clusters: Sequence[CandidateCluster],
    oracle: Oracle,
    cfg: SearchConfig,
    log: list[Elimination] | None = None,
    workers: int = 1,
) -> list[CandidateCluster]:
    """Halving over cluster representatives; a cluster survives with its representative."""
    log = [] if log is None else log
    by_rep = {cl.representative: cl for cl in clusters}
    keep_k = min(cfg.topk_inter, len(clusters))
    reps = [cl.representative for cl in clusters]
    with oracle.ledger.phase("inter_es"):
        start = len(log)
        survivors, _, _ = sha(reps, oracle, replace(cfg.sha, keep_k=keep_k), "inter_es", log, workers)
    for e in list(log[start:]):
        for m in by_rep[e.candidate].members:
            if m != e.candidate:
                log.append(Elimination(m, e.phase, e.rung, e.budget, e.error, observed=False))
    return [by_rep[r] for r in survivors]


def run_intra_cluster(
    survivors: Sequence[CandidateCluster],
    oracle: Oracle,
    cfg: SearchConfig,
    log: list[Elimination] | None = None,
    workers: int = 1,
) -> list[Candidate]:
    """Halving over every member of the surviving clusters; returns the shortlist."""
    if not survivors:
        raise ValueError("no surviving clusters")
    pool = sorted({m for cl in survivors for m in cl.members})
    keep_k = min(cfg.topk_intra, len(pool))
    with oracle.ledger.phase("intra_es"):
        shortlist, _, _ = sha(pool, oracle, replace(cfg.sha, keep_k=keep_k), "intra_es", log, workers)
    return shortlist


@dataclass
class SearchReport:
    config: SearchConfig
    ve_ids: list[str]
    llm_ids: list[str]
    clusters: list[CandidateCluster] = field(default_factory=list)
    ve_clusters: ClusterSet | None = None
    fits: list[ScalingFit] = field(default_factory=list)
    elimination_log: list[Elimination] = field(default_factory=list)
    ranking: list[Candidate] = field(default_factory=list)
    top1: Candidate | None = None
    top1_true_error: float | None = None
    costs: dict = field(default_factory=dict)
    incomplete: bool = False
    error: str | None = None
    evaluation: dict | None = None

    @property
    def top1_predicted_error(self) -> float | None:
        for f in self.fits:
            if f.candidate == self.top1:
                return f.predicted_full_error
        return None

    def to_json(self) -> dict:
        return {
            "version": 1,
            "incomplete": self.incomplete,
            "error": self.error,
            "seed": self.config.seed,
            "config": self.config.to_json(),
            "zoo": {"ve": list(self.ve_ids), "llm": list(self.llm_ids)},
            "clusters": [
                {"representative": str(cl.representative), "members": [str(m) for m in cl.members]}
                for cl in self.clusters
            ],
            "ranking": [str(c) for c in self.ranking],
            "top1": None
            if self.top1 is None
            else {
                "candidate": str(self.top1),
                "predicted_error": self.top1_predicted_error,
                "true_error": self.top1_true_error,
            },
            "fits": [f.to_json() for f in self.fits],
            "elimination_log": [e.to_json() for e in self.elimination_log],
            "costs": self.costs,
            "evaluation": self.evaluation,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, allow_nan=False) + "\n"


def assemble_ranking(fits: Sequence[ScalingFit], log: Sequence[Elimination]) -> list[Candidate]:
    """Survivors by prediction, then eliminated candidates latest-eliminated first."""
    survivors = [f.candidate for f in sorted(fits, key=fit_sort_key)]
    eliminated = sorted(log, key=lambda e: (-PHASE_ORDER[e.phase], -e.rung, e.error, e.candidate))
    seen = set(survivors)
    ranking = list(survivors)
    for e in eliminated:
        if e.candidate not in seen:
            seen.add(e.candidate)
            ranking.append(e.candidate)
    return ranking


def run(zoo, oracle: Oracle, config: SearchConfig | None = None, workers: int | None = None) -> SearchReport:
    """Run the full search on ``zoo`` (a :class:`~vlmsearch.trace.TraceBundle`
    or anything with the same id lists and distance accessors).

    Phase failures do not raise: the returned report is marked incomplete and
    carries the error message.
    """
    config = config or SearchConfig()
    workers = default_workers() if workers is None else workers
    report = SearchReport(config, list(zoo.ve_ids), list(zoo.llm_ids))
    ledger = oracle.ledger
    try:
        with ledger.phase("clustering"):
            batch = config.cka_batch_size
            clusters, ve_clusters, _ = two_step_clusters(
                zoo.ve_ids,
                zoo.llm_ids,
                zoo.ve_distance_matrix(batch),
                lambda v: zoo.llm_distance_matrix(v, batch),
                config.t_ve,
                config.t_llm,
            )
            report.clusters, report.ve_clusters = clusters, ve_clusters
            if config.cka_cost > 0:
                ledger.book(None, 0.0, config.cka_cost * zoo.n_cka_pairs(ve_clusters.medoids))

        log = report.elimination_log
        survivors = run_inter_cluster(clusters, oracle, config, log, workers)
        shortlist = run_intra_cluster(survivors, oracle, config, log, workers)
        with ledger.phase("prediction"):
            report.fits = scaling_prediction(shortlist, oracle, config.scaling, workers)
        failed = [f for f in report.fits if f.error is not None]
        if len(failed) == len(report.fits):
            raise SearchError(f"scaling prediction failed for every candidate: {failed[0].error}")
        report.top1 = select_best(report.fits)
        report.top1_true_error = oracle.full_data_error(report.top1)
        report.ranking = assemble_ranking(report.fits, log)
    except SearchError as exc:
        report.incomplete = True
        report.error = f"{type(exc).__name__}: {exc}"
        report.ranking = assemble_ranking(report.fits, [e for e in report.elimination_log if e.phase in PHASE_ORDER])
    report.costs = {**ledger.phase_costs(), "total": ledger.total}
    return report


@dataclass
class GridResult:
    ranking: list[Candidate]
    errors: dict[Candidate, float]
    cost: float


def run_grid(candidates: Sequence[Candidate], oracle: Oracle) -> GridResult:
    """Exhaustive baseline: every candidate at full data. Cost is computed, not booked."""
    errors = {}
    for c in candidates:
        err = oracle.full_data_error(c)
        if err is None:
            raise UnsupportedRatioError(f"no full-data error available for {c}")
        errors[c] = err
    ranking = sorted(errors, key=lambda c: (errors[c], c))
    cm = oracle.cost_model
    cost = len(errors) * (cm.full_train_cost + cm.eval_cost)
    return GridResult(ranking, errors, cost)


def compare_to_grid(report: SearchReport, grid: GridResult, k: int = 10) -> dict:
    """Rank agreement and speedup of a completed report against the grid baseline."""
    truth = [str(c) for c in grid.ranking]
    ours = [str(c) for c in report.ranking]
    k = min(k, len(truth))
    evaluation = {
        "grid_top1": truth[0],
        "grid_cost": grid.cost,
        "top1_matches_grid": report.top1 is not None and str(report.top1) == truth[0],
        "top1_grid_rank": truth.index(str(report.top1)) + 1 if report.top1 is not None else None,
        "tau": None,
        "tau_w": None,
        "topk": k,
        "topk_tau_w": None,
        "speedup": speedup(report.costs["total"], grid.cost) if report.costs.get("total", 0) > 0 else None,
    }
    if len(truth) >= 2 and sorted(truth) == sorted(ours):
        evaluation["tau"] = kendall_tau(truth, ours)
        evaluation["tau_w"] = weighted_kendall_tau(truth, ours)
        evaluation["topk_tau_w"] = topk_tau(truth, ours, k) if k >= 2 else None
    return evaluation
