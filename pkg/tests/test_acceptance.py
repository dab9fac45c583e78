"""One test per acceptance criterion. Each prints a single PASS/FAIL line,
and all lines are repeated in the terminal summary."""

import itertools
import math
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import squareform

from conftest import structured_pair
from vlmsearch.cli import main
from vlmsearch.clustering import Candidate, DistanceMatrix, average_linkage_merges, cluster
from vlmsearch.metrics import kendall_tau
from vlmsearch.oracle import CostLedger, CostModel, CurveOracle, SyntheticCurveParams
from vlmsearch.scaling import ScalingConfig, predict_candidate
from vlmsearch.search import SearchConfig, ShaConfig, compare_to_grid, run, run_grid, sha
from vlmsearch.similarity import cka, minibatch_cka, split_batches
from vlmsearch.trace import SyntheticSpec, generate_synthetic, planted_best

ROOT = Path(__file__).resolve().parent.parent


def test_criterion_1_cka_correctness(criterion):
    with criterion(1, "CKA identity, orthogonal zero, invariances within 1e-9, < 5 s") as d:
        start = time.perf_counter()
        rng = np.random.default_rng(1)
        worst = 0.0
        for _ in range(50):
            n = int(rng.integers(8, 64))
            X = rng.standard_normal((n, int(rng.integers(2, 10))))
            Y = rng.standard_normal((n, int(rng.integers(2, 10))))
            base = cka(X, Y)
            worst = max(worst, abs(cka(X, X) - 1.0))
            Q, _ = np.linalg.qr(rng.standard_normal((X.shape[1], X.shape[1])))
            perm = rng.permutation(n)
            worst = max(worst, abs(cka(3.7 * X, Y) - base), abs(cka(X @ Q, Y) - base),
                        abs(cka(X[perm], Y[perm]) - base))
        # planted orthogonal: X and Y live on disjoint, centred, uncorrelated coordinates
        H = np.linalg.qr(np.random.default_rng(2).standard_normal((16, 16)))[0]
        H = H - H.mean(axis=0)
        U, _, _ = np.linalg.svd(H, full_matrices=False)
        X, Y = U[:, :3], U[:, 3:6]
        orth = cka(X, Y)
        elapsed = time.perf_counter() - start
        d.update(max_dev=f"{worst:.1e}", orthogonal=f"{orth:.1e}", seconds=f"{elapsed:.2f}")
        assert worst <= 1e-9
        assert abs(orth) <= 1e-9
        assert elapsed < 5


def test_criterion_2_minibatch_equivalence(criterion):
    with criterion(2, "single-batch exact; 4-batch within 0.05 of full CKA over 20 seeds") as d:
        gaps, exact = [], True
        for seed in range(20):
            rng = np.random.default_rng(seed)
            X, Y = structured_pair(rng, n=256, overlap=float(rng.uniform(0.2, 1.0)))
            exact &= minibatch_cka([X], [Y]) == cka(X, Y, unbiased=True)
            gaps.append(abs(minibatch_cka(split_batches(X, 64), split_batches(Y, 64)) - cka(X, Y)))
        d.update(single_batch_exact=exact, max_gap=f"{max(gaps):.4f}")
        assert exact
        assert max(gaps) <= 0.05


def naive_average_linkage_cut(dist: DistanceMatrix, t: float):
    """Reference: recompute average distances from scratch at every merge."""
    clusters = [frozenset([m]) for m in dist.ids]
    cut = 1.0 - t
    while len(clusters) > 1:
        best = None
        for a, b in itertools.combinations(clusters, 2):
            avg = sum(dist[x, y] for x in a for y in b) / (len(a) * len(b))
            if best is None or avg < best[0]:
                best = (avg, a, b)
        if best[0] > cut:
            break
        clusters = [c for c in clusters if c not in (best[1], best[2])] + [best[1] | best[2]]
    return sorted(tuple(sorted(c)) for c in clusters)


def test_criterion_3_clustering_oracle(criterion):
    with criterion(3, "average-linkage cuts match enumerated dendrograms; count monotone in t") as d:
        rng = np.random.default_rng(3)
        checked = 0
        for _ in range(300):
            m = int(rng.integers(2, 7))
            v = np.triu(rng.uniform(0.05, 0.95, (m, m)), 1)
            dm = DistanceMatrix(tuple(f"m{i}" for i in range(m)), v + v.T)
            heights = sorted(h for _, _, h in average_linkage_merges(dm))
            if np.any(np.diff(heights) < 1e-9):
                continue
            Z = linkage(squareform(dm.values, checks=False), method="average")
            # one cut between every pair of consecutive heights, plus both ends
            cuts = [0.0] + [(a + b) / 2 for a, b in zip(heights, heights[1:])] + [heights[-1] + 0.01]
            for c in cuts:
                t = 1.0 - c
                ours = [tuple(x) for x in cluster(dm, t).clusters]
                labels = fcluster(Z, c, criterion="distance")
                ref = sorted(tuple(sorted(dm.ids[i] for i in range(m) if labels[i] == lab)) for lab in set(labels))
                assert ours == naive_average_linkage_cut(dm, t) == ref
                checked += 1
        monotone = 0
        for _ in range(50):
            m = int(rng.integers(3, 12))
            v = np.triu(rng.uniform(0.0, 1.0, (m, m)), 1)
            dm = DistanceMatrix(tuple(f"m{i}" for i in range(m)), v + v.T)
            counts = [len(cluster(dm, t)) for t in (0.5, 0.7, 0.9)]
            monotone += counts == sorted(counts)
        d.update(cuts_checked=checked, monotone=f"{monotone}/50")
        assert checked > 500
        assert monotone == 50


def test_criterion_4_sha_schedule(criterion):
    with criterion(4, "SHA budgets 0.03/0.06/0.12/0.125, survivors ceil(n/eta^k), deterministic") as d:
        cfg = ShaConfig()
        assert cfg.budgets() == [0.03, 0.06, 0.12, 0.125]
        for n in (2, 5, 8, 13, 16, 49):
            arms = [Candidate(f"v{i:02d}", "l") for i in range(n)]
            rng = np.random.default_rng(n)
            curves = {c: SyntheticCurveParams(floor_e=float(rng.uniform(0.1, 0.5)), coeff_b=0.05, exponent_beta=0.2,
                                              noise_sigma=0.01) for c in arms}
            runs = [sha(arms, CurveOracle(curves, seed=4), cfg) for _ in range(2)]
            assert runs[0] == runs[1]
            survivors, _, rungs = runs[0]
            assert [r["live"] for r in rungs] == [math.ceil(n / 2**k) for k in range(len(rungs))]
            assert [r["budget"] for r in rungs] == cfg.budgets()[: len(rungs) - 1] + [0.125]
            assert len(survivors) == 1
        d.update(arm_counts="2,5,8,13,16,49")


def test_criterion_5_scaling_exactness(criterion):
    with criterion(5, "noiseless power law recovered to 1e-9; sigma=0.01 median rel. error <= 5%; < 30 s") as d:
        start = time.perf_counter()
        c = Candidate("v", "l")
        worst = 0.0
        for b, beta in [(0.3, 0.1), (0.05, 0.5), (0.5, 0.02), (0.2, 0.3)]:
            o = CurveOracle({c: SyntheticCurveParams(coeff_b=b, exponent_beta=beta, family="pure-power-law")})
            fit = predict_candidate(c, o, ScalingConfig())
            worst = max(worst, abs(fit.slope + beta) / beta, abs(fit.intercept - math.log(b)) / abs(math.log(b)),
                        abs(fit.predicted_full_error - b) / b)
        rel = []
        for seed in range(100):
            o = CurveOracle({c: SyntheticCurveParams(coeff_b=0.3, exponent_beta=0.1, noise_sigma=0.01,
                                                     family="pure-power-law")}, seed=seed)
            rel.append(abs(predict_candidate(c, o, ScalingConfig()).predicted_full_error - 0.3) / 0.3)
        elapsed = time.perf_counter() - start
        d.update(noiseless_rel=f"{worst:.1e}", noisy_median=f"{np.median(rel):.4f}", seconds=f"{elapsed:.2f}")
        assert worst <= 1e-9
        assert np.median(rel) <= 0.05
        assert elapsed < 30


def brute_tau(T, S):
    t = {c: i for i, c in enumerate(T)}
    s = {c: i for i, c in enumerate(S)}
    total = 0
    for a, b in itertools.combinations(T, 2):
        total += ((t[a] > t[b]) - (t[a] < t[b])) * ((s[a] > s[b]) - (s[a] < s[b]))
    M = len(T)
    return Fraction(2 * total, M * (M - 1))


def test_criterion_6_kendall_oracle(criterion):
    with criterion(6, "kendall_tau equals brute force on 1000 pairs (M <= 12); 1/3 and +/-1 examples") as d:
        rng = np.random.default_rng(6)
        mismatches = 0
        for _ in range(1000):
            M = int(rng.integers(2, 13))
            T, S = list(rng.permutation(M)), list(rng.permutation(M))
            mismatches += kendall_tau(T, S) != float(brute_tau(T, S))
        d.update(mismatches=mismatches)
        assert mismatches == 0
        assert kendall_tau("abc", "acb") == pytest.approx(1 / 3, abs=1e-15)
        assert kendall_tau("abcd", "abcd") == 1.0
        assert kendall_tau("abcd", "dcba") == -1.0


@pytest.fixture(scope="module")
def end_to_end():
    start = time.perf_counter()
    rows = []
    for seed in range(20):
        zoo = generate_synthetic(SyntheticSpec.planted(seed=seed), seed=seed)
        oracle = zoo.oracle()
        report = run(zoo, oracle, SearchConfig(seed=seed), workers=1)
        ev = compare_to_grid(report, run_grid(zoo.candidates, oracle), k=10)
        costs = report.costs
        rows.append({
            "top1": report.top1 == planted_best(zoo),
            "topk_tau_w": ev["topk_tau_w"],
            "speedup": ev["speedup"],
            "prediction_share": costs["prediction"] / costs["total"],
            "es_share": (costs["inter_es"] + costs["intra_es"]) / costs["total"],
        })
    return rows, time.perf_counter() - start


def test_criterion_7_end_to_end(criterion, end_to_end):
    with criterion(7, "20 seeded 7x7 traces: top-1 >= 80%, median top-10 tau_w >= 0.7, speedup >= 5 all / >= 8 median, < 2 min") as d:
        rows, elapsed = end_to_end
        hit = sum(r["top1"] for r in rows) / len(rows)
        tau = float(np.median([r["topk_tau_w"] for r in rows]))
        sp = [r["speedup"] for r in rows]
        d.update(top1=f"{hit:.0%}", median_tau_w=f"{tau:.3f}", min_speedup=f"{min(sp):.1f}",
                 median_speedup=f"{np.median(sp):.1f}", seconds=f"{elapsed:.1f}")
        assert hit >= 0.8
        assert tau >= 0.7
        assert min(sp) >= 5 and np.median(sp) >= 8
        assert elapsed < 120


def test_criterion_8_checkpoint_reuse(criterion):
    with criterion(8, "training cost = max ratio x full_train_cost over 200 fuzzed sequences") as d:
        rng = np.random.default_rng(8)
        worst = 0.0
        c = Candidate("v", "l")
        for _ in range(200):
            full = float(rng.uniform(0.5, 5.0))
            ledger = CostLedger(CostModel(full_train_cost=full, eval_cost=0.01))
            seq = rng.uniform(0.001, 1.0, int(rng.integers(1, 30)))
            for r in seq:
                ledger.charge_query(c, float(r))
            expected = float(seq.max()) * full
            worst = max(worst, abs(ledger.training_cost() - expected) / expected)
            # the same multiset in another order books the same training total
            other = CostLedger(ledger.cost_model)
            for r in rng.permutation(seq):
                other.charge_query(c, float(r))
            worst = max(worst, abs(other.training_cost() - expected) / expected)
        d.update(max_rel_dev=f"{worst:.1e}")
        assert worst <= 1e-12


def test_criterion_9_determinism(criterion, tmp_path):
    with criterion(9, "identical run twice gives byte-identical report JSON") as d:
        zoo = generate_synthetic(SyntheticSpec.planted(seed=9), seed=9)
        a = run(zoo, zoo.oracle(), SearchConfig(seed=9), workers=4).dumps()
        b = run(zoo, zoo.oracle(), SearchConfig(seed=9), workers=1).dumps()
        outs = []
        for name in ("a.json", "b.json"):
            assert main(["run", "--config", str(ROOT / "configs" / "default.json"), "--out", str(tmp_path / name)]) == 0
            outs.append((tmp_path / name).read_bytes())
        d.update(library=a == b, cli=outs[0] == outs[1])
        assert a == b
        assert outs[0] == outs[1]


def test_criterion_10_phase_breakdown(criterion, end_to_end):
    with criterion(10, "prediction < 15% of total and early stopping > 50% in every seed") as d:
        rows, _ = end_to_end
        pred = max(r["prediction_share"] for r in rows)
        es = min(r["es_share"] for r in rows)
        d.update(max_prediction_share=f"{pred:.3f}", min_early_stopping_share=f"{es:.3f}")
        assert pred < 0.15
        assert es > 0.5
