import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import kendalltau

from vlmsearch.errors import InputError
from vlmsearch.metrics import kendall_tau, speedup, topk_tau, weighted_kendall_tau


def brute_weighted(T, S):
    """Exact rational reference over ordered pairs (each unordered pair twice)."""
    t = {c: i + 1 for i, c in enumerate(T)}
    s = {c: i + 1 for i, c in enumerate(S)}
    num = den = Fraction(0)
    for a, b in itertools.permutations(T, 2):
        w = Fraction(1, t[a]) + Fraction(1, t[b])
        sign = ((t[a] > t[b]) - (t[a] < t[b])) * ((s[a] > s[b]) - (s[a] < s[b]))
        num += w * sign
        den += w
    return num / den


def test_three_item_example():
    assert kendall_tau("abc", "acb") == pytest.approx(1 / 3)
    assert kendall_tau("abc", "abc") == 1.0
    assert kendall_tau("abc", "cba") == -1.0


def test_weighted_swap_of_top_two():
    assert weighted_kendall_tau("abcd", "bacd") == pytest.approx(0.52, abs=1e-12)
    assert brute_weighted("abcd", "bacd") == Fraction(13, 25)


def test_weighted_penalises_top_swaps_more():
    top = weighted_kendall_tau("abcd", "bacd")
    bottom = weighted_kendall_tau("abcd", "abdc")
    assert top < bottom < 1
    assert kendall_tau("abcd", "bacd") == kendall_tau("abcd", "abdc")


def test_weighted_is_not_symmetric():
    T, S = "abcd", "bcda"
    assert weighted_kendall_tau(T, S) != pytest.approx(weighted_kendall_tau(S, T))


def test_ties_score_zero_but_keep_weight():
    ranks = {"a": 1, "b": 1, "c": 3}
    # pair (a,b) tied in S: weights 1.5 (a,b) + 1.333 (a,c) + 0.833 (b,c)
    got = weighted_kendall_tau("abc", "abc", s_ranks=ranks)
    assert got == pytest.approx((4 / 3 + 5 / 6) / (1.5 + 4 / 3 + 5 / 6))
    assert kendall_tau("abc", "abc", s_ranks=ranks) == pytest.approx(2 / 3)


def test_topk_tau():
    truth = list("abcdef")
    assert topk_tau(truth, list("fedcba"), 3) == -1.0
    assert topk_tau(truth, list("abcfed"), 3) == 1.0
    assert topk_tau(truth, list("bafedc"), 2) == -1.0
    with pytest.raises(InputError):
        topk_tau(truth, truth, 1)


def test_input_errors():
    with pytest.raises(InputError):
        kendall_tau("ab", "ac")
    with pytest.raises(InputError):
        kendall_tau("aab", "aba")
    with pytest.raises(InputError):
        kendall_tau("a", "a")


def test_speedup():
    assert speedup(5.2, 49.49) == pytest.approx(9.517307692307692, rel=1e-12)
    with pytest.raises(InputError):
        speedup(0.0, 1.0)


def test_against_references():
    rng = np.random.default_rng(0)
    for _ in range(300):
        M = int(rng.integers(2, 13))
        T = list(range(M))
        S = list(rng.permutation(M))
        assert kendall_tau(T, S) == pytest.approx(kendalltau(T, [S.index(i) for i in T]).statistic, abs=1e-12)
        assert weighted_kendall_tau(T, S) == pytest.approx(float(brute_weighted(T, S)), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.permutations(list(range(8))), st.permutations(list(range(8))))
def test_kendall_symmetric_and_bounded(T, S):
    assert kendall_tau(T, S) == pytest.approx(kendall_tau(S, T))
    assert -1 <= weighted_kendall_tau(T, S) <= 1


@settings(max_examples=100, deadline=None)
@given(st.permutations(list(range(7))), st.permutations(list(range(7))), st.permutations(list(range(7))))
def test_relabeling_invariance(T, S, relabel):
    f = {i: f"m{relabel[i]}" for i in range(7)}
    assert kendall_tau(T, S) == pytest.approx(kendall_tau([f[i] for i in T], [f[i] for i in S]))
    assert weighted_kendall_tau(T, S) == pytest.approx(weighted_kendall_tau([f[i] for i in T], [f[i] for i in S]))


@settings(max_examples=50, deadline=None)
@given(st.permutations(list(range(9))))
def test_reversal_is_minus_one(T):
    assert kendall_tau(T, T[::-1]) == -1.0
    assert weighted_kendall_tau(T, T[::-1]) == pytest.approx(-1.0)


def test_random_rankings_centre_on_zero():
    rng = np.random.default_rng(1)
    T = list(range(10))
    taus = [kendall_tau(T, list(rng.permutation(10))) for _ in range(10_000)]
    assert abs(np.mean(taus)) <= 0.05
