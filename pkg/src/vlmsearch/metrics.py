"""Rank-agreement and efficiency metrics.

A ranking is a sequence of hashable ids, best first. Rank positions are
1-based.
"""

from __future__ import annotations

from typing import Hashable, Sequence

from .errors import InputError


def _positions(T: Sequence[Hashable], S: Sequence[Hashable]) -> tuple[list, dict, dict]:
    if len(set(T)) != len(T) or len(set(S)) != len(S):
        raise InputError("rankings must not contain duplicate ids")
    if set(T) != set(S):
        raise InputError("rankings must cover the same ids")
    if len(T) < 2:
        raise InputError("need at least 2 ranked ids")
    t_pos = {c: i + 1 for i, c in enumerate(T)}
    s_pos = {c: i + 1 for i, c in enumerate(S)}
    return list(T), t_pos, s_pos


def _sgn(x) -> int:
    return (x > 0) - (x < 0)


def kendall_tau(T: Sequence[Hashable], S: Sequence[Hashable], t_ranks=None, s_ranks=None) -> float:
    """Kendall's tau between two rankings of the same ids.

    ``t_ranks``/``s_ranks`` optionally override rank positions (e.g. to give
    tied items equal ranks); pairs tied in either ranking contribute 0.
    """
    ids, t_pos, s_pos = _positions(T, S)
    t_pos = t_ranks or t_pos
    s_pos = s_ranks or s_pos
    M = len(ids)
    total = 0
    for i in range(M):
        a = ids[i]
        for j in range(i + 1, M):
            b = ids[j]
            total += _sgn(t_pos[a] - t_pos[b]) * _sgn(s_pos[a] - s_pos[b])
    return 2.0 * total / (M * (M - 1))


def weighted_kendall_tau(T: Sequence[Hashable], S: Sequence[Hashable], t_ranks=None, s_ranks=None) -> float:
    """Hyperbolically weighted tau; weights come from the reference ranking ``T``.

    Pair ``(i, j)`` has weight ``1/T_i + 1/T_j``. Ties score 0 in the
    numerator but keep their full weight in the denominator.
    """
    ids, t_pos, s_pos = _positions(T, S)
    t_pos = t_ranks or t_pos
    s_pos = s_ranks or s_pos
    num = den = 0.0
    for i in range(len(ids)):
        a = ids[i]
        for j in range(i + 1, len(ids)):
            b = ids[j]
            w = 1.0 / t_pos[a] + 1.0 / t_pos[b]
            num += w * _sgn(t_pos[a] - t_pos[b]) * _sgn(s_pos[a] - s_pos[b])
            den += w
    return num / den


def topk_tau(ground_truth: Sequence[Hashable], ranking: Sequence[Hashable], k: int, s_ranks=None) -> float:
    """Weighted tau restricted to the ground truth's top ``k`` ids.

    Both rankings are reduced to those ids, keeping each ranking's own order.
    ``s_ranks`` may supply tie-aware positions for ``ranking``.
    """
    if not 2 <= k <= len(ground_truth):
        raise InputError(f"k must be in [2, {len(ground_truth)}], got {k}")
    top = list(ground_truth[:k])
    keep = set(top)
    sub = [c for c in ranking if c in keep]
    sub_ranks = None
    if s_ranks is not None:
        sub_ranks = {c: s_ranks[c] for c in sub}
    return weighted_kendall_tau(top, sub, s_ranks=sub_ranks)


def speedup(search_cost: float, grid_cost: float) -> float:
    if search_cost <= 0 or grid_cost <= 0:
        raise InputError("costs must be positive")
    return grid_cost / search_cost
