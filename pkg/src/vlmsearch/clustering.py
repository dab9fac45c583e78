"""Distance matrices, threshold-cut average-linkage clustering, and the
two-step (vision encoder, then language model) candidate clustering."""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import InputError, SearchError, UnknownIdError
from .similarity import ActivationMatrix, distance

# Merge heights within this of the cut are treated as on the cut.
_CUT_EPS = 1e-12


@dataclass(frozen=True, order=True)
class Candidate:
    """One (vision encoder, language model) combination."""

    ve_id: str
    llm_id: str

    def __str__(self):
        return f"{self.ve_id}__{self.llm_id}"

    @classmethod
    def parse(cls, text: str) -> "Candidate":
        ve, sep, llm = text.partition("__")
        if not sep or not ve or not llm:
            raise InputError(f"not a candidate id: {text!r}")
        return cls(ve, llm)


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    ids: tuple[str, ...]
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        ids = tuple(self.ids)
        values = np.array(self.values, dtype=np.float64)
        if values.ndim == 1 and values.size == len(ids) ** 2:
            values = values.reshape(len(ids), len(ids))
        if values.shape != (len(ids), len(ids)):
            raise InputError(f"distance matrix shape {values.shape} does not match {len(ids)} ids")
        if len(set(ids)) != len(ids):
            raise InputError("duplicate ids in distance matrix")
        if not np.allclose(values, values.T, rtol=0, atol=1e-12):
            raise InputError("distance matrix is not symmetric")
        if np.any(np.diag(values) != 0.0):
            raise InputError("distance matrix diagonal must be zero")
        if np.any(values < -1e-12) or np.any(values > 1 + 1e-12):
            raise InputError("distances must lie in [0, 1]")
        values.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "values", values)

    def index(self, model_id: str) -> int:
        try:
            return self.ids.index(model_id)
        except ValueError:
            raise UnknownIdError(f"unknown model id {model_id!r}") from None

    def __getitem__(self, pair: tuple[str, str]) -> float:
        a, b = pair
        return float(self.values[self.index(a), self.index(b)])

    def to_json(self) -> dict:
        return {"ids": list(self.ids), "values": [float(v) for v in self.values.ravel()]}

    @classmethod
    def from_json(cls, data: Mapping) -> "DistanceMatrix":
        return cls(tuple(data["ids"]), np.asarray(data["values"], dtype=np.float64))


@dataclass(frozen=True)
class ClusterSet:
    clusters: tuple[tuple[str, ...], ...]
    medoids: tuple[str, ...]
    threshold: float

    def __len__(self):
        return len(self.clusters)

    def labels(self) -> dict[str, int]:
        return {m: i for i, members in enumerate(self.clusters) for m in members}


@dataclass(frozen=True)
class CandidateCluster:
    members: tuple[Candidate, ...]
    representative: Candidate

    def __len__(self):
        return len(self.members)


def pairwise_distance_matrix(
    activations: Sequence[ActivationMatrix],
    batch_size: int | None = None,
    workers: int = 1,
) -> DistanceMatrix:
    """``1 - CKA`` over every unordered pair of models."""
    if len(activations) < 2:
        raise InputError(f"need at least 2 models, got {len(activations)}")
    ids = [a.model_id for a in activations]
    n_samples = {a.n_samples for a in activations}
    if len(n_samples) != 1:
        raise InputError(f"models disagree on sample count: {sorted(n_samples)}")
    pairs = list(itertools.combinations(range(len(activations)), 2))

    def one(pair):
        i, j = pair
        try:
            return distance(activations[i], activations[j], batch_size=batch_size)
        except SearchError as exc:
            raise type(exc)(f"({ids[i]}, {ids[j]}): {exc}") from exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            dists = list(pool.map(one, pairs))
    else:
        dists = [one(p) for p in pairs]
    values = np.zeros((len(ids), len(ids)))
    for (i, j), d in zip(pairs, dists):
        values[i, j] = values[j, i] = d
    return DistanceMatrix(tuple(ids), values)


def medoid(members: Sequence[str], dist: DistanceMatrix) -> str:
    """Member with the smallest summed distance to the others (ties: smallest id)."""
    if not members:
        raise InputError("medoid of an empty cluster")
    idx = [dist.index(m) for m in members]
    sub = dist.values[np.ix_(idx, idx)]
    sums = sub.sum(axis=1)
    return min(zip(sums.tolist(), members), key=lambda t: (t[0], t[1]))[1]


def average_linkage_merges(dist: DistanceMatrix) -> list[tuple[tuple[str, ...], tuple[str, ...], float]]:
    """Full UPGMA merge sequence as ``(left, right, height)``.

    Equal-height merges are resolved by the lexicographically smallest pair of
    cluster keys (each cluster keyed by its sorted member ids).
    """
    D = dist.values
    clusters = {(m,): [dist.index(m)] for m in dist.ids}
    merges = []
    while len(clusters) > 1:
        best = None
        keys = sorted(clusters)
        for a, b in itertools.combinations(keys, 2):
            h = float(D[np.ix_(clusters[a], clusters[b])].mean())
            if best is None or h < best[0]:
                best = (h, a, b)
        h, a, b = best
        merged = tuple(sorted(a + b))
        clusters[merged] = clusters.pop(a) + clusters.pop(b)
        merges.append((a, b, h))
    return merges


def cluster(dist: DistanceMatrix, t: float) -> ClusterSet:
    """Average-linkage clustering cut at height ``1 - t``.

    ``t`` is a similarity threshold: two groups stay merged only while their
    average CKA is at least ``t``. Larger ``t`` gives more, smaller clusters.
    """
    if not 0.0 <= t <= 1.0:
        raise InputError(f"threshold must be in [0, 1], got {t}")
    height = 1.0 - t
    groups = {m: (m,) for m in dist.ids}
    for a, b, h in average_linkage_merges(dist):
        if h > height + _CUT_EPS:
            break
        merged = tuple(sorted(a + b))
        for m in merged:
            groups[m] = merged
    clusters = sorted(set(groups.values()))
    medoids = tuple(medoid(c, dist) for c in clusters)
    return ClusterSet(tuple(clusters), medoids, t)


def _single(model_id: str, t: float) -> ClusterSet:
    return ClusterSet(((model_id,),), (model_id,), t)


def cluster_models(dist: DistanceMatrix | None, ids: Sequence[str], t: float) -> ClusterSet:
    if len(ids) == 1:
        return _single(ids[0], t)
    if dist is None:
        raise InputError("distance matrix required for more than one model")
    return cluster(dist, t)


def two_step_clusters(
    ve_ids: Sequence[str],
    llm_ids: Sequence[str],
    ve_dist: DistanceMatrix | None,
    llm_dist_for: Callable[[str], DistanceMatrix | None],
    t_ve: float,
    t_llm: float,
) -> tuple[list[CandidateCluster], ClusterSet, dict[str, ClusterSet]]:
    """Cluster encoders, then language models per encoder-cluster medoid.

    ``llm_dist_for(ve_id)`` returns the language-model distance matrix
    computed from activations conditioned on that encoder. Returns the
    candidate clusters plus the intermediate cluster sets for reporting.
    """
    ve_clusters = cluster_models(ve_dist, list(ve_ids), t_ve)
    llm_clusterings = {}
    out = []
    for ve_members, ve_medoid in zip(ve_clusters.clusters, ve_clusters.medoids):
        llm_clusters = cluster_models(llm_dist_for(ve_medoid) if len(llm_ids) > 1 else None, list(llm_ids), t_llm)
        llm_clusterings[ve_medoid] = llm_clusters
        for llm_members, llm_medoid in zip(llm_clusters.clusters, llm_clusters.medoids):
            members = tuple(Candidate(v, l) for v in ve_members for l in llm_members)
            out.append(CandidateCluster(members, Candidate(ve_medoid, llm_medoid)))
    return out, ve_clusters, llm_clusterings


def candidate_clusters(
    ve_activations: Sequence[ActivationMatrix],
    llm_activation_source: Callable[[str], Sequence[ActivationMatrix]],
    t_ve: float,
    t_llm: float,
    batch_size: int | None = None,
) -> list[CandidateCluster]:
    """Two-step candidate clustering straight from activations.

    ``llm_activation_source(ve_id)`` must return one activation matrix per
    language model, conditioned on that encoder's projected image embeddings.
    """
    ve_ids = [a.model_id for a in ve_activations]
    ve_dist = pairwise_distance_matrix(ve_activations, batch_size) if len(ve_ids) > 1 else None
    medoids = cluster_models(ve_dist, ve_ids, t_ve).medoids
    conditioned = {}
    for ve_id in medoids:
        try:
            conditioned[ve_id] = list(llm_activation_source(ve_id))
        except SearchError as exc:
            raise type(exc)(f"activation source failed for encoder {ve_id!r}: {exc}") from exc
    llm_ids = [a.model_id for a in conditioned[medoids[0]]]
    for ve_id, acts in conditioned.items():
        if sorted(a.model_id for a in acts) != sorted(llm_ids):
            raise InputError(f"encoder {ve_id!r}: conditioned activations cover a different model set")

    def llm_dist_for(ve_id: str) -> DistanceMatrix:
        acts = {a.model_id: a for a in conditioned[ve_id]}
        return pairwise_distance_matrix([acts[m] for m in llm_ids], batch_size)

    clusters, _, _ = two_step_clusters(ve_ids, llm_ids, ve_dist, llm_dist_for, t_ve, t_llm)
    return clusters
