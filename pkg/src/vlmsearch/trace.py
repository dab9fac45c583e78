"""Trace bundles: on-disk activations, distances and learning curves, plus a
seeded generator of synthetic bundles with planted cluster structure.

Layout of a bundle directory::

    manifest.json
    activations/<ve_id>.csv
    llm_activations/<ve_id>__<llm_id>.csv
    distances/ve.json               (optional)
    distances/llm__<ve_id>.json     (optional)
    curves.jsonl

Activation CSVs start with a header row ``model_id,n_samples,n_features``
holding those three values, followed by one sample per row.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .clustering import Candidate, DistanceMatrix, pairwise_distance_matrix
from .errors import InputError, SpecError, TraceError
from .oracle import CostModel, CurveOracle, SyntheticCurveParams, TraceOracle, clamp_error, ratio_key
from .similarity import ActivationMatrix

FORMAT = "vlmsearch-trace"
VERSION = 1


def default_ratio_grid(
    R: float = 0.125,
    b: float = 0.03,
    eta: float = 2.0,
    u: float = 2.0,
    min_ratio: float | None = None,
    include_full: bool = True,
) -> list[float]:
    """Every ratio a search with these settings may query."""
    if min_ratio is None:
        min_ratio = R / u**5
    grid = {ratio_key(1.0)} if include_full else set()
    k = 0
    while True:
        budget = min(b * eta**k, R)
        grid.add(ratio_key(budget))
        if budget >= R:
            break
        k += 1
    r = R
    while r >= min_ratio * (1 - 1e-12):
        grid.add(ratio_key(r))
        r /= u
    return sorted(float(g) for g in grid)


# ---------------------------------------------------------------------------
# CSV I/O


def write_activation_csv(path: Path, act: ActivationMatrix) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"{act.model_id},{act.n_samples},{act.n_features}\n")
        for row in act.values:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


def read_activation_csv(path: str | os.PathLike) -> ActivationMatrix:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}:1: empty activation file") from None
        if len(header) != 3:
            raise InputError(f"{path}:1: header must be model_id,n_samples,n_features")
        model_id = header[0].strip()
        try:
            n_samples, n_features = int(header[1]), int(header[2])
        except ValueError:
            raise InputError(f"{path}:1: n_samples and n_features must be integers") from None
        if n_samples < 2 or n_features < 1:
            raise InputError(f"{path}:1: need n_samples >= 2 and n_features >= 1")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != n_features:
                raise InputError(f"{path}:{lineno}: expected {n_features} values, got {len(row)}")
            try:
                values = [float(v) for v in row]
            except ValueError:
                raise InputError(f"{path}:{lineno}: non-numeric value") from None
            if not all(math.isfinite(v) for v in values):
                raise InputError(f"{path}:{lineno}: non-finite value")
            rows.append(values)
    if len(rows) != n_samples:
        raise InputError(f"{path}: header declares {n_samples} samples, found {len(rows)}")
    return ActivationMatrix(model_id, np.array(rows))


def read_activation_dir(path: str | os.PathLike) -> list[ActivationMatrix]:
    files = sorted(Path(path).glob("*.csv"))
    return [read_activation_csv(f) for f in files]


# ---------------------------------------------------------------------------
# Bundles


@dataclass
class TraceBundle:
    ve_ids: list[str]
    llm_ids: list[str]
    ratio_grid: list[float]
    curves: dict[tuple[Candidate, str], float]
    cost_model: CostModel = field(default_factory=CostModel)
    ve_activations: dict[str, ActivationMatrix] = field(default_factory=dict)
    llm_activations: dict[tuple[str, str], ActivationMatrix] = field(default_factory=dict)
    ve_distances: DistanceMatrix | None = None
    llm_distances: dict[str, DistanceMatrix] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def candidates(self) -> list[Candidate]:
        return [Candidate(v, l) for v in self.ve_ids for l in self.llm_ids]

    def oracle(self) -> TraceOracle:
        oracle = TraceOracle(self.curves, self.cost_model)
        oracle.bundle = self
        return oracle

    def missing_points(self, ratios: Iterable[float]) -> list[tuple[Candidate, str]]:
        keys = sorted({ratio_key(r) for r in ratios}, key=float)
        return [(c, k) for c in self.candidates for k in keys if (c, k) not in self.curves]

    def full_data_errors(self) -> dict[Candidate, float] | None:
        key = ratio_key(1.0)
        out = {}
        for c in self.candidates:
            if (c, key) not in self.curves:
                return None
            out[c] = self.curves[(c, key)]
        return out

    # representation access used by the search

    def ve_distance_matrix(self, batch_size: int | None = None) -> DistanceMatrix | None:
        if len(self.ve_ids) < 2:
            return None
        if self.ve_distances is not None:
            return self.ve_distances
        if not self.ve_activations:
            raise TraceError("bundle has neither encoder distances nor encoder activations")
        return pairwise_distance_matrix([self.ve_activations[v] for v in self.ve_ids], batch_size)

    def llm_distance_matrix(self, ve_id: str, batch_size: int | None = None) -> DistanceMatrix | None:
        if len(self.llm_ids) < 2:
            return None
        if ve_id in self.llm_distances:
            return self.llm_distances[ve_id]
        try:
            acts = [self.llm_activations[(ve_id, l)] for l in self.llm_ids]
        except KeyError as exc:
            raise TraceError(f"missing conditioned activations for pair {exc.args[0]}") from None
        return pairwise_distance_matrix(acts, batch_size)

    def n_cka_pairs(self, ve_medoids: Sequence[str]) -> int:
        """CKA evaluations the two-step clustering performs (precomputed matrices excluded)."""
        n = 0
        if self.ve_distances is None and len(self.ve_ids) > 1:
            n += len(self.ve_ids) * (len(self.ve_ids) - 1) // 2
        for m in ve_medoids:
            if m not in self.llm_distances and len(self.llm_ids) > 1:
                n += len(self.llm_ids) * (len(self.llm_ids) - 1) // 2
        return n

    # persistence

    def save(self, path: str | os.PathLike) -> Path:
        root = Path(path)
        (root / "activations").mkdir(parents=True, exist_ok=True)
        manifest = {
            "format": FORMAT,
            "version": VERSION,
            "ve_ids": list(self.ve_ids),
            "llm_ids": list(self.llm_ids),
            "ratio_grid": [float(r) for r in self.ratio_grid],
            "cost_model": asdict(self.cost_model),
            "generator": self.metadata.get("generator"),
            "metadata": {k: v for k, v in self.metadata.items() if k != "generator"},
            "distances": {},
        }
        for v, act in sorted(self.ve_activations.items()):
            write_activation_csv(root / "activations" / f"{v}.csv", act)
        if self.llm_activations:
            (root / "llm_activations").mkdir(exist_ok=True)
            for (v, l), act in sorted(self.llm_activations.items()):
                write_activation_csv(root / "llm_activations" / f"{v}__{l}.csv", act)
        if self.ve_distances is not None or self.llm_distances:
            (root / "distances").mkdir(exist_ok=True)
            if self.ve_distances is not None:
                _write_json(root / "distances" / "ve.json", self.ve_distances.to_json())
                manifest["distances"]["ve"] = "distances/ve.json"
            for v, d in sorted(self.llm_distances.items()):
                name = f"distances/llm__{v}.json"
                _write_json(root / name, d.to_json())
                manifest["distances"].setdefault("llm", {})[v] = name
        with open(root / "curves.jsonl", "w") as fh:
            for (c, key), err in sorted(self.curves.items(), key=lambda kv: (kv[0][0], float(kv[0][1]))):
                fh.write(json.dumps({"ve": c.ve_id, "llm": c.llm_id, "ratio": float(key), "error": err}) + "\n")
        _write_json(root / "manifest.json", manifest)
        return root

    def digest(self) -> str:
        """SHA-256 over the canonical serialisation (independent of directory)."""
        h = hashlib.sha256()
        h.update(json.dumps([self.ve_ids, self.llm_ids, self.ratio_grid, asdict(self.cost_model), self.metadata],
                            sort_keys=True).encode())
        for (c, key), err in sorted(self.curves.items(), key=lambda kv: (kv[0][0], float(kv[0][1]))):
            h.update(f"{c}|{key}|{err!r}\n".encode())
        for v, act in sorted(self.ve_activations.items()):
            h.update(v.encode())
            h.update(act.values.tobytes())
        for (v, l), act in sorted(self.llm_activations.items()):
            h.update(f"{v}__{l}".encode())
            h.update(act.values.tobytes())
        return h.hexdigest()


def _write_json(path: Path, data) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")


def _read_json(path: Path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise TraceError(f"missing file {path}") from None
    except json.JSONDecodeError as exc:
        raise TraceError(f"{path}: invalid JSON ({exc})") from None


def read_bundle(path: str | os.PathLike) -> TraceBundle:
    root = Path(path)
    if not root.is_dir():
        raise TraceError(f"trace bundle {root} is not a directory")
    manifest = _read_json(root / "manifest.json")
    if not isinstance(manifest, dict) or manifest.get("format") != FORMAT:
        raise TraceError(f"{root / 'manifest.json'}: not a {FORMAT} manifest")
    for key in ("ve_ids", "llm_ids", "ratio_grid"):
        if not isinstance(manifest.get(key), list) or not manifest[key]:
            raise TraceError(f"manifest field {key!r} must be a non-empty list")
    ve_ids = [str(v) for v in manifest["ve_ids"]]
    llm_ids = [str(l) for l in manifest["llm_ids"]]
    if len(set(ve_ids)) != len(ve_ids) or len(set(llm_ids)) != len(llm_ids):
        raise TraceError("duplicate model ids in manifest")
    try:
        cost_model = CostModel.from_json(manifest.get("cost_model"))
    except (TypeError, ValueError) as exc:
        raise TraceError(f"invalid cost model: {exc}") from None

    ve_set, llm_set = set(ve_ids), set(llm_ids)
    curves = {}
    curve_path = root / "curves.jsonl"
    if not curve_path.exists():
        raise TraceError(f"missing file {curve_path}")
    with open(curve_path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                cand = Candidate(str(rec["ve"]), str(rec["llm"]))
                ratio, err = float(rec["ratio"]), float(rec["error"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                raise TraceError(f"{curve_path}:{lineno}: malformed curve record") from None
            if cand.ve_id not in ve_set or cand.llm_id not in llm_set:
                raise TraceError(f"{curve_path}:{lineno}: candidate {cand} not in zoo")
            if not (0 < ratio <= 1) or not (0 < err <= 1):
                raise TraceError(f"{curve_path}:{lineno}: ratio and error must be in (0, 1]")
            curves[(cand, ratio_key(ratio))] = err

    def load_csv(p: Path) -> ActivationMatrix:
        try:
            return read_activation_csv(p)
        except InputError as exc:
            raise TraceError(str(exc)) from None

    ve_acts = {}
    for v in ve_ids:
        p = root / "activations" / f"{v}.csv"
        if p.exists():
            ve_acts[v] = load_csv(p)
    llm_acts = {}
    llm_dir = root / "llm_activations"
    if llm_dir.is_dir():
        for p in sorted(llm_dir.glob("*.csv")):
            v, sep, l = p.stem.partition("__")
            if not sep or v not in ve_set or l not in llm_set:
                raise TraceError(f"{p}: file name must be <ve_id>__<llm_id>.csv for known ids")
            llm_acts[(v, l)] = load_csv(p)

    dist_spec = manifest.get("distances") or {}
    ve_dist = None
    try:
        if "ve" in dist_spec:
            ve_dist = DistanceMatrix.from_json(_read_json(root / dist_spec["ve"]))
        llm_dist = {v: DistanceMatrix.from_json(_read_json(root / p)) for v, p in (dist_spec.get("llm") or {}).items()}
    except (InputError, KeyError, TypeError) as exc:
        raise TraceError(f"invalid distance matrix: {exc}") from None

    metadata = dict(manifest.get("metadata") or {})
    if manifest.get("generator") is not None:
        metadata["generator"] = manifest["generator"]
    return TraceBundle(
        ve_ids=ve_ids,
        llm_ids=llm_ids,
        ratio_grid=[float(r) for r in manifest["ratio_grid"]],
        curves=curves,
        cost_model=cost_model,
        ve_activations=ve_acts,
        llm_activations=llm_acts,
        ve_distances=ve_dist,
        llm_distances=llm_dist,
        metadata=metadata,
    )


def load_trace(path: str | os.PathLike, required_ratios: Iterable[float] | None = None) -> TraceOracle:
    """Load and validate a bundle; return a replay oracle (bundle at ``.bundle``).

    ``required_ratios`` lists every ratio the configured search may query;
    any uncovered (candidate, ratio) point is reported as a load error.
    """
    bundle = read_bundle(path)
    if required_ratios is not None:
        missing = bundle.missing_points(required_ratios)
        if missing:
            shown = ", ".join(f"({c}, r={k})" for c, k in missing[:10])
            more = f" and {len(missing) - 10} more" if len(missing) > 10 else ""
            raise TraceError(f"trace does not cover the configured ratio grid: missing {shown}{more}")
    if not bundle.ve_activations and bundle.ve_distances is None and len(bundle.ve_ids) > 1:
        raise TraceError("bundle carries neither encoder activations nor an encoder distance matrix")
    return bundle.oracle()


# ---------------------------------------------------------------------------
# Synthetic generation


@dataclass
class SyntheticSpec:
    """Zoo layout and curve parameters for :func:`generate_synthetic`.

    ``llm_groups_by_ve_group`` overrides the language-model grouping seen
    through a given encoder group (keyed by encoder-group index), which is how
    different encoder clusters can induce different language-model clusters.
    ``group_errors[g][h]`` fixes the full-data error of encoder group ``g``
    paired with language-model group ``h``; when absent it is drawn.
    """

    ve_groups: list[list[str]]
    llm_groups: list[list[str]]
    llm_groups_by_ve_group: dict[int, list[list[str]]] = field(default_factory=dict)
    group_errors: list[list[float]] | None = None
    family: str = "floored-power-law"
    floor_fraction: float = 0.4
    exponent_beta: float = 0.15
    beta_spread: float = 0.05
    noise_sigma: float = 0.003
    candidate_jitter: float = 0.01
    best_margin: float = 0.01
    n_samples: int = 96
    n_features: int = 16
    latent_rank: int = 4
    model_noise: float = 0.2
    ratio_grid: list[float] | None = None
    cost_model: CostModel = field(default_factory=CostModel)
    curves: dict[str, SyntheticCurveParams] = field(default_factory=dict)

    def __post_init__(self):
        if not self.ve_groups or not self.llm_groups:
            raise SpecError("need at least one encoder group and one language-model group")
        for groups in [self.ve_groups, self.llm_groups, *self.llm_groups_by_ve_group.values()]:
            if any(len(g) == 0 for g in groups):
                raise SpecError("empty group in synthetic spec")
        ve_ids = [m for g in self.ve_groups for m in g]
        llm_ids = [m for g in self.llm_groups for m in g]
        if len(set(ve_ids)) != len(ve_ids) or len(set(llm_ids)) != len(llm_ids):
            raise SpecError("a model appears in more than one group")
        for key, groups in self.llm_groups_by_ve_group.items():
            if not 0 <= int(key) < len(self.ve_groups):
                raise SpecError(f"llm_groups_by_ve_group refers to unknown encoder group {key}")
            if sorted(m for g in groups for m in g) != sorted(llm_ids):
                raise SpecError(f"conditioned grouping for encoder group {key} must cover every language model")
        if self.group_errors is not None:
            if len(self.group_errors) != len(self.ve_groups) or any(
                len(row) != len(self.llm_groups) for row in self.group_errors
            ):
                raise SpecError("group_errors must be |ve_groups| x |llm_groups|")
        if self.family not in ("pure-power-law", "floored-power-law"):
            raise SpecError(f"unknown curve family {self.family!r}")
        if not 0 <= self.floor_fraction < 1:
            raise SpecError("floor_fraction must be in [0, 1)")
        if self.n_samples < 4 or self.n_features < 1 or not 1 <= self.latent_rank <= self.n_features:
            raise SpecError("need n_samples >= 4 and 1 <= latent_rank <= n_features")
        self.llm_groups_by_ve_group = {int(k): v for k, v in self.llm_groups_by_ve_group.items()}

    @property
    def ve_ids(self) -> list[str]:
        return sorted(m for g in self.ve_groups for m in g)

    @property
    def llm_ids(self) -> list[str]:
        return sorted(m for g in self.llm_groups for m in g)

    @classmethod
    def planted(cls, n_ve: int = 7, n_llm: int = 7, seed: int = 0, groups=(2, 3), **kwargs) -> "SyntheticSpec":
        """Random zoo with 2-3 planted groups per modality (all groups non-empty)."""
        rng = np.random.default_rng([seed, 7919])

        def split(ids, n_groups):
            n_groups = min(n_groups, len(ids))
            labels = np.concatenate([np.arange(n_groups), rng.integers(0, n_groups, len(ids) - n_groups)])
            rng.shuffle(labels)
            return [[ids[i] for i in range(len(ids)) if labels[i] == g] for g in range(n_groups)]

        ve = split([f"ve{i}" for i in range(n_ve)], int(rng.integers(groups[0], groups[1] + 1)))
        llm = split([f"llm{i}" for i in range(n_llm)], int(rng.integers(groups[0], groups[1] + 1)))
        return cls(ve_groups=ve, llm_groups=llm, **kwargs)

    def to_json(self) -> dict:
        d = asdict(self)
        d["llm_groups_by_ve_group"] = {str(k): v for k, v in self.llm_groups_by_ve_group.items()}
        return d

    @classmethod
    def from_json(cls, data: Mapping) -> "SyntheticSpec":
        data = dict(data)
        try:
            if "cost_model" in data:
                data["cost_model"] = CostModel.from_json(data["cost_model"])
            if "curves" in data:
                data["curves"] = {k: SyntheticCurveParams(**v) for k, v in data["curves"].items()}
            return cls(**data)
        except TypeError as exc:
            raise SpecError(f"invalid synthetic spec: {exc}") from None


def _orthonormal_rows(rng: np.random.Generator, k: int, f: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((f, k)))
    return q.T


def _group_activations(rng, latent, ids, spec, tag=""):
    out = {}
    for m in ids:
        Q = _orthonormal_rows(rng, spec.latent_rank, spec.n_features)
        noise = rng.standard_normal((spec.n_samples, spec.n_features))
        out[m] = ActivationMatrix(m, latent @ Q + spec.model_noise * noise)
    return out


def generate_synthetic(spec: SyntheticSpec, seed: int = 0) -> TraceBundle:
    """Build a deterministic synthetic trace bundle with a planted best candidate.

    Encoders in one group share a latent basis, so their CKA is high;
    language-model activations are drawn per (encoder, language model) from
    latents keyed by the encoder's group and the language model's group under
    that encoder group. Full-data errors are the group-pair error plus a small
    per-candidate perturbation; one candidate of the best group pair is pushed
    ``best_margin`` below every other candidate and recorded as the planted best.
    """
    rng = np.random.default_rng(seed)
    ve_ids, llm_ids = spec.ve_ids, spec.llm_ids
    n, k = spec.n_samples, spec.latent_rank

    # representations
    ve_group_of = {m: g for g, members in enumerate(spec.ve_groups) for m in members}
    ve_acts = {}
    for members in spec.ve_groups:
        latent = rng.standard_normal((n, k))
        ve_acts.update(_group_activations(rng, latent, sorted(members), spec))
    llm_acts = {}
    for g, members in enumerate(spec.ve_groups):
        groups = spec.llm_groups_by_ve_group.get(g, spec.llm_groups)
        for lg in groups:
            latent = rng.standard_normal((n, k))
            Qs = {l: _orthonormal_rows(rng, k, spec.n_features) for l in sorted(lg)}
            for v in sorted(members):
                for l in sorted(lg):
                    noise = rng.standard_normal((n, spec.n_features))
                    llm_acts[(v, l)] = ActivationMatrix(l, latent @ Qs[l] + spec.model_noise * noise)

    # full-data errors
    llm_group_of = {m: h for h, members in enumerate(spec.llm_groups) for m in members}
    n_vg, n_lg = len(spec.ve_groups), len(spec.llm_groups)
    if spec.group_errors is not None:
        group_err = np.asarray(spec.group_errors, dtype=float)
    else:
        ve_eff = rng.uniform(0.0, 0.15, n_vg)
        llm_eff = rng.uniform(0.0, 0.15, n_lg)
        group_err = 0.2 + ve_eff[:, None] + llm_eff[None, :] + rng.normal(0.0, 0.02, (n_vg, n_lg))
    group_beta = spec.exponent_beta * np.exp(rng.normal(0.0, spec.beta_spread, (n_vg, n_lg)))
    candidates = [Candidate(v, l) for v in ve_ids for l in llm_ids]
    jitter = rng.normal(0.0, 1.0, len(candidates))
    full = {}
    for c, j in zip(candidates, jitter):
        g, h = ve_group_of[c.ve_id], llm_group_of[c.llm_id]
        full[c] = float(np.clip(group_err[g, h] + spec.candidate_jitter * j, 0.02, 0.9))
    bg, bh = np.unravel_index(int(np.argmin(group_err)), group_err.shape)
    in_best = [c for c in candidates if ve_group_of[c.ve_id] == bg and llm_group_of[c.llm_id] == bh]
    planted = min(in_best, key=lambda c: (full[c], c))
    others = min(v for c, v in full.items() if c != planted) if len(full) > 1 else full[planted]
    full[planted] = max(0.01, min(full[planted], others - spec.best_margin))

    curves = {}
    for c in candidates:
        if str(c) in spec.curves:
            curves[c] = spec.curves[str(c)]
            continue
        E = full[c]
        g, h = ve_group_of[c.ve_id], llm_group_of[c.llm_id]
        floor = spec.floor_fraction * E if spec.family == "floored-power-law" else 0.0
        curves[c] = SyntheticCurveParams(
            floor_e=floor,
            coeff_b=E - floor,
            exponent_beta=float(group_beta[g, h]),
            noise_sigma=spec.noise_sigma,
            family=spec.family,
        )

    grid = sorted({ratio_key(r) for r in (spec.ratio_grid or default_ratio_grid())} | {ratio_key(1.0)}, key=float)
    curve_oracle = CurveOracle(curves, spec.cost_model, seed=seed)
    records = {}
    for c in candidates:
        for key in grid:
            ratio = float(key)
            # ground truth at full data is recorded without noise
            err = curves[c].mean_error(ratio) if key == ratio_key(1.0) else curve_oracle.error_at(c, ratio)
            records[(c, key)] = clamp_error(err)

    recorded_full = {c: records[(c, ratio_key(1.0))] for c in candidates}
    best = min(recorded_full, key=lambda c: (recorded_full[c], c))
    if not spec.curves:
        assert best == planted, f"planted best {planted} is not the minimum full-data error ({best})"
    planted = best
    ground_truth = sorted(candidates, key=lambda c: (recorded_full[c], c))

    generator = {
        "seed": seed,
        "spec": spec.to_json(),
        "planted_best": str(planted),
        "ground_truth_ranking": [str(c) for c in ground_truth],
        "warmup_rounds": 10,
    }
    return TraceBundle(
        ve_ids=ve_ids,
        llm_ids=llm_ids,
        ratio_grid=[float(g) for g in grid],
        curves=records,
        cost_model=spec.cost_model,
        ve_activations=ve_acts,
        llm_activations=llm_acts,
        metadata={"generator": generator},
    )


def planted_best(bundle: TraceBundle) -> Candidate | None:
    gen = bundle.metadata.get("generator") or {}
    return Candidate.parse(gen["planted_best"]) if "planted_best" in gen else None
