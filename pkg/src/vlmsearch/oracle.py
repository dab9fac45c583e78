"""Evaluation backends.

An oracle answers "what is the task error of candidate ``c`` after alignment
on a fraction ``r`` of the data?" and charges cost for it. Three backends
exist: analytic curves (:class:`CurveOracle`), replay of a recorded trace
bundle (:class:`TraceOracle`), and a subprocess speaking newline-delimited
JSON (:class:`ExternalOracle`).

Cost uses checkpoint reuse: a candidate that has been trained up to ratio
``m`` can be evaluated at any ``r <= m`` for ``eval_cost`` alone, and training
further to ``r > m`` costs only ``(r - m) * full_train_cost``.
"""

from __future__ import annotations

import contextlib
import json
import math
import queue
import subprocess
import threading
import zlib
from dataclasses import asdict, dataclass, field
from typing import Iterable, Literal, Mapping, Sequence

import numpy as np

from .clustering import Candidate
from .errors import InputError, OracleError, ProtocolError, SpecError, UnsupportedRatioError

ERROR_FLOOR = 1e-6
PHASES = ("clustering", "inter_es", "intra_es", "prediction")


def clamp_error(err: float) -> float:
    return min(1.0, max(ERROR_FLOOR, float(err)))


def ratio_key(ratio: float) -> str:
    """Canonical text form of a ratio, used to match grid points."""
    return f"{float(ratio):.12g}"


def _check_ratio(ratio: float) -> float:
    ratio = float(ratio)
    if not (0.0 < ratio <= 1.0):
        raise UnsupportedRatioError(f"ratio must be in (0, 1], got {ratio}")
    return ratio


@dataclass(frozen=True)
class EvalRecord:
    candidate: Candidate
    ratio: float
    error: float
    cost: float


@dataclass(frozen=True)
class CostModel:
    full_train_cost: float = 1.0
    eval_cost: float = 0.01

    def __post_init__(self):
        if self.full_train_cost <= 0 or self.eval_cost <= 0:
            raise SpecError("cost model entries must be positive")

    @classmethod
    def from_json(cls, data: Mapping | None) -> "CostModel":
        return cls(**(data or {}))


@dataclass
class Charge:
    phase: str
    candidate: Candidate
    ratio: float
    training: float
    evaluation: float


class CostLedger:
    """Per-candidate trained-ratio high-water marks plus per-phase totals.

    Charges are kept as a list and summed with ``math.fsum``, so totals do not
    depend on the order in which concurrent queries complete.
    """

    def __init__(self, cost_model: CostModel | None = None):
        self.cost_model = cost_model or CostModel()
        self.high_water: dict[Candidate, float] = {}
        self.charges: list[Charge] = []
        self._phase = "clustering"
        self._lock = threading.Lock()

    @property
    def current_phase(self) -> str:
        return self._phase

    @contextlib.contextmanager
    def phase(self, name: str):
        if name not in PHASES:
            raise InputError(f"unknown phase {name!r}")
        previous, self._phase = self._phase, name
        try:
            yield self
        finally:
            self._phase = previous

    def charge_query(self, candidate: Candidate, ratio: float) -> float:
        """Book one evaluation at ``ratio`` with checkpoint reuse; return its cost."""
        cm = self.cost_model
        with self._lock:
            old = self.high_water.get(candidate, 0.0)
            training = 0.0
            if ratio > old:
                training = (ratio - old) * cm.full_train_cost
                self.high_water[candidate] = ratio
            self.charges.append(Charge(self._phase, candidate, ratio, training, cm.eval_cost))
        return training + cm.eval_cost

    def book(self, candidate: Candidate | None, ratio: float, cost: float, phase: str | None = None) -> float:
        """Book an externally determined cost verbatim (no reuse accounting)."""
        with self._lock:
            self.charges.append(Charge(phase or self._phase, candidate, ratio, float(cost), 0.0))
            if candidate is not None:
                self.high_water[candidate] = max(self.high_water.get(candidate, 0.0), ratio)
        return float(cost)

    def trained_ratio(self, candidate: Candidate) -> float:
        return self.high_water.get(candidate, 0.0)

    def phase_costs(self) -> dict[str, float]:
        return {
            p: math.fsum(c.training + c.evaluation for c in self.charges if c.phase == p) for p in PHASES
        }

    def training_cost(self, candidate: Candidate | None = None) -> float:
        return math.fsum(c.training for c in self.charges if candidate is None or c.candidate == candidate)

    @property
    def total(self) -> float:
        return math.fsum(c.training + c.evaluation for c in self.charges)

    def snapshot(self) -> dict:
        return {
            "phases": self.phase_costs(),
            "total": self.total,
            "queries": len(self.charges),
            "trained_ratio": {str(c): r for c, r in sorted(self.high_water.items())},
        }


class Oracle:
    """Base class. Subclasses implement :meth:`error_at`."""

    def __init__(self, cost_model: CostModel | None = None):
        self.cost_model = cost_model or CostModel()
        self.ledger = CostLedger(self.cost_model)

    def error_at(self, candidate: Candidate, ratio: float) -> float:
        raise NotImplementedError

    def query(self, candidate: Candidate, ratio: float) -> EvalRecord:
        ratio = _check_ratio(ratio)
        err = self.error_at(candidate, ratio)
        cost = self.ledger.charge_query(candidate, ratio)
        return EvalRecord(candidate, ratio, err, cost)

    def full_data_error(self, candidate: Candidate) -> float | None:
        """Error at ratio 1.0 without charging cost, or ``None`` if unknown."""
        try:
            return self.error_at(candidate, 1.0)
        except UnsupportedRatioError:
            return None

    def reset(self) -> None:
        self.ledger = CostLedger(self.cost_model)

    def close(self) -> None:
        pass


@dataclass(frozen=True)
class SyntheticCurveParams:
    """Learning-curve shape ``Err(r) = floor_e + coeff_b * r**(-exponent_beta)``.

    The pure family drops ``floor_e``. ``noise_sigma`` is the standard
    deviation of Gaussian noise added to ``log Err``.
    """

    floor_e: float = 0.0
    coeff_b: float = 0.3
    exponent_beta: float = 0.1
    noise_sigma: float = 0.0
    family: Literal["pure-power-law", "floored-power-law"] = "floored-power-law"

    def __post_init__(self):
        if self.family not in ("pure-power-law", "floored-power-law"):
            raise SpecError(f"unknown curve family {self.family!r}")
        if self.floor_e < 0 or self.coeff_b < 0 or self.exponent_beta <= 0 or self.noise_sigma < 0:
            raise SpecError(f"invalid curve parameters: {self}")

    def mean_error(self, ratio: float) -> float:
        e = self.floor_e if self.family == "floored-power-law" else 0.0
        return clamp_error(e + self.coeff_b * ratio ** (-self.exponent_beta))

    def to_json(self) -> dict:
        return asdict(self)


def _noise_seed(seed: int, candidate: Candidate, ratio: float) -> list[int]:
    tag = f"{candidate}|{ratio_key(ratio)}".encode()
    return [int(seed), zlib.crc32(tag)]


class CurveOracle(Oracle):
    """Evaluates analytic learning curves at any ratio.

    Noise is a pure function of ``(seed, candidate, ratio)``, so repeated
    queries return identical values.
    """

    def __init__(
        self,
        curves: Mapping[Candidate, SyntheticCurveParams],
        cost_model: CostModel | None = None,
        seed: int = 0,
    ):
        super().__init__(cost_model)
        self.curves = dict(curves)
        self.seed = seed

    def error_at(self, candidate: Candidate, ratio: float) -> float:
        try:
            params = self.curves[candidate]
        except KeyError:
            raise InputError(f"candidate {candidate} not in zoo") from None
        ratio = _check_ratio(ratio)
        err = params.mean_error(ratio)
        if params.noise_sigma > 0:
            rng = np.random.default_rng(_noise_seed(self.seed, candidate, ratio))
            err = clamp_error(err * math.exp(params.noise_sigma * rng.standard_normal()))
        return err


class TraceOracle(Oracle):
    """Replays recorded errors; ratios off the recorded grid are refused."""

    def __init__(self, curves: Mapping[tuple[Candidate, str], float], cost_model: CostModel | None = None):
        super().__init__(cost_model)
        self.curves = dict(curves)
        self.candidates = sorted({c for c, _ in self.curves})

    def error_at(self, candidate: Candidate, ratio: float) -> float:
        try:
            return self.curves[(candidate, ratio_key(ratio))]
        except KeyError:
            if candidate not in self.candidates:
                raise InputError(f"candidate {candidate} not in trace") from None
            raise UnsupportedRatioError(f"no recorded error for {candidate} at ratio {ratio_key(ratio)}") from None


class _Worker:
    """One trainer subprocess; at most one request in flight."""

    def __init__(self, command: Sequence[str] | str, timeout: float):
        self.timeout = timeout
        self.proc = subprocess.Popen(
            command,
            shell=isinstance(command, str),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._lines: queue.Queue = queue.Queue()
        threading.Thread(target=self._pump, daemon=True).start()

    def _pump(self):
        for line in self.proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def request(self, payload: dict) -> dict:
        try:
            self.proc.stdin.write(json.dumps(payload) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise OracleError(f"trainer not accepting requests: {exc}", payload=self._stderr()) from exc
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise OracleError(f"trainer timed out after {self.timeout}s", payload=payload) from None
        if line is None:
            code = self.proc.wait()
            raise OracleError(f"trainer exited with status {code}", payload=self._stderr())
        try:
            response = json.loads(line)
        except json.JSONDecodeError:
            raise ProtocolError("malformed trainer response", payload=line) from None
        if not isinstance(response, dict):
            raise ProtocolError("trainer response is not an object", payload=line)
        if response.get("id") != payload["id"]:
            raise ProtocolError(f"response id {response.get('id')!r} != request id {payload['id']}", payload=line)
        return response

    def _stderr(self) -> str:
        if self.proc.poll() is None:
            return ""
        return self.proc.stderr.read() if self.proc.stderr else ""

    def close(self):
        if self.proc.poll() is None:
            with contextlib.suppress(OSError):
                self.proc.stdin.close()
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()


class ExternalOracle(Oracle):
    """Delegates evaluation to trainer subprocesses.

    Costs returned by the trainer are booked verbatim; no checkpoint-reuse
    accounting is applied since the trainer owns its checkpoints.
    """

    protocol_version = 1

    def __init__(self, command: Sequence[str] | str, workers: int = 1, timeout: float = 600.0):
        super().__init__()
        self.command = command
        self._ids = iter(range(1, 2**62))
        self._id_lock = threading.Lock()
        self._pool: queue.Queue = queue.Queue()
        self._workers = []
        try:
            for _ in range(max(1, workers)):
                w = _Worker(command, timeout)
                self._workers.append(w)
                response = w.request({"id": 0, "op": "hello"})
                if response.get("protocol") != self.protocol_version:
                    raise ProtocolError("handshake failed", payload=response)
                self._pool.put(w)
        except Exception:
            self.close()
            raise

    def _next_id(self) -> int:
        with self._id_lock:
            return next(self._ids)

    def _eval(self, candidate: Candidate, ratio: float) -> tuple[float, float]:
        worker = self._pool.get()
        try:
            payload = {"id": self._next_id(), "op": "eval", "ve": candidate.ve_id, "llm": candidate.llm_id, "ratio": ratio}
            response = worker.request(payload)
        finally:
            self._pool.put(worker)
        err, cost = response.get("error"), response.get("cost")
        if not isinstance(err, (int, float)) or isinstance(err, bool) or not (0 < err <= 1):
            raise ProtocolError(f"error must be in (0, 1], got {err!r}", payload=response)
        if not isinstance(cost, (int, float)) or isinstance(cost, bool) or cost < 0:
            raise ProtocolError(f"cost must be a non-negative number, got {cost!r}", payload=response)
        return float(err), float(cost)

    def error_at(self, candidate: Candidate, ratio: float) -> float:
        return self._eval(candidate, _check_ratio(ratio))[0]

    def query(self, candidate: Candidate, ratio: float) -> EvalRecord:
        ratio = _check_ratio(ratio)
        err, cost = self._eval(candidate, ratio)
        self.ledger.book(candidate, ratio, cost)
        return EvalRecord(candidate, ratio, err, cost)

    def full_data_error(self, candidate: Candidate) -> float | None:
        # Would launch a full training run; ground truth must come from elsewhere.
        return None

    def close(self) -> None:
        for w in self._workers:
            w.close()
        self._workers = []

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def external_oracle(command: Sequence[str] | str, workers: int = 1, timeout: float = 600.0) -> ExternalOracle:
    return ExternalOracle(command, workers=workers, timeout=timeout)


def candidates_of(ve_ids: Iterable[str], llm_ids: Iterable[str]) -> list[Candidate]:
    llm_ids = list(llm_ids)
    return [Candidate(v, l) for v in ve_ids for l in llm_ids]
