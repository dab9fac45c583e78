"""Representation similarity: HSIC and linear-kernel CKA.

Activations are ``(n_samples, n_features)`` matrices whose rows refer to the
same task samples in the same order. Kernels are linear (``K = X @ X.T``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import DegenerateInputError, DimensionError, EstimatorError, InputError

# Self-HSIC below this is treated as a constant representation.
DEGENERATE_HSIC = 1e-12


@dataclass(frozen=True, eq=False)
class ActivationMatrix:
    model_id: str
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise DimensionError(f"{self.model_id}: activations must be 2-D, got shape {values.shape}")
        if values.shape[0] < 2 or values.shape[1] < 1:
            raise DimensionError(f"{self.model_id}: need >= 2 samples and >= 1 feature, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InputError(f"{self.model_id}: activations contain non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]


ArrayOrActivation = Union[ActivationMatrix, np.ndarray, Sequence]


def _as_array(x: ArrayOrActivation) -> np.ndarray:
    if isinstance(x, ActivationMatrix):
        return x.values
    return ActivationMatrix("<array>", x).values


def _check_kernels(K, L):
    K = np.asarray(K, dtype=np.float64)
    L = np.asarray(L, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise DimensionError(f"kernel must be square, got {K.shape}")
    if K.shape != L.shape:
        raise DimensionError(f"kernel sizes differ: {K.shape} vs {L.shape}")
    if K.shape[0] < 2:
        raise DimensionError("kernels need n >= 2")
    if not (np.all(np.isfinite(K)) and np.all(np.isfinite(L))):
        raise InputError("kernel contains non-finite entries")
    return K, L


def linear_kernel(x: ArrayOrActivation) -> np.ndarray:
    X = _as_array(x)
    return X @ X.T


def center_kernel(K: np.ndarray) -> np.ndarray:
    """Return ``H K H`` with ``H = I - 11^T / n``, without forming ``H``."""
    K = np.asarray(K, dtype=np.float64)
    row = K.mean(axis=1, keepdims=True)
    col = K.mean(axis=0, keepdims=True)
    return K - row - col + K.mean()


def hsic(K, L) -> float:
    """Biased HSIC, ``Tr(K H L H)``.

    Uses ``Tr(K H L H) = <HKH, HLH>_F``, which holds because ``H`` is
    symmetric and idempotent.
    """
    K, L = _check_kernels(K, L)
    return float(np.sum(center_kernel(K) * center_kernel(L).T))


def unbiased_hsic(K, L) -> float:
    """Unbiased HSIC estimator (Song et al., 2012); needs ``n >= 4``.

    The ``1/(n(n-3))`` normalisation cancels in CKA ratios but is kept so the
    value is an estimate on its own.
    """
    K, L = _check_kernels(K, L)
    n = K.shape[0]
    if n < 4:
        raise EstimatorError(f"unbiased HSIC needs at least 4 samples, got {n}")
    K = K.copy()
    L = L.copy()
    np.fill_diagonal(K, 0.0)
    np.fill_diagonal(L, 0.0)
    ones_K = K.sum(axis=0)
    ones_L = L.sum(axis=0)
    trace_term = float(np.sum(K * L.T))
    sum_term = float(ones_K.sum() * ones_L.sum()) / ((n - 1) * (n - 2))
    cross_term = 2.0 * float(ones_K @ ones_L) / (n - 2)
    return (trace_term + sum_term - cross_term) / (n * (n - 3))


def _ratio(cross: float, self_x: float, self_y: float) -> float:
    if self_x < DEGENERATE_HSIC or self_y < DEGENERATE_HSIC:
        raise DegenerateInputError(
            f"self-HSIC below {DEGENERATE_HSIC:g} (constant activations?): {self_x:.3g}, {self_y:.3g}"
        )
    value = cross / math.sqrt(self_x * self_y)
    return min(1.0, max(0.0, value))


def cka(x: ArrayOrActivation, y: ArrayOrActivation, unbiased: bool = False) -> float:
    """Linear CKA between two activation matrices, clamped to ``[0, 1]``.

    With ``unbiased=True`` the unbiased HSIC estimator is used instead of
    ``Tr(KHLH)``; this is what :func:`minibatch_cka` reduces to for one batch.
    """
    X, Y = _as_array(x), _as_array(y)
    if X.shape[0] != Y.shape[0]:
        raise DimensionError(f"sample counts differ: {X.shape[0]} vs {Y.shape[0]}")
    K, L = X @ X.T, Y @ Y.T
    estimator = unbiased_hsic if unbiased else hsic
    return _ratio(estimator(K, L), estimator(K, K), estimator(L, L))


def minibatch_cka(batches_x: Sequence[ArrayOrActivation], batches_y: Sequence[ArrayOrActivation]) -> float:
    """CKA accumulated over paired minibatches with the unbiased estimator.

    Each batch contributes unbiased HSIC estimates for (K, L), (K, K) and
    (L, L); the three sums are combined once at the end. Sums use
    ``math.fsum`` so the result does not depend on floating-point drift.
    """
    if len(batches_x) != len(batches_y):
        raise DimensionError(f"batch counts differ: {len(batches_x)} vs {len(batches_y)}")
    if not batches_x:
        raise EstimatorError("no batches given")
    cross, self_x, self_y = [], [], []
    for i, (bx, by) in enumerate(zip(batches_x, batches_y)):
        X, Y = _as_array(bx), _as_array(by)
        if X.shape[0] != Y.shape[0]:
            raise DimensionError(f"batch {i}: sample counts differ ({X.shape[0]} vs {Y.shape[0]})")
        if X.shape[0] < 4:
            raise EstimatorError(f"batch {i}: unbiased HSIC needs at least 4 samples, got {X.shape[0]}")
        K, L = X @ X.T, Y @ Y.T
        cross.append(unbiased_hsic(K, L))
        self_x.append(unbiased_hsic(K, K))
        self_y.append(unbiased_hsic(L, L))
    return _ratio(math.fsum(cross), math.fsum(self_x), math.fsum(self_y))


def split_batches(x: ArrayOrActivation, batch_size: int) -> list[np.ndarray]:
    """Split rows into consecutive batches; a short tail is folded into the last batch."""
    X = _as_array(x)
    n = X.shape[0]
    if batch_size >= n:
        return [X]
    n_full = n // batch_size
    bounds = [i * batch_size for i in range(n_full)] + [n]
    return [X[a:b] for a, b in zip(bounds[:-1], bounds[1:])]


def distance(x: ArrayOrActivation, y: ArrayOrActivation, batch_size: int | None = None) -> float:
    """Dissimilarity ``1 - CKA``. Uses minibatch CKA when ``batch_size`` splits the data."""
    X, Y = _as_array(x), _as_array(y)
    if batch_size is not None and batch_size < X.shape[0]:
        if X.shape[0] != Y.shape[0]:
            raise DimensionError(f"sample counts differ: {X.shape[0]} vs {Y.shape[0]}")
        return 1.0 - minibatch_cka(split_batches(X, batch_size), split_batches(Y, batch_size))
    return 1.0 - cka(X, Y)
