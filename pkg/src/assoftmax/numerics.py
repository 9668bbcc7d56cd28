"""Stable probability mappings shared by every loss.

All functions take a 1-D logit vector and work in float64.
"""
from __future__ import annotations

import numpy as np

from assoftmax.errors import InvalidInputError


def as_logits(v) -> np.ndarray:
    """Coerce ``v`` to a finite 1-D float64 array or raise InvalidInputError."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidInputError(f"expected a nonempty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("logits contain NaN or Inf")
    return arr


def log_sum_exp(v) -> float:
    v = as_logits(v)
    m = v.max()
    return float(m + np.log(np.sum(np.exp(v - m))))


def stable_softmax(v) -> np.ndarray:
    v = as_logits(v)
    e = np.exp(v - v.max())
    return e / e.sum()


def _desc_order(v: np.ndarray) -> np.ndarray:
    # stable: equal values keep their original index order
    return np.argsort(-v, kind="stable")


def sparsemax_threshold(v) -> tuple[float, int]:
    """Return ``(tau, support_size)`` of the Euclidean simplex projection."""
    v = as_logits(v)
    z = v[_desc_order(v)]
    cssv = np.cumsum(z)
    k = np.arange(1, z.size + 1)
    support = 1.0 + k * z > cssv
    kmax = int(k[support][-1])
    tau = (cssv[kmax - 1] - 1.0) / kmax
    return float(tau), kmax


def simplex_project(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sparsemax).

    Sort-and-threshold: find the largest k with ``1 + k z_(k) > sum_{j<=k} z_(j)``
    and shift by ``tau = (sum_{j<=k} z_(j) - 1) / k``.
    """
    v = as_logits(v)
    tau, _ = sparsemax_threshold(v)
    return np.maximum(v - tau, 0.0)


def entmax15_threshold(v) -> tuple[float, int]:
    """Threshold on the halved, max-shifted logits and the support size."""
    v = as_logits(v)
    x = v / 2.0
    x = x - x.max()
    xs = x[_desc_order(x)]
    rho = np.arange(1, xs.size + 1)
    mean = np.cumsum(xs) / rho
    mean_sq = np.cumsum(xs * xs) / rho
    ss = rho * (mean_sq - mean * mean)
    delta = (1.0 - ss) / rho
    tau = mean - np.sqrt(np.maximum(delta, 0.0))
    support = int(np.sum(tau <= xs))
    return float(tau[support - 1]), support


def entmax15(v) -> np.ndarray:
    """1.5-entmax: ``p_i = [v_i/2 - tau]_+^2`` with tau chosen so ``sum p = 1``.

    Exact sorting-based threshold; the result can contain exact zeros.
    """
    v = as_logits(v)
    x = v / 2.0
    x = x - x.max()
    tau, _ = entmax15_threshold(v)
    return np.maximum(x - tau, 0.0) ** 2


def tsallis_entropy(p: np.ndarray, alpha: float) -> float:
    """Tsallis alpha-entropy ``(1 - sum p^alpha) / (alpha (alpha - 1))``."""
    p = np.asarray(p, dtype=np.float64)
    return float((1.0 - np.sum(p ** alpha)) / (alpha * (alpha - 1.0)))
