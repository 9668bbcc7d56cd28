"""Margin criteria deciding which classes (and samples) drop out of the loss."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from assoftmax.errors import ConfigError, ContractError


@dataclass(frozen=True)
class MaskDecision:
    retained: np.ndarray  # bool, length n
    sample_masked: bool
    effective_delta: float


@dataclass(frozen=True)
class WarmupConfig:
    r: float = 0.0
    delta: float = 0.3

    def __post_init__(self):
        if not 0.0 <= self.r < 1.0:
            raise ConfigError(f"warm-up ratio r must be in [0, 1), got {self.r}")
        check_delta(self.delta)


@dataclass(frozen=True)
class BatchMaskStats:
    n_all: int
    n_masked: int

    def __post_init__(self):
        if self.n_all < 1 or not 0 <= self.n_masked <= self.n_all:
            raise ContractError(f"invalid batch counts ({self.n_all}, {self.n_masked})")

    @property
    def ratio(self) -> float:
        return self.n_masked / self.n_all


def check_delta(delta: float) -> float:
    if not (0.0 < delta <= 1.0):
        raise ConfigError(f"delta must be in (0, 1], got {delta}")
    return float(delta)


def effective_delta(step: int, total_steps: int, cfg: WarmupConfig) -> float:
    """Margin in force at ``step``: 1.0 during the first ``floor(r * total)`` steps."""
    if total_steps < 1:
        raise ContractError("total_steps must be positive")
    if not 0 <= step < total_steps:
        raise ContractError(f"step {step} outside [0, {total_steps})")
    if step < math.floor(cfg.r * total_steps):
        return 1.0
    return cfg.delta


def mask_multiclass(p, t: int, delta: float) -> MaskDecision:
    """Drop non-target class i when ``p_t - p_i >= delta``."""
    p = np.asarray(p, dtype=np.float64)
    delta = check_delta(delta)
    if not 0 <= t < p.size:
        raise ContractError(f"target {t} out of range for {p.size} classes")
    if delta >= 1.0:
        # p_t - p_i >= 1 needs p_t == 1, unreachable for finite logits even
        # when the float softmax rounds to a one-hot vector
        retained = np.ones(p.size, dtype=bool)
    else:
        retained = (p[t] - p) < delta
        retained[t] = True
    sample_masked = bool(retained.sum() == 1)
    return MaskDecision(retained, sample_masked, delta)


def mask_multilabel(p, positives, delta: float) -> MaskDecision:
    """Two-sided margin between the weakest positive and the strongest negative.

    A negative i is dropped when ``min_pos p - p_i >= delta``; a positive t is
    dropped when ``p_t - max_neg p >= delta``. With no negatives the strongest
    negative probability is taken as 0.
    """
    p = np.asarray(p, dtype=np.float64)
    delta = check_delta(delta)
    pos = np.zeros(p.size, dtype=bool)
    pos[list(positives)] = True
    if not pos.any():
        raise ContractError("multi-label target needs at least one positive class")
    if delta >= 1.0:
        retained = np.ones(p.size, dtype=bool)
        return MaskDecision(retained, False, delta)
    p_pos_min = p[pos].min()
    p_neg_max = p[~pos].max() if (~pos).any() else 0.0
    retained = np.where(pos, (p - p_neg_max) < delta, (p_pos_min - p) < delta)
    return MaskDecision(retained, bool(not retained.any()), delta)


def batch_stats(decisions: Sequence) -> BatchMaskStats:
    """Count masked samples; accepts MaskDecision or anything with ``sample_masked``."""
    decisions = list(decisions)
    if not decisions:
        raise ContractError("batch_stats needs at least one decision")
    n_masked = sum(1 for d in decisions if d.sample_masked)
    return BatchMaskStats(len(decisions), n_masked)
