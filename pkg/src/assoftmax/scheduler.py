"""AS-Speed: adaptive gradient accumulation driven by the masked-sample ratio."""
from __future__ import annotations

import math
from dataclasses import dataclass

from assoftmax.errors import ConfigError, ContractError
from assoftmax.masking import BatchMaskStats


@dataclass
class AccumState:
    """Mutable scheduler memory, owned by a single training loop.

    ``lam`` scales the raw prediction ``N_all / (N_all - N_masked)``; ``s_max``
    caps the number of accumulated batches; ``current`` starts at 1.
    """

    lam: float = 1.0
    s_max: int = 4
    current: int = 1

    def __post_init__(self):
        if self.lam <= 0:
            raise ConfigError(f"lambda must be > 0, got {self.lam}")
        if int(self.s_max) != self.s_max or self.s_max < 1:
            raise ConfigError(f"s_max must be a positive integer, got {self.s_max}")
        if not 1 <= self.current <= self.s_max:
            raise ConfigError(f"current={self.current} outside [1, {self.s_max}]")

    def update(self, stats: BatchMaskStats) -> int:
        return update(self, stats)


def raw_steps(lam: float, stats: BatchMaskStats) -> float:
    if stats.n_masked >= stats.n_all:
        return math.inf
    return lam * stats.n_all / (stats.n_all - stats.n_masked)


def update(state: AccumState, stats: BatchMaskStats) -> int:
    """Advance ``state.current`` from one batch's mask counts and return it.

    The floored prediction is clamped to ``[current, current + 1]`` (never
    decreases, grows by at most one) and then to ``s_max``.
    """
    if stats.n_all < 1:
        raise ContractError("empty batch")
    raw = raw_steps(state.lam, stats)
    proposed = state.current + 1 if math.isinf(raw) else math.floor(raw)
    new = min(max(proposed, state.current), state.current + 1, state.s_max)
    state.current = new
    return new


def should_step(batch_index: int, steps_accum: int) -> bool:
    """True when the optimizer should apply the gradients accumulated so far."""
    if steps_accum < 1:
        raise ContractError(f"steps_accum must be >= 1, got {steps_accum}")
    if batch_index < 0:
        raise ContractError(f"batch_index must be >= 0, got {batch_index}")
    return (batch_index + 1) % steps_accum == 0


def check_accum_series(series, s_max: int) -> None:
    """Raise ContractError unless the series obeys the three AS-Speed restrictions."""
    prev = None
    for i, s in enumerate(series):
        if s < 1 or s > s_max:
            raise ContractError(f"steps_accum[{i}]={s} outside [1, {s_max}]")
        if prev is not None and not 0 <= s - prev <= 1:
            raise ContractError(f"steps_accum jumps {prev} -> {s} at index {i}")
        prev = s
