"""Loss functions returning the value, the gradient w.r.t. the logits and the
retained-class mask in one call.

Multi-class losses take an integer target; multi-label losses take a
collection of positive class indices (negatives are the complement).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from assoftmax.errors import ConfigError, ContractError, NumericError
from assoftmax.masking import check_delta, mask_multiclass, mask_multilabel
from assoftmax.numerics import (
    as_logits,
    entmax15,
    simplex_project,
    stable_softmax,
    tsallis_entropy,
)


@dataclass
class LossResult:
    loss: float
    grad: np.ndarray
    retained: np.ndarray
    sample_masked: bool = False


@dataclass(frozen=True)
class LossConfig:
    delta: float = 0.3
    delta_prime: float = 2.0
    tau: float = 1.0
    epsilon: float = 0.1
    k: int = 4
    s_scale: float = 1.0
    m_margin: float = 0.0

    def __post_init__(self):
        check_delta(self.delta)
        if self.delta_prime < 0:
            raise ConfigError(f"delta_prime must be >= 0, got {self.delta_prime}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if not 0.0 <= self.epsilon < 1.0:
            raise ConfigError(f"epsilon must be in [0, 1), got {self.epsilon}")
        if int(self.k) != self.k or self.k < 1:
            raise ConfigError(f"k must be a positive integer, got {self.k}")
        if self.s_scale <= 0:
            raise ConfigError(f"s_scale must be > 0, got {self.s_scale}")
        if self.m_margin < 0:
            raise ConfigError(f"m_margin must be >= 0, got {self.m_margin}")


def _check_target(o: np.ndarray, t) -> int:
    if isinstance(t, (bool, np.bool_)) or int(t) != t or not 0 <= int(t) < o.size:
        raise ContractError(f"target {t!r} invalid for {o.size} classes")
    return int(t)


def _positives_mask(o: np.ndarray, positives: Iterable[int]) -> np.ndarray:
    pos = np.zeros(o.size, dtype=bool)
    idx = list(positives)
    if not idx:
        raise ContractError("multi-label target needs at least one positive class")
    for i in idx:
        if int(i) != i or not 0 <= int(i) < o.size:
            raise ContractError(f"positive class {i!r} invalid for {o.size} classes")
        pos[int(i)] = True
    return pos


def _retained_ce(o: np.ndarray, t: int, retained: np.ndarray) -> LossResult:
    # cross-entropy of the target under softmax renormalized over `retained`
    o_r = o[retained]
    m = o_r.max()
    e = np.exp(o_r - m)
    s = e.sum()
    if o[t] == m:
        # log1p keeps precision when the target dominates and the loss is tiny
        others = retained.copy()
        others[t] = False
        loss = float(np.log1p(np.sum(np.exp(o[others] - m))))
    else:
        loss = float(m + np.log(s) - o[t])
    grad = np.zeros_like(o)
    grad[retained] = e / s
    grad[t] -= 1.0
    return LossResult(max(loss, 0.0), grad, retained)


def softmax_ce(o, t) -> LossResult:
    o = as_logits(o)
    t = _check_target(o, t)
    return _retained_ce(o, t, np.ones(o.size, dtype=bool))


def t_softmax_ce(o, t, tau: float) -> LossResult:
    if tau <= 0:
        raise ConfigError(f"tau must be > 0, got {tau}")
    o = as_logits(o)
    res = softmax_ce(o / tau, t)
    res.grad = res.grad / tau
    return res


def label_smoothing_ce(o, t, epsilon: float) -> LossResult:
    """Cross-entropy against ``(1 - eps)`` on the target and ``eps/(n-1)`` elsewhere."""
    if not 0.0 <= epsilon < 1.0:
        raise ConfigError(f"epsilon must be in [0, 1), got {epsilon}")
    o = as_logits(o)
    t = _check_target(o, t)
    if epsilon == 0.0:
        return softmax_ce(o, t)
    n = o.size
    q = np.full(n, epsilon / (n - 1))
    q[t] = 1.0 - epsilon
    m = o.max()
    lse = m + np.log(np.sum(np.exp(o - m)))
    logp = o - lse
    p = np.exp(logp)
    loss = float(-np.dot(q, logp))
    return LossResult(loss, p - q, np.ones(n, dtype=bool))


def sparse_topk_ce(o, t, k: int) -> LossResult:
    """Softmax CE renormalized over the top-k logits plus the target."""
    if int(k) != k or k < 1:
        raise ConfigError(f"k must be a positive integer, got {k}")
    o = as_logits(o)
    t = _check_target(o, t)
    retained = np.zeros(o.size, dtype=bool)
    retained[np.argsort(-o, kind="stable")[: int(k)]] = True
    retained[t] = True
    return _retained_ce(o, t, retained)


def am_softmax(o, t, s_scale: float, m_margin: float) -> LossResult:
    if s_scale <= 0:
        raise ConfigError(f"s_scale must be > 0, got {s_scale}")
    if m_margin < 0:
        raise ConfigError(f"m_margin must be >= 0, got {m_margin}")
    o = as_logits(o)
    t = _check_target(o, t)
    shifted = o.copy()
    if m_margin != 0.0:
        shifted[t] -= m_margin
    z = shifted if s_scale == 1.0 else s_scale * shifted
    if not np.all(np.isfinite(z)):
        raise NumericError("AM-Softmax scaled logits overflowed")
    res = _retained_ce(z, t, np.ones(o.size, dtype=bool))
    if s_scale != 1.0:
        res.grad = res.grad * s_scale
    if not (np.isfinite(res.loss) and np.all(np.isfinite(res.grad))):
        raise NumericError("AM-Softmax produced a non-finite value")
    return res


def sparsemax_loss(o, t) -> LossResult:
    """Fenchel-Young loss of sparsemax; gradient is ``sparsemax(o) - onehot(t)``.

    ``L = (1 - sum p^2)/2 + <o, p> - o_t``, equal to
    ``-o_t + 1/2 sum_{j in S} (o_j^2 - tau^2) + 1/2`` over the support S.
    The sample counts as masked when the projection is exactly one-hot on t.
    """
    o = as_logits(o)
    t = _check_target(o, t)
    p = simplex_project(o)
    return _fenchel_young(o, t, p, tsallis_entropy(p, 2.0))


def entmax15_loss(o, t) -> LossResult:
    """Fenchel-Young loss of 1.5-entmax with the Tsallis-1.5 potential."""
    o = as_logits(o)
    t = _check_target(o, t)
    p = entmax15(o)
    return _fenchel_young(o, t, p, tsallis_entropy(p, 1.5))


def _fenchel_young(o, t, p, entropy) -> LossResult:
    grad = p.copy()
    grad[t] -= 1.0
    # shift by o_t: <o, p> - o_t == <o - o_t, p> since sum p == 1
    loss = float(entropy + np.dot(o - o[t], p))
    retained = p > 0
    masked = bool(p[t] == 1.0)
    if masked:
        return LossResult(0.0, np.zeros_like(o), retained, True)
    return LossResult(max(loss, 0.0), grad, retained)


def _masked_or(o, t, retained, decision_masked) -> LossResult:
    if decision_masked:
        return LossResult(0.0, np.zeros_like(o), retained, True)
    return _retained_ce(o, t, retained)


def as_softmax(o, t, delta: float) -> LossResult:
    """Adaptive sparse softmax CE.

    The mask is decided on the full softmax probabilities; the loss is the CE
    of the target after renormalizing over the retained classes only.
    """
    delta = check_delta(delta)
    o = as_logits(o)
    t = _check_target(o, t)
    decision = mask_multiclass(stable_softmax(o), t, delta)
    return _masked_or(o, t, decision.retained, decision.sample_masked)


def as_variant(o, t, delta_prime: float) -> LossResult:
    """As :func:`as_softmax` but drops class i when ``o_t - o_i >= delta_prime``."""
    if delta_prime < 0:
        raise ConfigError(f"delta_prime must be >= 0, got {delta_prime}")
    o = as_logits(o)
    t = _check_target(o, t)
    retained = (o[t] - o) < delta_prime
    retained[t] = True
    return _masked_or(o, t, retained, bool(retained.sum() == 1))


def _log1p_sum_exp(x: np.ndarray) -> tuple[float, np.ndarray]:
    # log(1 + sum e^x) and its gradient, stable for large |x|
    if x.size == 0:
        return 0.0, x
    m = max(0.0, float(x.max()))
    e = np.exp(x - m)
    denom = np.exp(-m) + e.sum()
    if m == 0.0:
        return float(np.log1p(e.sum())), e / denom
    return float(m + np.log(denom)), e / denom


def _multilabel(o: np.ndarray, pos: np.ndarray, z: np.ndarray) -> LossResult:
    neg_keep = ~pos & z
    pos_keep = pos & z
    l_neg, g_neg = _log1p_sum_exp(o[neg_keep])
    l_pos, g_pos = _log1p_sum_exp(-o[pos_keep])
    grad = np.zeros_like(o)
    grad[neg_keep] = g_neg
    grad[pos_keep] = -g_pos
    return LossResult(l_neg + l_pos, grad, z)


def multilabel_softmax(o, positives) -> LossResult:
    """``log(1 + sum_neg e^{o_i}) + log(1 + sum_pos e^{-o_t})``."""
    o = as_logits(o)
    pos = _positives_mask(o, positives)
    return _multilabel(o, pos, np.ones(o.size, dtype=bool))


def as_multilabel(o, positives, delta: float) -> LossResult:
    delta = check_delta(delta)
    o = as_logits(o)
    pos = _positives_mask(o, positives)
    decision = mask_multilabel(stable_softmax(o), np.flatnonzero(pos), delta)
    if decision.sample_masked:
        return LossResult(0.0, np.zeros_like(o), decision.retained, True)
    return _multilabel(o, pos, decision.retained)


MULTICLASS_LOSSES = (
    "softmax_ce",
    "t_softmax_ce",
    "label_smoothing_ce",
    "sparse_topk_ce",
    "am_softmax",
    "sparsemax_loss",
    "entmax15_loss",
    "as_softmax",
    "as_variant",
)
MULTILABEL_LOSSES = ("multilabel_softmax", "as_multilabel")
# losses whose sample_masked flag comes from the margin criterion
AS_LOSSES = ("as_softmax", "as_variant", "as_multilabel")


def get_loss(kind: str, cfg: LossConfig | None = None) -> Callable:
    """Bind ``kind`` to ``cfg``; returns ``fn(o, target, delta=None)``.

    ``delta`` overrides ``cfg.delta`` for the margin-masked losses, which is
    how the trainer applies the warm-up schedule.
    """
    cfg = cfg or LossConfig()
    table = {
        "softmax_ce": lambda o, t, d: softmax_ce(o, t),
        "t_softmax_ce": lambda o, t, d: t_softmax_ce(o, t, cfg.tau),
        "label_smoothing_ce": lambda o, t, d: label_smoothing_ce(o, t, cfg.epsilon),
        "sparse_topk_ce": lambda o, t, d: sparse_topk_ce(o, t, cfg.k),
        "am_softmax": lambda o, t, d: am_softmax(o, t, cfg.s_scale, cfg.m_margin),
        "sparsemax_loss": lambda o, t, d: sparsemax_loss(o, t),
        "entmax15_loss": lambda o, t, d: entmax15_loss(o, t),
        "as_softmax": lambda o, t, d: as_softmax(o, t, cfg.delta if d is None else d),
        "as_variant": lambda o, t, d: as_variant(o, t, cfg.delta_prime),
        "multilabel_softmax": lambda o, t, d: multilabel_softmax(o, t),
        "as_multilabel": lambda o, t, d: as_multilabel(o, t, cfg.delta if d is None else d),
    }
    if kind not in table:
        raise ConfigError(f"unknown loss kind {kind!r}")
    fn = table[kind]

    def bound(o, target, delta=None):
        return fn(o, target, delta)

    bound.kind = kind
    return bound
