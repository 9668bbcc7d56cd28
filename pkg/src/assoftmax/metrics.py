"""Classification metrics and the loss/margin analysis statistics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from assoftmax.errors import ContractError
from assoftmax.numerics import stable_softmax


@dataclass
class MetricSeries:
    steps: list = field(default_factory=list)
    values: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.steps) != len(self.values):
            raise ContractError("steps and values differ in length")
        if any(b <= a for a, b in zip(self.steps, self.steps[1:])):
            raise ContractError("series steps must be strictly increasing")


@dataclass(frozen=True)
class MarginSample:
    p_margin: float
    correct: bool


def accuracy(preds, golds) -> float:
    preds = np.asarray(preds)
    golds = np.asarray(golds)
    if preds.size == 0 or preds.shape != golds.shape:
        raise ContractError("accuracy needs equal-length nonempty sequences")
    return float(np.mean(preds == golds))


def _as_indicator(sets, n_classes: int) -> np.ndarray:
    if isinstance(sets, np.ndarray) and sets.ndim == 2 and sets.dtype == bool:
        return sets
    out = np.zeros((len(sets), n_classes), dtype=bool)
    for i, s in enumerate(sets):
        if isinstance(s, (int, np.integer)):
            s = [s]
        out[i, np.fromiter(s, dtype=np.intp)] = True
    return out


def f1_scores(pred_sets, gold_sets, n_classes: int) -> dict:
    """Per-class, macro and micro F1 with the 0/0 -> 0 convention.

    Sets may be iterables of class indices (a bare int counts as a singleton)
    or boolean indicator matrices of shape (samples, n_classes). The macro
    mean runs over all ``n_classes`` declared classes.
    """
    if len(pred_sets) == 0 or len(pred_sets) != len(gold_sets):
        raise ContractError("f1_scores needs equal-length nonempty sequences")
    pred = _as_indicator(pred_sets, n_classes)
    gold = _as_indicator(gold_sets, n_classes)
    tp = np.sum(pred & gold, axis=0).astype(float)
    fp = np.sum(pred & ~gold, axis=0).astype(float)
    fn = np.sum(~pred & gold, axis=0).astype(float)
    denom = 2 * tp + fp + fn
    per_class = np.divide(2 * tp, denom, out=np.zeros(n_classes), where=denom > 0)
    micro_denom = 2 * tp.sum() + fp.sum() + fn.sum()
    micro = 2 * tp.sum() / micro_denom if micro_denom > 0 else 0.0
    return {
        "macro_f1": float(per_class.mean()),
        "micro_f1": float(micro),
        "per_class": per_class.tolist(),
    }


def pearson(xs, ys) -> float:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ContractError("pearson needs two equal-length series of length >= 2")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = np.sqrt(np.dot(dx, dx))
    sy = np.sqrt(np.dot(dy, dy))
    if sx == 0 or sy == 0:
        raise ContractError("correlation undefined for a constant series")
    return float(np.clip(np.dot(dx, dy) / (sx * sy), -1.0, 1.0))


def p_margin(p, t: int) -> float:
    p = np.asarray(p, dtype=np.float64)
    others = np.delete(p, t)
    return float(p[t] - others.max())


def p_margin_stats(logits_per_sample, targets, bin_width: float = 0.05):
    """Target-minus-strongest-rival probability for each sample, plus a histogram.

    Returns ``(samples, counts, edges)``; bins tile [-1, 1]. A margin of
    exactly 0 is a tie and counts as incorrect.
    """
    samples = []
    for o, t in zip(logits_per_sample, targets):
        m = p_margin(stable_softmax(o), int(t))
        samples.append(MarginSample(m, m > 0))
    n_bins = int(round(2.0 / bin_width))
    values = np.array([s.p_margin for s in samples], dtype=np.float64)
    counts, edges = np.histogram(values, bins=n_bins, range=(-1.0, 1.0))
    return samples, counts, edges


def masked_ratio_series(report) -> MetricSeries:
    return MetricSeries(
        [r["step"] for r in report.records],
        [r["masked_ratio"] for r in report.records],
    )
