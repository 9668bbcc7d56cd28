"""Desk-scale classifier training with hand-written backpropagation.

Two stand-in models: a linear classifier and a one-hidden-layer ReLU network.
Optimization is AdamW; gradient accumulation is driven by the AS-Speed
scheduler when an :class:`~assoftmax.scheduler.AccumState` is supplied.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from assoftmax import scheduler
from assoftmax.datasets import Dataset
from assoftmax.errors import (
    ConfigError,
    ContractError,
    InvalidInputError,
    NumericDivergenceError,
    NumericError,
)
from assoftmax.losses import AS_LOSSES, MULTILABEL_LOSSES, LossConfig, get_loss
from assoftmax.masking import BatchMaskStats, WarmupConfig, effective_delta
from assoftmax.metrics import accuracy, f1_scores


@dataclass
class ModelParams:
    """Layer stack ``[(W, b), ...]`` with ReLU between consecutive layers."""

    layers: list

    @property
    def kind(self) -> str:
        return "linear" if len(self.layers) == 1 else "mlp"

    @property
    def n_classes(self) -> int:
        return self.layers[-1][0].shape[0]

    @property
    def dim(self) -> int:
        return self.layers[0][0].shape[1]

    def copy(self) -> "ModelParams":
        return ModelParams([(w.copy(), b.copy()) for w, b in self.layers])

    def flat(self) -> list:
        return [a for layer in self.layers for a in layer]


def init_params(kind: str, dim: int, n_classes: int, hidden: int, rng) -> ModelParams:
    """Uniform in +-1/sqrt(fan_in) for weights and biases."""
    if kind == "linear":
        shapes = [(n_classes, dim)]
    elif kind == "mlp":
        shapes = [(hidden, dim), (n_classes, hidden)]
    else:
        raise ConfigError(f"unknown model kind {kind!r}")
    layers = []
    for fan_out, fan_in in shapes:
        bound = 1.0 / math.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        b = rng.uniform(-bound, bound, size=fan_out)
        layers.append((w, b))
    return ModelParams(layers)


def _forward_cache(params: ModelParams, x: np.ndarray):
    acts = [x]
    pre = []
    h = x
    for k, (w, b) in enumerate(params.layers):
        z = h @ w.T + b
        pre.append(z)
        h = np.maximum(z, 0.0) if k < len(params.layers) - 1 else z
        acts.append(h)
    return acts, pre


def _check_shape(params: ModelParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != params.dim:
        raise ContractError(f"features of shape {x.shape} do not match model dim {params.dim}")
    return x


def forward(params: ModelParams, features) -> np.ndarray:
    """Logits for one feature vector (1-D) or a batch (rows)."""
    x = _check_shape(params, features)
    acts, _ = _forward_cache(params, x)
    return acts[-1]


def backward(params: ModelParams, features, loss_grad) -> list:
    """Parameter gradients ``[(dW, db), ...]`` summed over the batch rows."""
    x = _check_shape(params, features)
    single = x.ndim == 1
    g = np.asarray(loss_grad, dtype=np.float64)
    if single:
        x, g = x[None, :], g[None, :]
    acts, pre = _forward_cache(params, x)
    grads = [None] * len(params.layers)
    for k in range(len(params.layers) - 1, -1, -1):
        w, _ = params.layers[k]
        grads[k] = (g.T @ acts[k], g.sum(axis=0))
        if k > 0:
            g = (g @ w) * (pre[k - 1] > 0)
    return grads


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    model: str = "linear"
    hidden: int = 32

    def __post_init__(self):
        if self.learning_rate <= 0 or self.eps <= 0 or self.weight_decay < 0:
            raise ConfigError("learning_rate, eps must be > 0 and weight_decay >= 0")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("betas must lie in (0, 1)")
        if self.epochs < 1 or self.batch_size < 1 or self.hidden < 1:
            raise ConfigError("epochs, batch_size and hidden must be positive")
        if self.model not in ("linear", "mlp"):
            raise ConfigError(f"unknown model kind {self.model!r}")


class AdamW:
    """Adam with decoupled weight decay, updating parameter arrays in place."""

    def __init__(self, params: ModelParams, cfg: OptimizerConfig):
        self.cfg = cfg
        self.t = 0
        self.m = [np.zeros_like(a) for a in params.flat()]
        self.v = [np.zeros_like(a) for a in params.flat()]

    def step(self, params: ModelParams, grads: list) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        flat_g = [a for layer in grads for a in layer]
        for p, g, m, v in zip(params.flat(), flat_g, self.m, self.v):
            if c.weight_decay:
                p *= 1.0 - c.learning_rate * c.weight_decay
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p -= c.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + c.eps)


@dataclass
class TrainReport:
    loss_kind: str
    task_kind: str
    records: list = field(default_factory=list)
    steps_accum: list = field(default_factory=list)
    s_max: int | None = None
    test_metrics: dict = field(default_factory=dict)
    train_indices: list = field(default_factory=list)
    final_masked: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    params: ModelParams | None = field(default=None, repr=False, compare=False)

    def validate(self) -> "TrainReport":
        steps = [r["step"] for r in self.records]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ContractError("report steps are not strictly increasing")
        for r in self.records:
            if not 0.0 <= r["masked_ratio"] <= 1.0:
                raise ContractError(f"masked_ratio {r['masked_ratio']} outside [0, 1]")
        if self.s_max is not None:
            scheduler.check_accum_series(self.steps_accum, self.s_max)
        elif any(s != 1 for s in self.steps_accum):
            raise ContractError("steps_accum must stay 1 without a scheduler")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("params")
        return d

    @property
    def final(self) -> dict:
        return self.records[-1]


def _loss_uses_delta(kind: str) -> bool:
    return kind in ("as_softmax", "as_multilabel")


def _logits(params, ds: Dataset, idx) -> np.ndarray:
    return forward(params, ds.features[idx])


def mean_loss(params, ds: Dataset, split: str, loss_fn) -> float:
    idx = ds.splits[split]
    o = _logits(params, ds, idx)
    return float(np.mean([loss_fn(o[k], ds.target(i)).loss for k, i in enumerate(idx)]))


def predict(logits: np.ndarray, task_kind: str, top_k: int | None = None) -> np.ndarray:
    """Argmax for multi-class; ``logit > 0`` (or the top-k classes) for multi-label."""
    if task_kind == "multiclass":
        return np.argmax(logits, axis=1)
    if top_k is None:
        return logits > 0
    pred = np.zeros(logits.shape, dtype=bool)
    top = np.argsort(-logits, axis=1, kind="stable")[:, :top_k]
    np.put_along_axis(pred, top, True, axis=1)
    return pred


def metrics_from_logits(logits, golds, task_kind: str, n_classes: int, top_k=None) -> dict:
    pred = predict(logits, task_kind, top_k)
    if task_kind == "multiclass":
        f1 = f1_scores(pred, golds, n_classes)
        return {"accuracy": accuracy(pred, golds), "macro_f1": f1["macro_f1"],
                "micro_f1": f1["micro_f1"]}
    f1 = f1_scores(pred, np.asarray(golds, dtype=bool), n_classes)
    return {"macro_f1": f1["macro_f1"], "micro_f1": f1["micro_f1"]}


def evaluate(params: ModelParams, ds: Dataset, split: str, top_k: int | None = None) -> dict:
    idx = ds.splits[split]
    if len(idx) == 0:
        raise ContractError(f"split {split!r} is empty")
    return metrics_from_logits(_logits(params, ds, idx), ds.targets[idx], ds.task_kind,
                               ds.n_classes, top_k)


def headline_metric(task_kind: str) -> str:
    return "accuracy" if task_kind == "multiclass" else "micro_f1"


def train(
    ds: Dataset,
    loss_kind: str,
    loss_cfg: LossConfig | None = None,
    opt: OptimizerConfig | None = None,
    warmup: WarmupConfig | None = None,
    accum: scheduler.AccumState | None = None,
    top_k: int | None = None,
) -> TrainReport:
    """Train from a seeded initialization and record one checkpoint per epoch.

    Gradients of a window of batches are summed and divided by the number of
    non-masked samples in the window before one AdamW step. The warm-up
    schedule counts raw batches.
    """
    loss_cfg = loss_cfg or LossConfig()
    opt = opt or OptimizerConfig()
    is_ml = ds.task_kind == "multilabel"
    if (loss_kind in MULTILABEL_LOSSES) != is_ml:
        raise ConfigError(f"loss {loss_kind!r} does not fit a {ds.task_kind} dataset")
    if warmup is None:
        warmup = WarmupConfig(0.0, loss_cfg.delta)
    loss_fn = get_loss(loss_kind, loss_cfg)
    uses_delta = _loss_uses_delta(loss_kind)
    eval_fn = get_loss(loss_kind, LossConfig(**{**asdict(loss_cfg), "delta": warmup.delta}))

    rng = np.random.default_rng(opt.seed)
    params = init_params(opt.model, ds.dim, ds.n_classes, opt.hidden, rng)
    optim = AdamW(params, opt)
    train_idx = np.asarray(ds.splits["train"])
    if train_idx.size == 0:
        raise ContractError("empty train split")
    n_batches = math.ceil(train_idx.size / opt.batch_size)
    total_steps = opt.epochs * n_batches
    metric_name = headline_metric(ds.task_kind)

    report = TrainReport(loss_kind, ds.task_kind, s_max=accum.s_max if accum else None,
                         train_indices=[int(i) for i in train_idx])
    window = [[np.zeros_like(w), np.zeros_like(b)] for w, b in params.layers]
    window_count = 0
    global_batch = 0
    grad_evals = 0
    opt_steps = 0
    masked_by_sample = {}

    for epoch in range(opt.epochs):
        perm = rng.permutation(train_idx)
        loss_sum = 0.0
        n_masked_epoch = 0
        for b in range(n_batches):
            idx = perm[b * opt.batch_size:(b + 1) * opt.batch_size]
            delta = effective_delta(global_batch, total_steps, warmup) if uses_delta else None
            logits = forward(params, ds.features[idx])
            g = np.zeros_like(logits)
            n_masked = 0
            for k, i in enumerate(idx):
                try:
                    res = loss_fn(logits[k], ds.target(i), delta)
                except (NumericError, InvalidInputError) as exc:
                    raise NumericDivergenceError(global_batch, str(exc)) from None
                if not math.isfinite(res.loss):
                    raise NumericDivergenceError(global_batch)
                g[k] = res.grad
                loss_sum += res.loss
                if res.sample_masked:
                    n_masked += 1
                if epoch == opt.epochs - 1:
                    masked_by_sample[int(i)] = res.sample_masked
            with np.errstate(over="ignore", invalid="ignore"):
                grads = backward(params, ds.features[idx], g)
            if not all(np.isfinite(a).all() for layer in grads for a in layer):
                raise NumericDivergenceError(global_batch, "non-finite gradient")
            for acc, (gw, gb) in zip(window, grads):
                acc[0] += gw
                acc[1] += gb
            window_count += idx.size - n_masked
            n_masked_epoch += n_masked
            grad_evals += idx.size

            steps = accum.update(BatchMaskStats(idx.size, n_masked)) if accum else 1
            report.steps_accum.append(steps)
            if scheduler.should_step(global_batch, steps):
                scale = 1.0 / max(window_count, 1)
                with np.errstate(over="ignore", invalid="ignore"):
                    optim.step(params, [(gw * scale, gb * scale) for gw, gb in window])
                if not all(np.isfinite(a).all() for a in params.flat()):
                    raise NumericDivergenceError(global_batch, "non-finite parameters")
                for acc in window:
                    acc[0][...] = 0.0
                    acc[1][...] = 0.0
                window_count = 0
                opt_steps += 1
            global_batch += 1

        val = evaluate(params, ds, "val", top_k)
        try:
            val_loss = mean_loss(params, ds, "val", eval_fn)
        except (NumericError, InvalidInputError) as exc:
            raise NumericDivergenceError(global_batch - 1, str(exc)) from None
        if not math.isfinite(val_loss):
            raise NumericDivergenceError(global_batch - 1, "validation loss")
        report.records.append({
            "step": global_batch,
            "epoch": epoch + 1,
            "train_loss": loss_sum / train_idx.size,
            "val_loss": val_loss,
            "val_metric": val[metric_name],
            **{f"val_{k}": v for k, v in val.items()},
            "masked_ratio": n_masked_epoch / train_idx.size,
            "steps_accum": report.steps_accum[-1],
            "cumulative_gradient_evaluations": grad_evals,
            "cumulative_optimizer_steps": opt_steps,
        })

    report.test_metrics = evaluate(params, ds, "test", top_k)
    report.final_masked = [masked_by_sample[int(i)] for i in train_idx]
    report.params = params
    report.config = {
        "loss_kind": loss_kind,
        "loss": asdict(loss_cfg),
        "optimizer": asdict(opt),
        "warmup": asdict(warmup),
        "accum": None if accum is None else {"lam": accum.lam, "s_max": accum.s_max},
        "top_k": top_k,
    }
    return report.validate()


def extract_hard_samples(report: TrainReport) -> set:
    """Train indices still unmasked in the final epoch of a margin-masked run."""
    if report.loss_kind not in AS_LOSSES:
        raise ContractError(f"hard samples need a margin-masked run, got {report.loss_kind!r}")
    return {i for i, m in zip(report.train_indices, report.final_masked) if not m}
