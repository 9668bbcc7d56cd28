"""Acceptance gate: one PASS/FAIL line per criterion, asserted at its tolerance."""
import csv
import hashlib
import math
import time

import numpy as np
import pytest

from assoftmax import losses
from assoftmax.cli import main
from assoftmax.datasets import gen_multiclass
from assoftmax.errors import ContractError
from assoftmax.losses import LossConfig
from assoftmax.metrics import p_margin_stats, pearson
from assoftmax.numerics import entmax15, simplex_project
from assoftmax.presets import preset
from assoftmax.scheduler import AccumState
from assoftmax.trainer import forward, train
from gradcheck import ALL_LOSSES, check_gradient, draw, near_boundary
from oracles import bisection_entmax15, brute_force_simplex

SEEDS = range(5)
DELTAS = (0.2, 0.3, 0.35)


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
        assert ok, detail
    return emit


def mean_r(report):
    return pearson([r["val_loss"] for r in report.records], [r["val_accuracy"] for r in report.records])


def test_gradient_oracle(verdict):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst, checked, skipped = 0.0, 0, 0
    for kind in ALL_LOSSES:
        for n in (2, 5, 151):
            done = 0
            while done < 100:
                o, t, cfg = draw(kind, n, rng)
                if near_boundary(kind, o, t, cfg):
                    skipped += 1
                    continue
                worst = max(worst, check_gradient(kind, o, t, cfg, h=1e-5))
                done += 1
            checked += done
    elapsed = time.perf_counter() - start
    verdict(1, worst < 1e-4 and elapsed < 30,
            f"{checked} draws over {len(ALL_LOSSES)} losses, worst rel err {worst:.2e} (< 1e-4), "
            f"{skipped} boundary draws skipped, {elapsed:.1f}s (< 30s)")


def test_degeneracies(verdict):
    rng = np.random.default_rng(7)
    pairs = {
        "as_softmax(delta=1)": (lambda o, t: losses.as_softmax(o, t, 1.0), losses.softmax_ce),
        "t_softmax(tau=1)": (lambda o, t: losses.t_softmax_ce(o, t, 1.0), losses.softmax_ce),
        "label_smoothing(eps=0)": (lambda o, t: losses.label_smoothing_ce(o, t, 0.0), losses.softmax_ce),
        "am_softmax(s=1,m=0)": (lambda o, t: losses.am_softmax(o, t, 1.0, 0.0), losses.softmax_ce),
        "sparse_topk(k>=n)": (lambda o, t: losses.sparse_topk_ce(o, t, o.size + int(t) % 3), losses.softmax_ce),
    }
    worst = {}
    for name, (f, g) in pairs.items():
        w = 0.0
        for _ in range(1000):
            n = int(rng.integers(2, 40))
            o = rng.normal(0, rng.uniform(0.1, 10), size=n)
            t = int(rng.integers(n))
            a, b = f(o, t), g(o, t)
            w = max(w, abs(a.loss - b.loss), float(np.abs(a.grad - b.grad).max()))
        worst[name] = w
    w = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 40))
        o = rng.normal(0, rng.uniform(0.1, 10), size=n)
        pos = rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False)
        a, b = losses.as_multilabel(o, pos, 1.0), losses.multilabel_softmax(o, pos)
        w = max(w, abs(a.loss - b.loss), float(np.abs(a.grad - b.grad).max()))
    worst["as_multilabel(delta=1)"] = w
    top = max(worst.values())
    verdict(2, top <= 1e-12, f"6 equivalences x 1000 inputs, max |diff| {top:.1e} (<= 1e-12)")


def test_margin_bound(verdict):
    rng = np.random.default_rng(11)
    total = masked = violations = 0
    for n in (3, 5, 151):
        for delta in (0.05, 0.3, 0.35):
            for _ in range(1200):
                o = rng.normal(0, rng.uniform(0.5, 12), size=n)
                t = int(rng.integers(n)) if rng.random() < 0.3 else int(np.argmax(o))
                r = losses.as_softmax(o, t, delta)
                total += 1
                if r.sample_masked:
                    masked += 1
                    if o[t] - o.min() < math.log(n * delta + 1) - 1e-12:
                        violations += 1
    verdict(3, total >= 10_000 and violations == 0 and masked > 0,
            f"{total} vectors, {masked} masked, {violations} bound violations")


def test_projection_oracles(verdict):
    rng = np.random.default_rng(5)
    ws = we = 0.0
    for _ in range(1000):
        v = rng.normal(0, rng.uniform(0.1, 3), size=int(rng.integers(1, 7)))
        ws = max(ws, float(np.abs(simplex_project(v) - brute_force_simplex(v)).max()))
    for _ in range(1000):
        v = rng.normal(0, rng.uniform(0.1, 3), size=int(rng.integers(1, 11)))
        we = max(we, float(np.abs(entmax15(v) - bisection_entmax15(v)).max()))
    verdict(4, ws <= 1e-6 and we <= 1e-6,
            f"simplex vs enumeration max err {ws:.1e}, entmax15 vs bisection max err {we:.1e} (<= 1e-6)")


def test_scheduler_restrictions(verdict):
    spec, opt = preset("separable", 0)
    ds = gen_multiclass(spec)
    series_ok = True
    for lam, s_max in ((1.0, 4), (0.5, 5), (3.0, 2), (1e-6, 4)):
        r = train(ds, "as_softmax", LossConfig(delta=0.3), opt, accum=AccumState(lam, s_max))
        s = r.steps_accum
        series_ok &= all(0 <= b - a <= 1 for a, b in zip(s, s[1:])) and max(s) <= s_max
    r.steps_accum = [1, 3]
    try:
        r.validate()
        caught = False
    except ContractError:
        caught = True
    verdict(5, series_ok and caught,
            "4 AS-Speed runs non-decreasing, +1 steps, capped; tampered series rejected by validation")


def test_masked_ratio_dynamics(verdict):
    start = time.perf_counter()
    rises, sm_zero = [], True
    for seed in SEEDS:
        spec, opt = preset("separable", seed)
        ds = gen_multiclass(spec)
        r = train(ds, "as_softmax", LossConfig(delta=0.3), opt)
        rises.append(r.records[-1]["masked_ratio"] - r.records[0]["masked_ratio"])
        sm = train(ds, "softmax_ce", LossConfig(), opt)
        sm_zero &= all(x["masked_ratio"] == 0 for x in sm.records)
    elapsed = time.perf_counter() - start
    verdict(6, min(rises) >= 0.30 and sm_zero and elapsed < 120,
            f"masked-ratio rise per seed {np.round(rises, 3).tolist()} (>= 0.30), "
            f"softmax ratio all zero: {sm_zero}, {elapsed:.0f}s (< 120s)")


@pytest.fixture(scope="module")
def hard_runs():
    out = []
    for seed in SEEDS:
        spec, opt = preset("hard", seed)
        ds = gen_multiclass(spec)
        sm = train(ds, "softmax_ce", LossConfig(), opt)
        runs = {d: train(ds, "as_softmax", LossConfig(delta=d), opt) for d in DELTAS}
        out.append((ds, sm, runs))
    return out


@pytest.fixture(scope="module")
def separable_runs():
    out = []
    for seed in SEEDS:
        spec, opt = preset("separable", seed)
        ds = gen_multiclass(spec)
        sm = train(ds, "softmax_ce", LossConfig(), opt)
        runs = {d: train(ds, "as_softmax", LossConfig(delta=d), opt) for d in DELTAS}
        speed = train(ds, "as_softmax", LossConfig(delta=0.3), opt, accum=AccumState(1.0, 4))
        out.append((ds, sm, runs, speed))
    return out


def test_loss_accuracy_correlation(verdict, hard_runs):
    r_sm = float(np.mean([mean_r(sm) for _, sm, _ in hard_runs]))
    r_as = float(np.mean([mean_r(runs[0.3]) for _, _, runs in hard_runs]))
    verdict(7, r_as <= -0.8 and r_sm - r_as >= 0.2,
            f"hard preset mean Pearson r: AS-Softmax(0.3) {r_as:+.3f} (<= -0.8), softmax {r_sm:+.3f}, "
            f"gap {r_sm - r_as:.3f} (>= 0.2)")


def _tuned(runs):
    best = max(DELTAS, key=lambda d: runs[d].final["val_accuracy"])
    return runs[best].test_metrics["accuracy"]


def test_accuracy_parity(verdict, hard_runs, separable_runs):
    lines, ok = [], True
    for name, data in (("separable", [(s, r) for _, s, r, _ in separable_runs]),
                       ("hard", [(s, r) for _, s, r in hard_runs])):
        sm = float(np.mean([s.test_metrics["accuracy"] for s, _ in data]))
        tuned = float(np.mean([_tuned(r) for _, r in data]))
        per_delta = {d: float(np.mean([r[d].test_metrics["accuracy"] for _, r in data])) for d in DELTAS}
        ok &= tuned >= sm - 0.005
        lines.append(f"{name}: softmax {sm:.4f}, val-tuned AS {tuned:.4f}")
        if name == "hard":
            best = max(per_delta, key=per_delta.get)
            ok &= per_delta[best] > sm
            lines.append(f"best delta {best} -> {per_delta[best]:.4f} (> softmax)")
    verdict(8, ok, "; ".join(lines) + " (tuned >= softmax - 0.5pt)")


def test_as_speed_efficiency(verdict, separable_runs):
    sm_steps = np.mean([s.final["cumulative_optimizer_steps"] for _, s, _, _ in separable_runs])
    sp_steps = np.mean([sp.final["cumulative_optimizer_steps"] for _, _, _, sp in separable_runs])
    acc_as = np.mean([r[0.3].test_metrics["accuracy"] for _, _, r, _ in separable_runs])
    acc_sp = np.mean([sp.test_metrics["accuracy"] for _, _, _, sp in separable_runs])
    cut = 1 - sp_steps / sm_steps
    verdict(9, cut >= 0.15 and abs(acc_sp - acc_as) <= 0.01,
            f"optimizer steps {sp_steps:.0f} vs softmax {sm_steps:.0f} ({cut:.0%} fewer, >= 15%); "
            f"test acc AS-Speed {acc_sp:.4f} vs AS-Softmax {acc_as:.4f} (within 1pt)")


def test_p_margin_concentration(verdict, hard_runs):
    delta = 0.3
    m_sm, m_as = [], []
    for ds, sm, runs in hard_runs:
        te = ds.splits["test"]
        for rep, store in ((sm, m_sm), (runs[delta], m_as)):
            samples, _, _ = p_margin_stats(forward(rep.params, ds.features[te]), ds.targets[te])
            store.extend(s.p_margin for s in samples if s.correct)
    m_sm, m_as = np.array(m_sm), np.array(m_as)
    frac = float(np.mean((m_as > 0) & (m_as <= delta + 0.2)))
    verdict(10, np.median(m_as) <= np.median(m_sm) and frac >= 0.6,
            f"median correct-sample p_margin AS {np.median(m_as):.3f} <= softmax {np.median(m_sm):.3f}; "
            f"{frac:.0%} of AS margins in (0, {delta + 0.2:.1f}] (>= 60%)")


def test_hard_sample_direction(verdict, tmp_path):
    cfg = tmp_path / "noisy.cfg"
    cfg.write_text("data.preset = noisy\nloss.kind = as_softmax\nloss.delta = 0.3\n")
    code = main(["hard-samples", "--config", str(cfg), "--seed", "0,1,2,3,4",
                 "--out", str(tmp_path), "--quiet"])
    with open(tmp_path / "hard_samples.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    wins = sum(float(r["hard_metric"]) < float(r["random_metric"]) for r in rows)
    detail = ", ".join(f"{float(r['hard_metric']):.3f}<{float(r['random_metric']):.3f}" for r in rows)
    verdict(11, code == 0 and wins >= 4, f"hard < random retrain accuracy on {wins}/5 seeds ({detail})")


def test_determinism(verdict, tmp_path):
    configs = {
        "as_speed": "data.preset = separable\nloss.kind = as_softmax\naccum.lam = 1\naccum.s_max = 4\n",
        "mlp_warmup": ("data.preset = separable\nloss.kind = as_softmax\noptim.model = mlp\n"
                       "optim.weight_decay = 0.01\nwarmup.r = 0.2\n"),
        "entmax": "data.preset = separable\nloss.kind = entmax15_loss\noptim.epochs = 4\n",
    }
    same = True
    for name, text in configs.items():
        path = tmp_path / f"{name}.cfg"
        path.write_text(text)
        digests = []
        for rep in ("a", "b"):
            out = tmp_path / name / rep
            assert main(["train", "--config", str(path), "--seed", "3", "--out", str(out), "--quiet"]) == 0
            digests.append(hashlib.sha256((out / "seed3" / "series.csv").read_bytes()).hexdigest())
        same &= digests[0] == digests[1]
    verdict(12, same, f"{len(configs)} configs rerun with seed 3: series.csv byte-identical = {same}")
