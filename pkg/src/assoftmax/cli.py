"""Command-line experiment runner.

Config files hold flat ``key = value`` lines with dotted keys. A ``[section]``
header prefixes the keys that follow it, so ``[loss]`` then ``delta = 0.3`` is
the same as ``loss.delta = 0.3``. ``#`` starts a comment.

Per-seed outputs go to ``OUT/seed<N>/``; cross-seed tables go to ``OUT``.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from assoftmax import __version__
from assoftmax.datasets import (
    SETTING_1,
    SETTING_2,
    CsvSchema,
    SynthSpec,
    gen_multiclass,
    gen_multilabel,
    load_csv,
    resample_imbalance,
    setting2_counts,
    subset_train,
    write_csv,
)
from assoftmax.errors import ConfigError, ContractError, LoadError, NumericDivergenceError
from assoftmax.losses import AS_LOSSES, MULTICLASS_LOSSES, MULTILABEL_LOSSES, LossConfig
from assoftmax.masking import WarmupConfig
from assoftmax.metrics import p_margin_stats, pearson
from assoftmax.presets import preset
from assoftmax.scheduler import AccumState
from assoftmax.trainer import (
    OptimizerConfig,
    TrainReport,
    extract_hard_samples,
    forward,
    headline_metric,
    train,
)

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_PARTIAL, EXIT_EMPTY = 0, 2, 3, 4, 5

SERIES_COLUMNS = ("step", "epoch", "train_loss", "val_loss", "val_metric", "masked_ratio",
                  "steps_accum", "cumulative_gradient_evaluations", "cumulative_optimizer_steps")

_SPEC_KEYS = {f.name for f in fields(SynthSpec)} - {"seed"}
_LOSS_KEYS = {f.name for f in fields(LossConfig)}
_OPT_KEYS = {f.name for f in fields(OptimizerConfig)} - {"seed"}
KNOWN_KEYS = (
    {"name", "seeds"}
    | {f"data.{k}" for k in _SPEC_KEYS | {"preset", "path", "task_kind", "labels_per_sample", "strict"}}
    | {"loss.kind"} | {f"loss.{k}" for k in _LOSS_KEYS}
    | {f"optim.{k}" for k in _OPT_KEYS}
    | {"warmup.r", "accum.lam", "accum.s_max", "eval.top_k"}
    | {"sweep.param", "sweep.values"}
    | {"imbalance.mode", "imbalance.counts", "imbalance.minor_count", "imbalance.ratios"}
    | {"hard.loss_kind"}
)


class UsageError(Exception):
    pass


# --- config ----------------------------------------------------------------

def _parse_value(text: str):
    text = text.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null"):
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def parse_config_text(text: str, source: str = "<config>") -> dict:
    cfg = {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if section:
            key = f"{section}.{key}"
        if key not in KNOWN_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        cfg[key] = _parse_value(value)
    return cfg


def load_config(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    cfg = parse_config_text(text, str(path))
    cfg.setdefault("name", Path(path).stem)
    return cfg


def _number_list(value, cast=float) -> list:
    if value is None:
        return []
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return [cast(value)]
    try:
        return [cast(v) for v in str(value).replace(" ", "").split(",") if v]
    except ValueError:
        raise ConfigError(f"expected a comma-separated number list, got {value!r}") from None


def parse_seeds(text) -> list:
    seeds = _number_list(text, int)
    if not seeds:
        raise ConfigError("seed list is empty")
    return seeds


class RunSettings:
    """Typed view of one config for one seed."""

    def __init__(self, cfg: dict, seed: int):
        self.raw = dict(cfg)
        self.seed = seed
        data = {k[5:]: v for k, v in cfg.items() if k.startswith("data.")}
        self.data_path = data.pop("path", None)
        preset_name = data.pop("preset", None)
        self.task_kind = data.pop("task_kind", "multiclass")
        self.labels_per_sample = data.pop("labels_per_sample", 2)
        self.strict = data.pop("strict", True)
        if preset_name is not None:
            spec, opt = preset(preset_name, seed)
        else:
            spec, opt = SynthSpec(seed=seed), OptimizerConfig(seed=seed)
        if isinstance(data.get("samples_per_class"), str):
            data["samples_per_class"] = tuple(_number_list(data["samples_per_class"], int))
        self.spec = replace(spec, **data)
        self.opt = replace(opt, **{k[6:]: v for k, v in cfg.items() if k.startswith("optim.")})
        self.loss_kind = cfg.get("loss.kind", "as_softmax")
        if self.loss_kind not in MULTICLASS_LOSSES + MULTILABEL_LOSSES:
            raise ConfigError(f"unknown loss kind {self.loss_kind!r}")
        self.loss = LossConfig(**{k[5:]: v for k, v in cfg.items()
                                  if k.startswith("loss.") and k != "loss.kind"})
        self.warmup = WarmupConfig(cfg.get("warmup.r", 0.0), self.loss.delta)
        self.accum = None
        if "accum.lam" in cfg or "accum.s_max" in cfg:
            self.accum = (cfg.get("accum.lam", 1.0), cfg.get("accum.s_max", 4))
            AccumState(*self.accum)
        self.top_k = cfg.get("eval.top_k")

    def dataset(self):
        if self.data_path is not None:
            schema = CsvSchema(self.task_kind, strict=self.strict, seed=self.seed,
                               val_fraction=self.spec.val_fraction,
                               test_fraction=self.spec.test_fraction)
            try:
                return load_csv(self.data_path, schema)
            except OSError as exc:
                raise ConfigError(f"cannot read dataset {self.data_path}: {exc}") from None
        if self.task_kind == "multilabel":
            return gen_multilabel(self.spec, self.labels_per_sample)
        return gen_multiclass(self.spec)

    def run(self, ds, loss_kind=None, loss=None) -> TrainReport:
        loss = loss or self.loss
        accum = AccumState(*self.accum) if self.accum else None
        return train(ds, loss_kind or self.loss_kind, loss, self.opt,
                     WarmupConfig(self.warmup.r, loss.delta), accum, self.top_k)

    def resolved(self) -> dict:
        return {
            "name": self.raw.get("name"),
            "seed": self.seed,
            "data": {"path": self.data_path, "task_kind": self.task_kind,
                     "labels_per_sample": self.labels_per_sample, "strict": self.strict,
                     **asdict(self.spec)},
            "loss": {"kind": self.loss_kind, **asdict(self.loss)},
            "optim": asdict(self.opt),
            "warmup": asdict(self.warmup),
            "accum": None if self.accum is None else {"lam": self.accum[0], "s_max": self.accum[1]},
            "eval": {"top_k": self.top_k},
            "version": __version__,
        }


# --- output helpers ----------------------------------------------------------

def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, (np.ndarray, tuple, set)):
        return sorted(o) if isinstance(o, set) else list(np.asarray(o).tolist())
    raise TypeError(f"cannot serialise {type(o).__name__}")


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n",
                    encoding="utf-8")


def _cell(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, np.floating):
        return repr(float(v))
    return "" if v is None else str(v)


def write_csv_rows(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def series_rows(report: TrainReport) -> list:
    return [[r[c] for c in SERIES_COLUMNS] for r in report.records]


def loss_metric_r(report: TrainReport):
    try:
        return pearson([r["val_loss"] for r in report.records],
                       [r["val_metric"] for r in report.records])
    except ContractError:
        return None


def text_table(header, rows) -> str:
    cells = [list(map(str, header))] + [[_fmt_cell(v) for v in row] for row in rows]
    widths = [max(len(r[k]) for r in cells) for k in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _fmt_cell(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.4f}"
    return "" if v is None else str(v)


class Context:
    def __init__(self, out: Path, quiet: bool):
        self.out = out
        self.quiet = quiet

    def seed_dir(self, seed: int) -> Path:
        d = self.out / f"seed{seed}"
        d.mkdir(parents=True, exist_ok=True)
        return d

    def say(self, msg: str) -> None:
        if not self.quiet:
            print(msg)


def _seeds(args, cfg) -> list:
    if args.seed is not None:
        return parse_seeds(args.seed)
    if "seeds" in cfg:
        return parse_seeds(cfg["seeds"])
    return [0]


def _single_config(args) -> dict:
    if not args.config:
        raise UsageError("--config is required")
    if len(args.config) > 1:
        raise UsageError("this command takes exactly one --config")
    return load_config(args.config[0])


# --- commands ----------------------------------------------------------------

def cmd_gen_data(args, ctx: Context) -> int:
    cfg = _single_config(args)
    for seed in _seeds(args, cfg):
        s = RunSettings(cfg, seed)
        if s.data_path is not None:
            raise ConfigError("gen-data needs a synthetic spec, not data.path")
        ds = s.dataset()
        d = ctx.seed_dir(seed)
        write_csv(ds, d / "dataset.csv")
        write_json(d / "resolved_config.json", s.resolved())
        ctx.say(f"seed {seed}: wrote {d / 'dataset.csv'} ({len(ds.targets)} rows)")
    return EXIT_OK


def _emit_train(d: Path, s: RunSettings, ds, report: TrainReport) -> None:
    write_json(d / "resolved_config.json", s.resolved())
    write_json(d / "report.json", report.to_dict())
    write_csv_rows(d / "series.csv", SERIES_COLUMNS, series_rows(report))
    if ds.task_kind == "multiclass":
        te = ds.splits["test"]
        samples, counts, edges = p_margin_stats(forward(report.params, ds.features[te]), ds.targets[te])
        write_csv_rows(d / "margins.csv", ("index", "p_margin", "correct"),
                       [[int(i), m.p_margin, m.correct] for i, m in zip(te, samples)])
        write_csv_rows(d / "margins_hist.csv", ("bin_lo", "bin_hi", "count"),
                       [[float(edges[k]), float(edges[k + 1]), int(c)] for k, c in enumerate(counts)])


def cmd_train(args, ctx: Context) -> int:
    cfg = _single_config(args)
    for seed in _seeds(args, cfg):
        s = RunSettings(cfg, seed)
        ds = s.dataset()
        report = s.run(ds)
        _emit_train(ctx.seed_dir(seed), s, ds, report)
        metric = headline_metric(ds.task_kind)
        ctx.say(f"seed {seed}: test {metric} = {report.test_metrics[metric]:.4f}")
    return EXIT_OK


COMPARE_COLUMNS = ("method", "runs", "metric", "mean", "std", "optimizer_steps",
                   "gradient_evaluations", "pearson_r", "pearson_points", "status")


def cmd_compare(args, ctx: Context) -> int:
    if not args.config or len(args.config) < 2:
        raise UsageError("compare needs at least two --config files")
    configs = [load_config(p) for p in args.config]
    names = [c["name"] for c in configs]
    for k, c in enumerate(configs):
        if names.count(c["name"]) > 1:
            c["name"] = f"{c['name']}-{k + 1}"
    seed_lists = [_seeds(args, c) for c in configs]
    settings = [[RunSettings(c, seed) for seed in seeds] for c, seeds in zip(configs, seed_lists)]
    rows, partial = [], False
    for cfg, runs in zip(configs, settings):
        metrics, steps, evals, rs, points = [], [], [], [], []
        failures = 0
        metric = None
        for s in runs:
            try:
                ds = s.dataset()
                report = s.run(ds)
            except NumericDivergenceError as exc:
                failures += 1
                ctx.say(f"{cfg['name']} seed {s.seed}: {exc}")
                continue
            metric = headline_metric(ds.task_kind)
            metrics.append(report.test_metrics[metric])
            steps.append(report.final["cumulative_optimizer_steps"])
            evals.append(report.final["cumulative_gradient_evaluations"])
            r = loss_metric_r(report)
            if r is not None:
                rs.append(r)
            points.append(len(report.records))
            _emit_train(_run_dir(ctx, cfg["name"], s.seed), s, ds, report)
        partial |= failures > 0
        nan = float("nan")
        rows.append([
            cfg["name"], len(metrics), metric or "",
            float(np.mean(metrics)) if metrics else nan,
            float(np.std(metrics)) if metrics else nan,
            float(np.mean(steps)) if steps else nan,
            float(np.mean(evals)) if evals else nan,
            float(np.mean(rs)) if rs else nan,
            max(points) if points else 0,
            "ok" if not failures else f"partial ({failures} failed)",
        ])
    write_csv_rows(ctx.out / "comparison.csv", COMPARE_COLUMNS, rows)
    table = text_table(COMPARE_COLUMNS, rows)
    (ctx.out / "comparison.txt").write_text(table + "\n", encoding="utf-8")
    ctx.say(table)
    return EXIT_PARTIAL if partial else EXIT_OK


def _run_dir(ctx: Context, name: str, seed: int) -> Path:
    d = ctx.out / name / f"seed{seed}"
    d.mkdir(parents=True, exist_ok=True)
    return d


SWEEP_RANGES = {"delta": (0.0, 1.0), "delta_prime": (0.0, math.inf)}


def cmd_sweep(args, ctx: Context) -> int:
    cfg = _single_config(args)
    param = cfg.get("sweep.param", "delta")
    if param not in SWEEP_RANGES:
        raise ConfigError(f"sweep.param must be one of {sorted(SWEEP_RANGES)}")
    values = _number_list(cfg.get("sweep.values"))
    if not values:
        raise ConfigError("sweep.values is empty")
    lo, hi = SWEEP_RANGES[param]
    bad = [v for v in values if not (v > lo and v <= hi)] if param == "delta" else [v for v in values if v < 0]
    if bad:
        raise ConfigError(f"illegal {param} values {bad}")
    seeds = _seeds(args, cfg)
    base = [RunSettings(cfg, seed) for seed in seeds]
    rows = []
    for v in values:
        for s in base:
            ds = s.dataset()
            loss = replace(s.loss, **{param: v})
            report = s.run(ds, loss=loss)
            metric = headline_metric(ds.task_kind)
            rows.append([param, v, s.seed, report.final["val_metric"], report.test_metrics[metric]])
            ctx.say(f"{param}={v} seed {s.seed}: val {rows[-1][3]:.4f} test {rows[-1][4]:.4f}")
    write_csv_rows(ctx.out / "sweep.csv", ("param", "value", "seed", "val_metric", "test_metric"), rows)
    return EXIT_OK


def _load_report(path) -> TrainReport:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return TrainReport(d["loss_kind"], d["task_kind"], train_indices=d["train_indices"],
                           final_masked=d["final_masked"])
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot read report {path}: {exc}") from None


def cmd_hard_samples(args, ctx: Context) -> int:
    cfg = _single_config(args)
    seeds = _seeds(args, cfg)
    if args.report and len(seeds) != 1:
        raise UsageError("--report pairs with exactly one seed")
    retrain_kind = cfg.get("hard.loss_kind", "softmax_ce")
    rows, empty = [], []
    for seed in seeds:
        s = RunSettings(cfg, seed)
        if s.loss_kind not in AS_LOSSES:
            raise ConfigError(f"hard-samples needs a margin-masked loss, got {s.loss_kind!r}")
        ds = s.dataset()
        report = _load_report(args.report) if args.report else s.run(ds)
        hard = sorted(extract_hard_samples(report))
        d = ctx.seed_dir(seed)
        write_json(d / "resolved_config.json", s.resolved())
        if not hard:
            empty.append(seed)
            ctx.say(f"seed {seed}: every training sample was masked; no hard set to retrain on")
            continue
        rng = np.random.default_rng(seed)
        rand = np.sort(rng.choice(report.train_indices, size=len(hard), replace=False))
        metric = headline_metric(ds.task_kind)
        hard_rep = s.run(subset_train(ds, hard), loss_kind=retrain_kind)
        rand_rep = s.run(subset_train(ds, rand), loss_kind=retrain_kind)
        write_json(d / "hard_report.json", hard_rep.to_dict())
        write_json(d / "random_report.json", rand_rep.to_dict())
        write_csv_rows(d / "subsets.csv", ("subset", "index"),
                       [["hard", i] for i in hard] + [["random", int(i)] for i in rand])
        rows.append([seed, len(hard), hard_rep.test_metrics[metric], rand_rep.test_metrics[metric]])
        ctx.say(f"seed {seed}: {len(hard)} hard samples; hard {rows[-1][2]:.4f} vs random {rows[-1][3]:.4f}")
    write_csv_rows(ctx.out / "hard_samples.csv",
                   ("seed", "subset_size", "hard_metric", "random_metric"), rows)
    if empty:
        print(f"hard set empty for seeds {empty}", file=sys.stderr)
        return EXIT_EMPTY
    return EXIT_OK


def _count_rows(cfg, ds) -> list:
    mode = cfg.get("imbalance.mode")
    if mode not in (SETTING_1, SETTING_2):
        raise ConfigError(f"imbalance.mode must be {SETTING_1!r} or {SETTING_2!r}")
    if "imbalance.ratios" in cfg:
        if mode != SETTING_2 or "imbalance.minor_count" not in cfg:
            raise ConfigError("imbalance.ratios needs fix-minor-grow-major and imbalance.minor_count")
        return [setting2_counts(ds, int(cfg["imbalance.minor_count"]), r)
                for r in _number_list(cfg["imbalance.ratios"])]
    text = cfg.get("imbalance.counts")
    if not text:
        raise ConfigError("imbalance.counts or imbalance.ratios is required")
    rows = []
    for chunk in str(text).split("|"):
        row = {}
        for item in chunk.replace(" ", "").split(","):
            if not item:
                continue
            try:
                c, n = item.split(":")
                row[int(c)] = int(n)
            except ValueError:
                raise ConfigError(f"bad count entry {item!r}; expected class:count") from None
        rows.append(row)
    return rows


def cmd_imbalance(args, ctx: Context) -> int:
    cfg = _single_config(args)
    seeds = _seeds(args, cfg)
    mode = cfg.get("imbalance.mode")
    plans = []
    for seed in seeds:
        s = RunSettings(cfg, seed)
        ds = s.dataset()
        variants = [resample_imbalance(ds, mode, counts, seed) for counts in _count_rows(cfg, ds)]
        plans.append((s, variants))
    rows = []
    for s, variants in plans:
        for k, rds in enumerate(variants):
            metric = headline_metric(rds.task_kind)
            sm = s.run(rds, loss_kind="softmax_ce").test_metrics[metric]
            as_ = s.run(rds, loss_kind="as_softmax").test_metrics[metric]
            counts = "/".join(str(int(c)) for c in rds.class_counts("train"))
            rows.append([k, s.seed, counts, sm, as_])
            ctx.say(f"row {k} seed {s.seed} [{counts}]: softmax {sm:.4f}  as_softmax {as_:.4f}")
    write_csv_rows(ctx.out / "imbalance.csv",
                   ("setting", "seed", "train_counts", "softmax_metric", "as_softmax_metric"), rows)
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
    "hard-samples": cmd_hard_samples,
    "imbalance": cmd_imbalance,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="assoftmax", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", action="append", help="config file (repeat for compare)")
        p.add_argument("--seed", help="seed or comma-separated seeds; overrides the config")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--quiet", action="store_true")
        if name == "hard-samples":
            p.add_argument("--report", help="reuse report.json of an earlier margin-masked run")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    ctx = Context(Path(args.out), args.quiet)
    try:
        return COMMANDS[args.command](args, ctx)
    except NumericDivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (UsageError, ConfigError, ContractError, LoadError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TypeError as exc:
        # dataclass construction with a misspelt or mistyped field
        print(f"error: bad configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
