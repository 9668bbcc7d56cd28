"""Synthetic Gaussian-mixture datasets, CSV ingestion and imbalance resampling."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from assoftmax.errors import ConfigError, ContractError, LoadError

SPLITS = ("train", "val", "test")
SETTING_1 = "keep-major-shrink-minor"
SETTING_2 = "fix-minor-grow-major"


@dataclass
class Dataset:
    """Dense features with multi-class (int vector) or multi-label (bool matrix) targets."""

    features: np.ndarray
    targets: np.ndarray
    splits: dict
    n_classes: int
    task_kind: str = "multiclass"
    class_names: list = field(default_factory=list)
    # uncorrupted labels, present only for generated data with label noise
    clean_targets: np.ndarray | None = None

    def __post_init__(self):
        if not self.class_names:
            self.class_names = [f"c{i}" for i in range(self.n_classes)]
        self.validate()

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def positives(self, i: int):
        return np.flatnonzero(self.targets[i])

    def target(self, i: int):
        """Loss-ready target: class index or tuple of positive indices."""
        if self.task_kind == "multiclass":
            return int(self.targets[i])
        return tuple(int(j) for j in np.flatnonzero(self.targets[i]))

    def split_counts(self) -> dict:
        return {k: int(len(v)) for k, v in self.splits.items()}

    def class_counts(self, split: str = "train") -> np.ndarray:
        idx = self.splits[split]
        if self.task_kind == "multiclass":
            return np.bincount(self.targets[idx], minlength=self.n_classes)
        return self.targets[idx].sum(axis=0)

    def validate(self):
        n = self.features.shape[0]
        if self.task_kind not in ("multiclass", "multilabel"):
            raise ContractError(f"unknown task kind {self.task_kind!r}")
        if len(self.targets) != n:
            raise ContractError("features and targets differ in length")
        seen = np.zeros(n, dtype=bool)
        for name, idx in self.splits.items():
            idx = np.asarray(idx)
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise ContractError(f"split {name!r} indexes outside the dataset")
            if seen[idx].any():
                raise ContractError("splits overlap")
            seen[idx] = True
        if self.task_kind == "multiclass":
            if n and (self.targets.min() < 0 or self.targets.max() >= self.n_classes):
                raise ContractError("class index out of range")
        elif n and not self.targets.any(axis=1).all():
            raise ContractError("every multi-label sample needs a positive class")


@dataclass(frozen=True)
class SynthSpec:
    n_classes: int = 5
    dim: int = 10
    samples_per_class: int | Sequence[int] = 200
    separation: float = 6.0
    label_noise_rate: float = 0.0
    seed: int = 0
    val_fraction: float = 0.15
    test_fraction: float = 0.15

    def __post_init__(self):
        if self.n_classes < 2 or self.dim < 1:
            raise ConfigError("need n_classes >= 2 and dim >= 1")
        if self.separation <= 0:
            raise ConfigError("separation must be positive")
        if not 0.0 <= self.label_noise_rate < 1.0:
            raise ConfigError("label_noise_rate must be in [0, 1)")
        if self.val_fraction < 0 or self.test_fraction < 0 or self.val_fraction + self.test_fraction >= 1:
            raise ConfigError("val/test fractions must leave a train split")
        counts = self.per_class_counts()
        if len(counts) != self.n_classes or min(counts) < 1:
            raise ConfigError("samples_per_class must give a positive count per class")

    def per_class_counts(self) -> list:
        if np.ndim(self.samples_per_class) == 0:
            return [int(self.samples_per_class)] * self.n_classes
        return [int(c) for c in self.samples_per_class]


def cluster_means(n_clusters: int, dim: int, separation: float, rng) -> np.ndarray:
    """Means at pairwise distance ``separation`` (orthogonal axes when they fit)."""
    radius = separation / np.sqrt(2.0)
    if n_clusters <= dim:
        means = np.zeros((n_clusters, dim))
        means[np.arange(n_clusters), np.arange(n_clusters)] = radius
        return means
    dirs = rng.standard_normal((n_clusters, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return radius * dirs


def _sample_clusters(spec: SynthSpec, rng):
    counts = spec.per_class_counts()
    means = cluster_means(spec.n_classes, spec.dim, spec.separation, rng)
    clusters = np.repeat(np.arange(spec.n_classes), counts)
    x = means[clusters] + rng.standard_normal((clusters.size, spec.dim))
    splits = {s: [] for s in SPLITS}
    for c in range(spec.n_classes):
        idx = rng.permutation(np.flatnonzero(clusters == c))
        n_val = int(round(spec.val_fraction * idx.size))
        n_test = int(round(spec.test_fraction * idx.size))
        splits["val"].append(idx[:n_val])
        splits["test"].append(idx[n_val:n_val + n_test])
        splits["train"].append(idx[n_val + n_test:])
    splits = {s: np.sort(np.concatenate(v)).astype(np.int64) for s, v in splits.items()}
    return x, clusters, splits


def _noisy_indices(train_idx: np.ndarray, rate: float, rng) -> np.ndarray:
    n_noisy = int(round(rate * train_idx.size))
    return np.sort(rng.choice(train_idx, size=n_noisy, replace=False))


def _other_class(c: int, n: int, rng) -> int:
    j = int(rng.integers(n - 1))
    return j + (j >= c)


def gen_multiclass(spec: SynthSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    x, clusters, splits = _sample_clusters(spec, rng)
    targets = clusters.copy()
    for i in _noisy_indices(splits["train"], spec.label_noise_rate, rng):
        targets[i] = _other_class(int(clusters[i]), spec.n_classes, rng)
    clean = clusters if spec.label_noise_rate > 0 else None
    return Dataset(x, targets, splits, spec.n_classes, "multiclass", clean_targets=clean)


def label_groups(n_classes: int, labels_per_sample: int) -> np.ndarray:
    """Indicator rows: cluster c owns classes c, c+1, ... (mod n)."""
    groups = np.zeros((n_classes, n_classes), dtype=bool)
    for c in range(n_classes):
        groups[c, [(c + j) % n_classes for j in range(labels_per_sample)]] = True
    return groups


def gen_multilabel(spec: SynthSpec, labels_per_sample: int = 2) -> Dataset:
    """One cluster per class; a sample's positives are its cluster's label group."""
    if not 1 <= labels_per_sample < spec.n_classes:
        raise ConfigError("labels_per_sample must be in [1, n_classes)")
    rng = np.random.default_rng(spec.seed)
    x, clusters, splits = _sample_clusters(spec, rng)
    groups = label_groups(spec.n_classes, labels_per_sample)
    noisy_clusters = clusters.copy()
    for i in _noisy_indices(splits["train"], spec.label_noise_rate, rng):
        noisy_clusters[i] = _other_class(int(clusters[i]), spec.n_classes, rng)
    clean = groups[clusters] if spec.label_noise_rate > 0 else None
    return Dataset(x, groups[noisy_clusters], splits, spec.n_classes, "multilabel",
                   clean_targets=clean)


# --- CSV -------------------------------------------------------------------

@dataclass(frozen=True)
class CsvSchema:
    """Column layout of a dataset CSV.

    ``feature_columns=None`` takes every ``f<k>`` column in header order. When
    the file carries no ``split`` column, rows are split with ``seed`` at the
    given fractions.
    """

    task_kind: str = "multiclass"
    feature_columns: tuple | None = None
    strict: bool = True
    seed: int = 0
    val_fraction: float = 0.15
    test_fraction: float = 0.15

    @property
    def label_column(self) -> str:
        return "label" if self.task_kind == "multiclass" else "labels"


CLASSES_PREFIX = "# classes:"


def _fmt(v: float) -> str:
    return repr(float(v))


def write_csv(ds: Dataset, path) -> None:
    """Write ``ds`` in the loadable CSV layout; class order goes in a leading comment."""
    label_col = "label" if ds.task_kind == "multiclass" else "labels"
    split_of = np.empty(len(ds.targets), dtype=object)
    for name, idx in ds.splits.items():
        split_of[idx] = name
    rows = [i for i in range(len(ds.targets)) if split_of[i] is not None]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(CLASSES_PREFIX + " " + ";".join(ds.class_names) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{k}" for k in range(ds.dim)] + [label_col, "split"])
        for i in rows:
            if ds.task_kind == "multiclass":
                label = ds.class_names[int(ds.targets[i])]
            else:
                label = ";".join(ds.class_names[j] for j in np.flatnonzero(ds.targets[i]))
            w.writerow([_fmt(v) for v in ds.features[i]] + [label, split_of[i]])


def load_csv(path, schema: CsvSchema | None = None) -> Dataset:
    schema = schema or CsvSchema()
    if schema.task_kind not in ("multiclass", "multilabel"):
        raise ConfigError(f"unknown task kind {schema.task_kind!r}")
    with open(path, encoding="utf-8", newline="") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    class_names: list = []
    lineno = 0
    if lines and lines[0].startswith(CLASSES_PREFIX):
        class_names = [c for c in lines[0][len(CLASSES_PREFIX):].strip().split(";") if c]
        lines = lines[1:]
        lineno = 1
    if not lines:
        raise LoadError("missing header row", lineno + 1)
    reader = csv.reader(lines)
    header = next(reader)
    header_line = lineno + 1
    col = {name: k for k, name in enumerate(header)}
    if schema.feature_columns is None:
        feat_cols = [h for h in header if h.startswith("f") and h[1:].isdigit()]
    else:
        feat_cols = list(schema.feature_columns)
    missing = [c for c in feat_cols + [schema.label_column] if c not in col]
    if missing or not feat_cols:
        raise LoadError(f"header lacks columns {missing or ['f0']}", header_line)
    feat_idx = [col[c] for c in feat_cols]
    label_idx = col[schema.label_column]
    split_idx = col.get("split")

    fixed_names = bool(class_names)
    name_to_idx = {c: i for i, c in enumerate(class_names)}
    features, labels, split_names, line_of = [], [], [], []
    for offset, row in enumerate(reader):
        line = header_line + 1 + offset
        if len(row) != len(header):
            raise LoadError(f"expected {len(header)} fields, got {len(row)}", line)
        try:
            features.append([float(row[k]) for k in feat_idx])
        except ValueError as exc:
            raise LoadError(f"bad feature value ({exc})", line) from None
        cell = row[label_idx].strip()
        names = [c for c in cell.split(";")] if schema.task_kind == "multilabel" else [cell]
        if not cell or any(not c for c in names):
            raise LoadError("empty label cell", line)
        labels.append(names)
        if split_idx is not None:
            s = row[split_idx].strip()
            if s not in SPLITS:
                raise LoadError(f"unknown split {s!r}", line)
            split_names.append(s)
        line_of.append(line)

    train_names = set()
    for names, k in zip(labels, range(len(labels))):
        if split_idx is None or split_names[k] == "train":
            train_names.update(names)
    for k, names in enumerate(labels):
        for c in names:
            if c not in name_to_idx:
                if fixed_names:
                    raise LoadError(f"label {c!r} not in declared classes", line_of[k])
                name_to_idx[c] = len(class_names)
                class_names.append(c)
            if schema.strict and split_idx is not None and split_names[k] != "train" \
                    and c not in train_names:
                raise LoadError(f"label {c!r} never appears in train", line_of[k])

    n = len(class_names)
    x = np.array(features, dtype=np.float64).reshape(len(features), len(feat_cols))
    if schema.task_kind == "multiclass":
        targets = np.array([name_to_idx[names[0]] for names in labels], dtype=np.int64)
    else:
        targets = np.zeros((len(labels), n), dtype=bool)
        for k, names in enumerate(labels):
            targets[k, [name_to_idx[c] for c in names]] = True

    if split_idx is not None:
        splits = {s: np.array([i for i, v in enumerate(split_names) if v == s], dtype=np.int64)
                  for s in SPLITS}
    else:
        perm = np.random.default_rng(schema.seed).permutation(len(labels))
        n_val = int(round(schema.val_fraction * len(labels)))
        n_test = int(round(schema.test_fraction * len(labels)))
        splits = {
            "val": np.sort(perm[:n_val]),
            "test": np.sort(perm[n_val:n_val + n_test]),
            "train": np.sort(perm[n_val + n_test:]),
        }
    return Dataset(x, targets, splits, n, schema.task_kind, class_names)


# --- imbalance -------------------------------------------------------------

def major_classes(ds: Dataset) -> list:
    """Classes whose train count exceeds the median class count."""
    counts = ds.class_counts("train")
    return [int(c) for c in np.flatnonzero(counts > np.median(counts))]


def setting2_counts(ds: Dataset, minor_count: int, ratio: float, major=None) -> dict:
    """Per-class targets for the fixed-minor setting: majors get ``ratio * minor_count``."""
    major = major_classes(ds) if major is None else list(major)
    return {c: int(round(ratio * minor_count)) if c in major else int(minor_count)
            for c in range(ds.n_classes)}


def resample_imbalance(ds: Dataset, mode: str, counts: dict, seed: int = 0, major=None) -> Dataset:
    """Subsample train-split classes to the requested counts; val/test untouched.

    ``keep-major-shrink-minor`` may only shrink minor classes (majors are the
    classes above the median train count unless ``major`` is given);
    ``fix-minor-grow-major`` needs a count for every class.
    """
    if ds.task_kind != "multiclass":
        raise ContractError("imbalance resampling is defined for multi-class data")
    major = major_classes(ds) if major is None else [int(c) for c in major]
    counts = {int(c): int(v) for c, v in counts.items()}
    if mode == SETTING_1:
        touched = [c for c in counts if c in major]
        if touched:
            raise ContractError(f"{SETTING_1} leaves major classes {touched} untouched")
    elif mode == SETTING_2:
        if sorted(counts) != list(range(ds.n_classes)):
            raise ContractError(f"{SETTING_2} needs a count for every class")
    else:
        raise ConfigError(f"unknown resampling mode {mode!r}")

    rng = np.random.default_rng(seed)
    train = ds.splits["train"]
    keep = []
    for c in range(ds.n_classes):
        members = train[ds.targets[train] == c]
        want = counts.get(c, members.size)
        if want < 0 or want > members.size:
            raise ContractError(f"class {c}: requested {want}, only {members.size} available")
        if want == members.size:
            keep.append(members)
        else:
            keep.append(rng.choice(members, size=want, replace=False))
    splits = dict(ds.splits)
    splits["train"] = np.sort(np.concatenate(keep)).astype(np.int64)
    return replace(ds, splits=splits)


def subset_train(ds: Dataset, train_indices) -> Dataset:
    splits = dict(ds.splits)
    splits["train"] = np.sort(np.asarray(list(train_indices), dtype=np.int64))
    return replace(ds, splits=splits)
