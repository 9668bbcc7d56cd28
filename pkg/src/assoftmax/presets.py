"""Named synthetic workloads used by the experiment commands.

Each preset fixes the data generator and the optimizer; the seed is filled in
per run. The values were chosen on validation behaviour of seeded runs:

* ``separable``: well-separated clusters with light label noise.
* ``hard``: overlapping clusters in a dimension high enough for the linear
  model to start fitting noise within a few epochs.
* ``noisy``: heavy label noise with more features than training samples, so
  a linear model can memorise clean labels long before noisy ones.
"""
from __future__ import annotations

from dataclasses import replace

from assoftmax.datasets import SynthSpec
from assoftmax.errors import ConfigError
from assoftmax.trainer import OptimizerConfig

PRESETS = {
    "separable": (
        SynthSpec(n_classes=5, dim=10, samples_per_class=200, separation=6.0, label_noise_rate=0.1),
        OptimizerConfig(learning_rate=1e-2, epochs=10, batch_size=32),
    ),
    "hard": (
        SynthSpec(n_classes=5, dim=150, samples_per_class=500, separation=1.5, label_noise_rate=0.2,
                  val_fraction=0.25, test_fraction=0.25),
        OptimizerConfig(learning_rate=3e-3, epochs=15, batch_size=32),
    ),
    "noisy": (
        SynthSpec(n_classes=5, dim=200, samples_per_class=200, separation=3.0, label_noise_rate=0.3,
                  test_fraction=0.3),
        OptimizerConfig(learning_rate=1e-2, epochs=30, batch_size=32),
    ),
}


def preset(name: str, seed: int = 0) -> tuple[SynthSpec, OptimizerConfig]:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    spec, opt = PRESETS[name]
    return replace(spec, seed=seed), replace(opt, seed=seed)
