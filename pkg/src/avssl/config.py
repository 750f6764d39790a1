"""Run configuration: a flat, versioned key-value document with dotted keys.

Unknown keys are rejected so typos fail fast; values are type-coerced against
the defaults table. ``RunConfig`` is a thin mapping wrapper used everywhere in
the harness.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

CONFIG_SCHEMA_VERSION = "1"

DEFAULTS: dict[str, Any] = {
    "schema_version": CONFIG_SCHEMA_VERSION,
    "seed": 0,
    "dataset.path": "",
    # model
    "model.d_model": 64,
    "model.layers": 2,
    "model.heads": 4,
    "model.fusion_layers": 1,
    "model.patch_size": 8,
    "model.audio_patch_mels": 8,
    "model.audio_patch_steps": 10,
    # optimizer
    "optimizer.kind": "sgd",
    "optimizer.lr": 0.05,
    "optimizer.momentum": 0.9,
    "optimizer.weight_decay": 0.001,
    "optimizer.cosine": True,
    # loss weights
    "loss.gamma1": 2.0,
    "loss.gamma2": 2.0,
    "loss.gamma3": 0.2,
    "loss.temperature": 0.05,
    # pseudo-label gating
    "ssl.tau_base": 0.3,
    "ssl.threshold_mode": "flex",  # fixed | flex
    "ssl.hard_pseudo_label": True,
    # mixing
    "mix.alpha1": 5.0,
    "mix.alpha2": 10.0,
    # token mask
    "mask.type": "asl",  # asl | tube | random
    "mask.frames_per_map": 1,
    "mask.eps": 1e-3,
    # localizer
    "localizer.variant": "oracle",  # oracle | learned
    "localizer.grid": 4,
    "localizer.feat_dim": 16,
    "localizer.noise": 0.05,
    "localizer.corruption": 0.0,
    # audio features
    "audio.n_fft": 256,
    "audio.hop": 128,
    "audio.n_mels": 64,
    "audio.floor": 1e-10,
    "audio.time_crop": 60,
    # training loop
    "train.epochs": 60,
    "train.batch_labeled": 2,
    "train.ratio": 5,
    "train.precision": "float32",  # float32 | float64
    "train.ema_decay": 0.999,
    "train.ema_warmup": False,
    "train.threads": 4,
    "train.eval_every": 0,  # epochs between held-out evaluations; 0 = final only
    # evaluation views
    "eval.segments": 5,
    "eval.crops": 3,
    "eval.crop_size": 24,
}

_ALLOWED_VALUES = {
    "ssl.threshold_mode": {"fixed", "flex"},
    "mask.type": {"asl", "tube", "random"},
    "mask.frames_per_map": {1, 2, 4, 8},
    "localizer.variant": {"oracle", "learned"},
    "train.precision": {"float32", "float64"},
    "optimizer.kind": {"sgd"},
}


class ConfigError(ValueError):
    """Bad key, value, or schema version in a run configuration."""


def _coerce(key: str, value: Any) -> Any:
    default = DEFAULTS[key]
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str):
            if value.lower() in ("true", "1", "yes"):
                return True
            if value.lower() in ("false", "0", "no"):
                return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if isinstance(default, int) and not isinstance(default, bool):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return str(value)


class RunConfig:
    """Validated flat configuration; read with item access, e.g.
    ``cfg["optimizer.lr"]``."""

    def __init__(self, overrides: dict[str, Any] | None = None):
        self._values = dict(DEFAULTS)
        for key, value in (overrides or {}).items():
            self.set(key, value)

    def set(self, key: str, value: Any) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        if key == "schema_version":
            if str(value).split(".")[0] != CONFIG_SCHEMA_VERSION:
                raise ConfigError(f"unsupported config schema version {value!r}")
            return
        coerced = _coerce(key, value)
        allowed = _ALLOWED_VALUES.get(key)
        if allowed is not None and coerced not in allowed:
            raise ConfigError(f"{key}: {coerced!r} not in {sorted(map(str, allowed))}")
        self._values[key] = coerced

    def __getitem__(self, key: str) -> Any:
        return self._values[key]

    def updated(self, overrides: dict[str, Any]) -> "RunConfig":
        merged = dict(self._values)
        merged.update(overrides)
        return RunConfig(merged)

    def to_dict(self) -> dict[str, Any]:
        return dict(self._values)

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self._values, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        with open(path) as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a flat JSON object")
        return cls(data)
