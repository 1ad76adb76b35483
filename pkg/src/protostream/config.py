"""Run configuration: JSON schema, defaults, validation, seed splitting.

A config file may set any subset of the keys below; everything else takes
the default. Unknown keys are rejected by name. Command-line flags override
file values. Every command writes the fully resolved config next to its
outputs so a run can be reproduced bitwise from the snapshot alone.
"""

from __future__ import annotations

import copy
import json

import numpy as np

from .core import EngineError
from .data import SynthConfig
from .memory import UpdateParams
from .offline import OfflineConfig
from .online import DecisionConfig, TtaConfig


class ConfigError(EngineError):
    pass


DEFAULTS: dict = {
    "seed": 0,
    "synth": {
        "d": 64,
        "n_known": 10,
        "n_novel": 5,
        "samples_per_class": 100,
        "noise_sigma": 0.15,
        "min_class_angle": 0.5,
        "labeled_fraction": 0.5,
    },
    "offline": {
        "lam": 1.0,
        "tau_con": 0.07,
        "scale": 30.0,
        "margin": 0.2,
        "learning_rate": 0.05,
        "epochs": 30,
        "batch_size": 128,
        "view_noise_sigma": 0.05,
    },
    "decision": {
        "tau_sim": 0.7,
    },
    "tta": {
        "temperature": 0.1,
        "beta1": 1.0,
        "beta2": 1.0,
        "gamma": 1e-4,
        "steps_per_batch": 1,
    },
    "update": {
        "eta_known": 0.06,
        "kappa_known": 32.0,
        "eta_novel": 0.3,
        "kappa_novel": 8.0,
    },
    "stream": {
        "batch_size": 64,
        "order_policy": "shuffled",
    },
    "ablation": {
        "enable_mlc": True,
        "enable_tta_p": True,
        "enable_tta_m": True,
    },
}

# fixed subsystem order for deterministic seed splitting
_SUBSYSTEMS = ("synth", "train", "order", "gradcheck")


def subsystem_seed(root_seed: int, subsystem: str) -> int:
    """Deterministic child seed for one subsystem from the top-level seed."""
    state = np.random.SeedSequence(root_seed).generate_state(len(_SUBSYSTEMS))
    return int(state[_SUBSYSTEMS.index(subsystem)])


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be a section")
            out[key] = _merge(base[key], value, where)
        else:
            expected = type(base[key])
            if expected is float and isinstance(value, int):
                value = float(value)
            if not isinstance(value, expected) or (expected is not bool and isinstance(value, bool)):
                raise ConfigError(
                    f"config key {where!r} expects {expected.__name__}, got {type(value).__name__}")
            out[key] = value
    return out


def resolve(file_path=None, overrides: dict | None = None) -> dict:
    """Load (optional) JSON config, apply overrides, return the resolved dict."""
    resolved = copy.deepcopy(DEFAULTS)
    if file_path is not None:
        with open(file_path) as f:
            try:
                loaded = json.load(f)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{file_path}: invalid JSON ({exc})") from None
        resolved = _merge(resolved, loaded)
    if overrides:
        resolved = _merge(resolved, overrides)
    return resolved


def write_snapshot(path, resolved: dict) -> None:
    with open(path, "w") as f:
        json.dump(resolved, f, indent=2, sort_keys=True)
        f.write("\n")


class ConfigBundle:
    """Typed views over a resolved config dict."""

    def __init__(self, resolved: dict):
        self.resolved = resolved
        self.seed = resolved["seed"]

    def synth(self) -> SynthConfig:
        return SynthConfig(seed=subsystem_seed(self.seed, "synth"), **self.resolved["synth"])

    def offline(self) -> OfflineConfig:
        return OfflineConfig(
            seed=subsystem_seed(self.seed, "train"),
            margin_enabled=self.resolved["ablation"]["enable_mlc"],
            **self.resolved["offline"],
        )

    def decision(self) -> DecisionConfig:
        return DecisionConfig(**self.resolved["decision"])

    def tta(self) -> TtaConfig:
        return TtaConfig(**self.resolved["tta"])

    def update_params(self) -> UpdateParams:
        return UpdateParams(**self.resolved["update"])

    @property
    def stream_batch_size(self) -> int:
        return self.resolved["stream"]["batch_size"]

    @property
    def order_policy(self) -> str:
        return self.resolved["stream"]["order_policy"]

    @property
    def enable_tta_p(self) -> bool:
        return self.resolved["ablation"]["enable_tta_p"]

    @property
    def enable_tta_m(self) -> bool:
        return self.resolved["ablation"]["enable_tta_m"]
