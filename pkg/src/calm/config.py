"""Run configuration: one strict JSON document for every command.

Unknown keys are rejected with their full path, and loading materializes
every default so the run header always contains the complete effective
configuration. The environment variable CALM_SEED overrides the seed (the
override is recorded in the resolved document, so re-running from a saved
header reproduces the run without the variable).
"""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path
from typing import Any

from .errors import ConfigError

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "seed_note": None,
    "out_dir": "runs/run0",
    "data": {
        "manifest": None,
    },
    "synthetic": {
        "n_classes": 8,
        "samples_per_class": 32,
        "dim": 16,
        "frames": 4,
        "video_noise": 0.2,
        "text_noise": 0.2,
        "imbalance_keep": 4,
        "sample_spread": 0.3,
        "split_fractions": [0.75, 0.125, 0.125],
    },
    "model": {
        "latent_dim": 256,
        "hidden_dim": 128,
        "tau": 5.0,
        "tau_learnable": False,
        "dropout": 0.1,
    },
    "loss": {
        "alpha": 0.1,
        "mode": "CALM",
        "task_temperature": 1.0 / 0.07,
        "block_target_grad": True,
    },
    "optim": {
        "lr": 1e-4,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "weight_decay": 0.01,
        "batch_size": 32,
        "epochs": 5,
        "max_steps": None,
    },
    "gradcheck": {
        "n_anchors": 5,
        "latent": 3,
        "hidden": 4,
        "batch": 4,
        "feature_dim": 6,
        "frames": 2,
        "task_temperature": 5.0,
        "step": 1e-5,
        "threshold": 1e-4,
    },
}

# keys whose value may be null / replaced wholesale rather than merged
_NULLABLE = {"data.manifest", "optim.max_steps", "seed_note"}
_LIST_KEYS = {"synthetic.split_fractions"}


def _merge(defaults: dict, user: dict, path: str) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        here = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key '{here}'")
        base = defaults[key]
        if isinstance(base, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"'{here}' must be an object")
            out[key] = _merge(base, value, here)
        else:
            if here in _LIST_KEYS:
                if not isinstance(value, (list, tuple)) or len(value) != len(base):
                    raise ConfigError(f"'{here}' must be a list of {len(base)} numbers")
                out[key] = [float(v) for v in value]
            elif value is None:
                if here not in _NULLABLE and base is not None:
                    raise ConfigError(f"'{here}' may not be null")
                out[key] = None
            elif isinstance(base, bool):
                if not isinstance(value, bool):
                    raise ConfigError(f"'{here}' must be a boolean")
                out[key] = value
            elif isinstance(base, int) and not isinstance(base, bool):
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(f"'{here}' must be a number")
                if isinstance(value, float) and not value.is_integer():
                    raise ConfigError(f"'{here}' must be an integer")
                out[key] = int(value)
            elif isinstance(base, float):
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(f"'{here}' must be a number")
                out[key] = float(value)
            elif isinstance(base, str) or base is None:
                out[key] = value
            else:
                out[key] = value
    return out


def resolve_config(user_doc: dict) -> dict:
    """Validate a user document against the schema and fill in defaults."""
    if not isinstance(user_doc, dict):
        raise ConfigError("config root must be a JSON object")
    resolved = _merge(DEFAULTS, user_doc, "")
    steps = resolved["optim"]["max_steps"]
    if steps is not None:
        if isinstance(steps, bool) or not isinstance(steps, (int, float)) or int(steps) != steps or steps < 0:
            raise ConfigError(f"'optim.max_steps' must be a nonnegative integer or null, got {steps!r}")
        resolved["optim"]["max_steps"] = int(steps)
    manifest = resolved["data"]["manifest"]
    if manifest is not None and not isinstance(manifest, str):
        raise ConfigError(f"'data.manifest' must be a path string or null, got {manifest!r}")
    env_seed = os.environ.get("CALM_SEED")
    if env_seed is not None:
        try:
            resolved["seed"] = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"CALM_SEED must be an integer, got '{env_seed}'") from exc
        resolved["seed_note"] = "env:CALM_SEED"
    return resolved


def load_config(path: str | Path) -> dict:
    p = Path(path)
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON: {exc}") from exc
    return resolve_config(doc)


def dump_config(resolved: dict) -> str:
    return json.dumps(resolved, indent=2, sort_keys=True) + "\n"
