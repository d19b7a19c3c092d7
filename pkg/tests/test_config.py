import json
from pathlib import Path

import pytest

from calm.config import DEFAULTS, load_config, resolve_config
from calm.errors import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_defaults_materialized():
    resolved = resolve_config({})
    assert resolved["model"]["latent_dim"] == 256
    assert resolved["model"]["hidden_dim"] == 128
    assert resolved["model"]["tau"] == 5.0
    assert resolved["loss"]["alpha"] == 0.1
    assert resolved["optim"]["lr"] == 1e-4
    assert resolved["optim"]["batch_size"] == 32
    assert resolved["optim"]["epochs"] == 5
    assert resolved["synthetic"]["imbalance_keep"] == 4


def test_unknown_key_rejected_with_path():
    with pytest.raises(ConfigError, match="model.tua"):
        resolve_config({"model": {"tua": 3.0}})
    with pytest.raises(ConfigError, match="'bogus'"):
        resolve_config({"bogus": 1})


def test_type_errors():
    with pytest.raises(ConfigError, match="loss.alpha"):
        resolve_config({"loss": {"alpha": "high"}})
    with pytest.raises(ConfigError, match="tau_learnable"):
        resolve_config({"model": {"tau_learnable": "yes"}})
    with pytest.raises(ConfigError, match="batch_size"):
        resolve_config({"optim": {"batch_size": 8.5}})
    with pytest.raises(ConfigError, match="max_steps"):
        resolve_config({"optim": {"max_steps": "many"}})
    with pytest.raises(ConfigError, match="data.manifest"):
        resolve_config({"data": {"manifest": 42}})


def test_nullable_fields():
    resolved = resolve_config({"optim": {"max_steps": None}, "data": {"manifest": None}})
    assert resolved["optim"]["max_steps"] is None
    assert resolved["data"]["manifest"] is None
    with pytest.raises(ConfigError, match="may not be null"):
        resolve_config({"model": {"tau": None}})


def test_resolved_document_is_itself_valid():
    resolved = resolve_config({"seed": 9, "optim": {"max_steps": 100}})
    again = resolve_config(json.loads(json.dumps(resolved)))
    assert again == resolved


def test_env_seed_override(monkeypatch, tmp_path):
    monkeypatch.setenv("CALM_SEED", "123")
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 5}))
    resolved = load_config(p)
    assert resolved["seed"] == 123
    assert resolved["seed_note"] == "env:CALM_SEED"
    monkeypatch.setenv("CALM_SEED", "not-a-number")
    with pytest.raises(ConfigError, match="CALM_SEED"):
        load_config(p)


def test_shipped_configs_are_valid():
    for name in ("synthetic-easy", "synthetic-imbalance", "gradcheck-desk"):
        resolved = load_config(CONFIGS / f"{name}.json")
        assert set(resolved) == set(DEFAULTS)
