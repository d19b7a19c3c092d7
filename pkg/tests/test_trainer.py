import json
from pathlib import Path

import numpy as np
import pytest

from calm.config import resolve_config
from calm.data_io import SyntheticConfig, generate_synthetic, read_store
from calm.errors import NumericError
from calm.trainer import load_checkpoint, train


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    cfg = SyntheticConfig(n_classes=4, samples_per_class=8, dim=8, frames=2, imbalance_keep=4)
    return generate_synthetic(cfg, 0, root)


def _resolved(manifest, out_dir, **overrides):
    doc = {
        "seed": 0,
        "out_dir": str(out_dir),
        "data": {"manifest": str(manifest)},
        "model": {"latent_dim": 4, "hidden_dim": 8, "tau": 8.0},
        "optim": {"lr": 1e-3, "batch_size": 8, "max_steps": 30},
    }
    for key, val in overrides.items():
        section, _, field = key.partition(".")
        if field:
            doc.setdefault(section, {})[field] = val
        else:
            doc[section] = val
    return resolve_config(doc)


def _tree_bytes(root: Path) -> dict[str, bytes]:
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


def test_two_identical_runs_are_byte_identical(small_corpus, tmp_path):
    cfg = _resolved(small_corpus, "run")
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    a = train(cfg, base_dir=tmp_path / "a")
    b = train(cfg, base_dir=tmp_path / "b")
    assert a.log_path.read_bytes() == b.log_path.read_bytes()
    ta = _tree_bytes(a.best_checkpoint)
    tb = _tree_bytes(b.best_checkpoint)
    assert ta.keys() == tb.keys()
    for name in ta:
        assert ta[name] == tb[name], name
    assert a.initial_loss == b.initial_loss
    assert a.final_loss == b.final_loss


def test_loss_decreases_and_no_nans(small_corpus, tmp_path):
    res = train(_resolved(small_corpus, tmp_path / "run", **{"optim.max_steps": 200}))
    assert np.isfinite(res.initial_loss) and np.isfinite(res.final_loss)
    assert res.final_loss < res.initial_loss
    for line in res.log_path.read_text().splitlines():
        rec = json.loads(line)
        if rec.get("train_loss_mean") is not None:
            assert np.isfinite(rec["train_loss_mean"])


def test_epochs_zero_is_eval_only(small_corpus, tmp_path):
    res = train(
        _resolved(small_corpus, tmp_path / "run", **{"optim.max_steps": None, "optim.epochs": 0})
    )
    assert res.steps == 0
    model, meta = load_checkpoint(res.best_checkpoint)
    assert meta["step"] == 0
    # untrained offsets are exactly the zero initialization
    assert (model.anchors.offsets.data == 0.0).all()
    assert res.best_metrics["n_queries"] > 0


def test_only_trainable_params_change(small_corpus, tmp_path):
    res = train(_resolved(small_corpus, tmp_path / "run"))
    base_init = read_store(Path(res.best_checkpoint) / "tensors" / "anchor_base.calm")
    base_last = read_store(Path(res.last_checkpoint) / "tensors" / "anchor_base.calm")
    assert np.array_equal(base_init, base_last)
    off_last = read_store(Path(res.last_checkpoint) / "tensors" / "anchor_offsets.calm")
    assert np.abs(off_last).max() > 0.0
    meta = json.loads((Path(res.last_checkpoint) / "metadata.json").read_text())
    assert meta["param_trainable"]["anchor_base"] is False
    assert meta["param_trainable"]["anchor_offsets"] is True


def test_baseline_mode_trains_nothing(small_corpus, tmp_path):
    res = train(
        _resolved(small_corpus, tmp_path / "run", **{"loss.mode": "BASELINE"})
    )
    off = read_store(Path(res.last_checkpoint) / "tensors" / "anchor_offsets.calm")
    assert (off == 0.0).all()
    enc = read_store(Path(res.last_checkpoint) / "tensors" / "enc_hidden_w.calm")
    model, _ = load_checkpoint(res.best_checkpoint)
    assert np.array_equal(enc.reshape(model.cvae.enc_hidden_w.shape), model.cvae.enc_hidden_w.data)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_loss_aborts_and_keeps_checkpoint(small_corpus, tmp_path):
    cfg = _resolved(
        small_corpus, tmp_path / "run",
        **{"optim.lr": 1e8, "optim.max_steps": 40},
    )
    with pytest.raises(NumericError):
        train(cfg)
    log = (tmp_path / "run" / "metrics.jsonl").read_text().splitlines()
    assert any(json.loads(l)["type"] == "abort" for l in log)
    # at least the first epoch's checkpoints were retained
    assert (tmp_path / "run" / "checkpoint_last" / "metadata.json").exists()


def test_checkpoint_round_trip_restores_tensors(small_corpus, tmp_path):
    res = train(_resolved(small_corpus, tmp_path / "run"))
    model, meta = load_checkpoint(res.best_checkpoint)
    assert model.anchors.count == 4
    assert model.cvae.latent == 4
    assert meta["config"]["model"]["hidden_dim"] == 8
    # reload is idempotent: saving again must produce identical bytes
    from calm.trainer import save_checkpoint

    save_checkpoint(tmp_path / "again", model, meta["config"], meta["step"],
                    meta["epoch"], meta["metric_history"])
    orig = _tree_bytes(Path(res.best_checkpoint))
    again = _tree_bytes(tmp_path / "again")
    assert orig == again


def test_shipped_configs_train_clean(tmp_path):
    # every shipped config must produce a finite loss trajectory
    configs = Path(__file__).resolve().parents[1] / "configs"
    for name in ("synthetic-easy", "synthetic-imbalance"):
        doc = json.loads((configs / f"{name}.json").read_text())
        syn = dict(doc.get("synthetic", {}))
        cfg = SyntheticConfig(
            n_classes=syn.get("n_classes", 8),
            samples_per_class=syn.get("samples_per_class", 32),
            dim=syn.get("dim", 16),
            frames=syn.get("frames", 4),
            video_noise=syn.get("video_noise", 0.2),
            text_noise=syn.get("text_noise", 0.2),
            imbalance_keep=syn.get("imbalance_keep", 4),
        )
        data = tmp_path / name / "data"
        man = generate_synthetic(cfg, doc.get("seed", 0), data)
        doc["data"] = {"manifest": str(man)}
        doc["out_dir"] = str(tmp_path / name / "run")
        doc["optim"]["max_steps"] = 60  # trimmed for test runtime
        resolved = resolve_config(doc)
        res = train(resolved)
        assert np.isfinite(res.initial_loss) and np.isfinite(res.final_loss)
