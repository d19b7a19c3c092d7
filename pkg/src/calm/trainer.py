"""Seeded training loop with end-of-epoch evaluation and checkpoints.

Determinism contract: a fixed (seed, config, input files) triple produces
byte-identical metrics logs and checkpoints. Randomness is split into
named substreams (init / shuffle / eps / dropout) so toggling one consumer
cannot perturb the others. Retrieval is always scored on cosine between
pooled video features and text features; the anchor head shapes training
only, so evaluation stays exactly as cheap as the baseline's.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .anchors import AnchorSet, Temperature
from .cvae import CvaeNoise, CvaeParams
from .data_io import Corpus, load_corpus, read_store, write_store
from .errors import ConfigError, NumericError
from .evaluate import SimilarityMatrix, retrieval_metrics
from .objective import Batch, LossConfig, LossMode, Model, total_loss
from .optim import AdamWState, OptimConfig, adamw_step
from .rng import RngHub
from .tensor import Tensor


def _json_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n"


def build_model(resolved: dict, corpus: Corpus, rng_init: np.random.Generator) -> Model:
    if corpus.anchors is None:
        raise ConfigError("training requires an anchor store in the manifest")
    labels = corpus.manifest.labels
    if labels is None:
        labels = [f"anchor_{i:03d}" for i in range(corpus.anchors.shape[0])]
    anchors = AnchorSet.from_matrix(corpus.anchors, labels)
    mc = resolved["model"]
    temp = (
        Temperature.trainable(mc["tau"]) if mc["tau_learnable"] else Temperature.fixed(mc["tau"])
    )
    cvae = CvaeParams.init(anchors.count, mc["hidden_dim"], mc["latent_dim"], rng_init)
    return Model(anchors=anchors, temperature=temp, cvae=cvae, dropout=mc["dropout"])


def trainable_for_mode(model: Model, mode: LossMode) -> dict[str, Tensor]:
    """Parameters that actually receive gradients under the given mode."""
    if mode is LossMode.BASELINE:
        return {}
    params: dict[str, Tensor] = {"anchor_offsets": model.anchors.offsets}
    if model.temperature.learnable:
        params["temperature"] = model.temperature.value
    if mode is LossMode.CALM:
        params.update(model.cvae.named())
    return params


def evaluate_split(corpus: Corpus, split: str) -> dict:
    """Text->video retrieval on one split: cosine(text, pooled frames)."""
    idx = corpus.split_indices(split)
    t = corpus.frames_per_video
    fused = corpus.frames_of(idx).reshape(len(idx), t, -1).mean(axis=1)
    texts = corpus.texts[idx]
    tn = texts / np.linalg.norm(texts, axis=1, keepdims=True)
    vn = fused / np.linalg.norm(fused, axis=1, keepdims=True)
    sim = SimilarityMatrix(scores=tn @ vn.T, ground_truth=np.arange(len(idx)))
    return retrieval_metrics(sim)


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

def save_checkpoint(
    dir_path: str | Path,
    model: Model,
    resolved: dict,
    step: int,
    epoch: int,
    history: list[dict],
) -> None:
    out = Path(dir_path)
    (out / "tensors").mkdir(parents=True, exist_ok=True)
    shapes: dict[str, list[int]] = {}
    trainable_flags: dict[str, bool] = {}
    for name, tens in model.all_tensors().items():
        arr = tens.data
        shapes[name] = list(arr.shape)
        trainable_flags[name] = tens.requires_grad
        write_store(out / "tensors" / f"{name}.calm", arr.reshape(1, -1) if arr.ndim != 2 else arr)
    meta = {
        "config": resolved,
        "step": step,
        "epoch": epoch,
        "metric_history": history,
        "param_shapes": shapes,
        "param_trainable": trainable_flags,
        "anchor_labels": model.anchors.labels,
        "init_scheme": "uniform fan-in weights, zero biases and offsets",
    }
    (out / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_checkpoint(dir_path: str | Path) -> tuple[Model, dict]:
    out = Path(dir_path)
    meta = json.loads((out / "metadata.json").read_text())
    tensors: dict[str, np.ndarray] = {}
    for name, shape in meta["param_shapes"].items():
        flat = read_store(out / "tensors" / f"{name}.calm")
        tensors[name] = flat.reshape(shape)
    anchors = AnchorSet(
        base=T.const(tensors["anchor_base"]),
        offsets=T.tensor(tensors["anchor_offsets"], requires_grad=True),
        labels=list(meta["anchor_labels"]),
    )
    mc = meta["config"]["model"]
    temp = (
        Temperature.trainable(float(tensors["temperature"]))
        if mc["tau_learnable"]
        else Temperature.fixed(float(tensors["temperature"]))
    )
    k, h, d = anchors.count, mc["hidden_dim"], mc["latent_dim"]
    cvae = CvaeParams(
        enc_hidden_w=T.tensor(tensors["enc_hidden_w"], requires_grad=True),
        enc_hidden_b=T.tensor(tensors["enc_hidden_b"], requires_grad=True),
        enc_mu_w=T.tensor(tensors["enc_mu_w"], requires_grad=True),
        enc_mu_b=T.tensor(tensors["enc_mu_b"], requires_grad=True),
        enc_logvar_w=T.tensor(tensors["enc_logvar_w"], requires_grad=True),
        enc_logvar_b=T.tensor(tensors["enc_logvar_b"], requires_grad=True),
        dec_hidden_w=T.tensor(tensors["dec_hidden_w"], requires_grad=True),
        dec_hidden_b=T.tensor(tensors["dec_hidden_b"], requires_grad=True),
        dec_out_w=T.tensor(tensors["dec_out_w"], requires_grad=True),
        dec_out_b=T.tensor(tensors["dec_out_b"], requires_grad=True),
        n_anchors=k, hidden=h, latent=d,
    )
    model = Model(anchors=anchors, temperature=temp, cvae=cvae, dropout=mc["dropout"])
    return model, meta


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    initial_loss: float
    final_loss: float
    best_metrics: dict
    steps: int
    epochs_run: int
    out_dir: Path
    log_path: Path
    best_checkpoint: Path
    last_checkpoint: Path


def train(resolved: dict, base_dir: str | Path = ".") -> TrainResult:
    base = Path(base_dir)
    manifest = resolved["data"]["manifest"]
    if manifest is None:
        raise ConfigError("data.manifest is required for training")
    corpus = load_corpus(base / manifest)

    out_dir = base / resolved["out_dir"]
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.json").write_text(
        json.dumps(resolved, indent=2, sort_keys=True) + "\n"
    )

    hub = RngHub(resolved["seed"])
    r_init = hub.stream("init")
    r_shuffle = hub.stream("shuffle")
    r_eps = hub.stream("eps")
    r_drop = hub.stream("dropout")

    model = build_model(resolved, corpus, r_init)
    loss_cfg = LossConfig(
        alpha=resolved["loss"]["alpha"],
        mode=LossMode(resolved["loss"]["mode"]),
        task_temperature=resolved["loss"]["task_temperature"],
        block_target_grad=resolved["loss"]["block_target_grad"],
    )
    oc = resolved["optim"]
    opt_cfg = OptimConfig(
        lr=oc["lr"], beta1=oc["beta1"], beta2=oc["beta2"], eps=oc["eps"],
        weight_decay=oc["weight_decay"], batch_size=oc["batch_size"],
        epochs=oc["epochs"], max_steps=oc["max_steps"], seed=resolved["seed"],
    )
    params = trainable_for_mode(model, loss_cfg.mode)
    state = AdamWState()

    train_idx = corpus.split_indices("train")
    n_train = len(train_idx)
    bsz = min(opt_cfg.batch_size, n_train)
    batches_per_epoch = max(1, n_train // bsz)
    budget = opt_cfg.max_steps
    if budget is None:
        budget = opt_cfg.epochs * batches_per_epoch

    log_path = out_dir / "metrics.jsonl"
    history: list[dict] = []
    best_r1 = -1.0
    best_metrics: dict = {}
    best_dir = out_dir / "checkpoint_best"
    last_dir = out_dir / "checkpoint_last"

    initial_loss = float("nan")
    final_loss = float("nan")
    step = 0
    epoch = 0
    dim = corpus.texts.shape[1]
    t_frames = corpus.frames_per_video

    with open(log_path, "w") as log:
        def run_eval(epoch_no: int, epoch_mean: float | None) -> None:
            nonlocal best_r1, best_metrics
            metrics = evaluate_split(corpus, "val")
            record = {
                "type": "eval",
                "epoch": epoch_no,
                "step": step,
                "split": "val",
                "metrics": metrics,
                "train_loss_mean": epoch_mean,
            }
            history.append(record)
            log.write(_json_line(record))
            save_checkpoint(last_dir, model, resolved, step, epoch_no, history)
            if metrics["r1"] > best_r1:
                best_r1 = metrics["r1"]
                best_metrics = metrics
                save_checkpoint(best_dir, model, resolved, step, epoch_no, history)

        # a last-good checkpoint exists from step 0 on, so a numeric abort
        # in the first epoch still leaves usable state behind
        save_checkpoint(last_dir, model, resolved, 0, 0, [])
        if budget == 0:
            run_eval(0, None)
        while step < budget:
            perm = r_shuffle.permutation(n_train)
            epoch_losses: list[float] = []
            for b0 in range(0, batches_per_epoch * bsz, bsz):
                if step >= budget:
                    break
                chosen = train_idx[perm[b0:b0 + bsz]]
                frames = T.const(corpus.frames_of(chosen))
                texts = T.const(corpus.texts[chosen])
                batch = Batch(frames=frames, texts=texts, frames_per_clip=t_frames)
                noise = None
                if loss_cfg.mode is LossMode.CALM:
                    noise = CvaeNoise.sample(
                        len(chosen), model.cvae, r_eps,
                        rng_drop=r_drop, dropout=model.dropout,
                    )
                try:
                    loss, report = total_loss(batch, model, loss_cfg, noise)
                    value = loss.item()
                except NumericError as exc:
                    # leave the last epoch's checkpoints on disk, then abort
                    log.write(_json_line({"type": "abort", "step": step, "reason": str(exc)}))
                    raise
                if not np.isfinite(value):
                    log.write(_json_line({"type": "abort", "step": step, "reason": "non-finite loss"}))
                    raise NumericError(f"non-finite loss at step {step}")
                if step == 0:
                    initial_loss = value
                    deviations = []
                    if opt_cfg.lr != 1e-5:
                        deviations.append(f"lr={opt_cfg.lr} (full-scale reference 1e-5)")
                    if bsz != 128:
                        deviations.append(f"batch_size={bsz} (full-scale reference 128)")
                    log.write(_json_line({
                        "type": "start",
                        "initial_loss": value,
                        "loss_terms": {k: v for k, v in report.items() if k != "mode"},
                        "n_train": n_train,
                        "batch_size": bsz,
                        "budget": budget,
                        "desk_scale_deviations": deviations,
                    }))
                epoch_losses.append(value)
                for p in params.values():
                    p.zero_grad()
                T.backward(loss)
                adamw_step(params, state, opt_cfg)
                step += 1
            epoch += 1
            epoch_mean = float(np.mean(epoch_losses)) if epoch_losses else None
            if epoch_mean is not None:
                final_loss = epoch_mean
            run_eval(epoch, epoch_mean)

        log.write(_json_line({
            "type": "summary",
            "initial_loss": initial_loss,
            "final_loss": final_loss,
            "steps": step,
            "epochs": epoch,
            "best_metrics": best_metrics,
        }))

    return TrainResult(
        initial_loss=initial_loss,
        final_loss=final_loss,
        best_metrics=best_metrics,
        steps=step,
        epochs_run=epoch,
        out_dir=out_dir,
        log_path=log_path,
        best_checkpoint=best_dir,
        last_checkpoint=last_dir,
    )
