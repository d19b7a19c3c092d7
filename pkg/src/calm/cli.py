"""Operator commands.

    calm gen-data  --config C --out DIR [--force]
    calm train     --config C [--out DIR]
    calm eval      --checkpoint DIR --split S [--anchor-report K]
    calm gradcheck --config C
    calm ablate    --config C [--out DIR]

Exit codes: 0 ok, 2 config error, 3 I/O error, 4 numeric failure,
5 gradient check above threshold.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from . import tensor as T
from .anchors import AnchorSet, Temperature, anchor_probabilities
from .config import load_config
from .cvae import CvaeNoise, CvaeParams
from .data_io import SyntheticConfig, generate_synthetic, load_corpus
from .errors import CalmError, ConfigError, NumericError, StoreFormatError
from .evaluate import top_anchor_report
from .objective import Batch, LossConfig, LossMode, Model, total_loss
from .rng import RngHub
from .trainer import evaluate_split, load_checkpoint, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_GRADCHECK = 5

ABLATION_MODES = ["BASELINE", "KL_DIV", "CROSS_ENTROPY", "MSE", "CALM"]


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _emit(doc: dict) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args: argparse.Namespace) -> int:
    resolved = load_config(args.config)
    syn = resolved["synthetic"]
    cfg = SyntheticConfig(
        n_classes=syn["n_classes"],
        samples_per_class=syn["samples_per_class"],
        dim=syn["dim"],
        frames=syn["frames"],
        video_noise=syn["video_noise"],
        text_noise=syn["text_noise"],
        imbalance_keep=syn["imbalance_keep"],
        sample_spread=syn["sample_spread"],
        split_fractions=tuple(syn["split_fractions"]),
    )
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise OSError(f"output directory {out} is not empty (use --force to overwrite)")
    manifest = generate_synthetic(cfg, resolved["seed"], out)
    files = sorted(p for p in out.iterdir() if p.is_file())
    _emit({
        "manifest": str(manifest),
        "seed": resolved["seed"],
        "checksums": {p.name: _sha256(p) for p in files},
    })
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    resolved = load_config(args.config)
    if args.out:
        resolved["out_dir"] = args.out
    result = train(resolved)
    _emit({
        "initial_loss": result.initial_loss,
        "final_loss": result.final_loss,
        "steps": result.steps,
        "epochs": result.epochs_run,
        "best_metrics": result.best_metrics,
        "log": str(result.log_path),
        "checkpoint_best": str(result.best_checkpoint),
    })
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    manifest = meta["config"]["data"]["manifest"]
    if manifest is None:
        raise ConfigError("checkpoint config has no data.manifest to evaluate")
    corpus = load_corpus(manifest)
    metrics = evaluate_split(corpus, args.split)
    out: dict = dict(metrics)
    if args.anchor_report:
        k = args.anchor_report
        temp = model.temperature
        idx = corpus.split_indices(args.split)[:5]
        reports = []
        for i in idx:
            probs = anchor_probabilities(T.const(corpus.texts[i]), model.anchors, temp)
            reports.append({
                "id": corpus.manifest.ids[i],
                "top_anchors": top_anchor_report(probs.data, model.anchors.labels, k),
            })
        out["anchor_report"] = reports
    _emit(out)
    return EXIT_OK


def build_gradcheck_problem(resolved: dict):
    """Tiny randomized end-to-end loss with frozen noise, for checking.

    Runs the unblocked-target variant of the loss: a stop-gradient on the
    reconstruction target is invisible to central differences, so checking
    the blocked variant would be ill-posed. The unblocked loss exercises
    every backward rule the blocked one uses, plus the target path.
    """
    gc = resolved["gradcheck"]
    hub = RngHub(resolved["seed"])
    r = hub.stream("gradcheck")
    b, t, d_feat = gc["batch"], gc["frames"], gc["feature_dim"]
    k, h, d_lat = gc["n_anchors"], gc["hidden"], gc["latent"]

    frames = T.tensor(r.standard_normal((b * t, d_feat)), requires_grad=True)
    texts = T.tensor(r.standard_normal((b, d_feat)), requires_grad=True)
    anchors = AnchorSet(
        base=T.const(r.standard_normal((k, d_feat))),
        offsets=T.tensor(0.01 * r.standard_normal((k, d_feat)), requires_grad=True),
        labels=[f"anchor_{i}" for i in range(k)],
    )
    temp = Temperature.trainable(resolved["model"]["tau"])
    cvae = CvaeParams.init(k, h, d_lat, r)
    model = Model(anchors=anchors, temperature=temp, cvae=cvae,
                  dropout=resolved["model"]["dropout"])
    noise = CvaeNoise.sample(b, cvae, r, rng_drop=r, dropout=model.dropout)
    loss_cfg = LossConfig(
        alpha=resolved["loss"]["alpha"],
        mode=LossMode.CALM,
        task_temperature=gc["task_temperature"],
        block_target_grad=False,
    )
    batch = Batch(frames=frames, texts=texts, frames_per_clip=t)

    def f():
        loss, _ = total_loss(batch, model, loss_cfg, noise)
        return loss

    params = dict(model.trainable())
    params["frames"] = frames
    params["texts"] = texts
    return f, params


def cmd_gradcheck(args: argparse.Namespace) -> int:
    resolved = load_config(args.config)
    gc = resolved["gradcheck"]
    f, params = build_gradcheck_problem(resolved)
    report = T.finite_diff_check(f, params, h=gc["step"])
    worst = float(report.pop("__max__"))
    _emit({
        "per_parameter_max_rel_error": {k: float(v) for k, v in report.items()},
        "max_rel_error": worst,
        "threshold": gc["threshold"],
        "ok": bool(worst <= gc["threshold"]),
    })
    return EXIT_OK if worst <= gc["threshold"] else EXIT_GRADCHECK


def cmd_ablate(args: argparse.Namespace) -> int:
    resolved = load_config(args.config)
    out_dir = Path(args.out) if args.out else Path(resolved["out_dir"])
    manifest = resolved["data"]["manifest"]
    if manifest is None:
        raise ConfigError("ablate requires data.manifest (run gen-data first)")
    man_path = Path(manifest)
    data_dir = man_path.parent
    data_files = sorted(p for p in data_dir.iterdir() if p.is_file())
    data_checksum = hashlib.sha256(
        b"".join(_sha256(p).encode() for p in data_files)
    ).hexdigest()

    rows = []
    for mode in ABLATION_MODES:
        run_cfg = json.loads(json.dumps(resolved))  # deep copy
        run_cfg["loss"]["mode"] = mode
        run_cfg["out_dir"] = str(out_dir / f"mode_{mode}")
        result = train(run_cfg)
        rows.append({
            "mode": mode,
            "r1": result.best_metrics["r1"],
            "r5": result.best_metrics["r5"],
            "r10": result.best_metrics["r10"],
            "mnr": result.best_metrics["mnr"],
            "initial_loss": result.initial_loss,
            "final_loss": result.final_loss,
            "data_checksum": data_checksum,
            "seed": resolved["seed"],
        })

    table = {
        "rows": rows,
        "note": "alignment-term ablation; discriminative variants are applied unweighted",
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "ablation.json").write_text(json.dumps(table, indent=2, sort_keys=True) + "\n")
    _emit(table)

    header = f"{'mode':<14}{'R@1':>8}{'R@5':>8}{'R@10':>8}{'MnR':>8}{'loss0':>10}{'lossN':>10}"
    print(header)
    print("-" * len(header))
    for row in rows:
        print(
            f"{row['mode']:<14}{row['r1']:>8.1f}{row['r5']:>8.1f}{row['r10']:>8.1f}"
            f"{row['mnr']:>8.2f}{row['initial_loss']:>10.4f}{row['final_loss']:>10.4f}"
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="calm", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic paired corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train and evaluate per epoch")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="retrieval metrics for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--anchor-report", type=int, default=0, metavar="K")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full loss")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("ablate", help="run all alignment-loss modes on shared data")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, StoreFormatError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CalmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
