"""Command-line entry points.

Subcommands:
  gen-data  -- write a synthetic dataset (annotations JSONL + FPK1 features)
  train     -- train a model, writing checkpoints, a metric log, and a manifest
  eval      -- compute the metrics report for a checkpoint on a dataset
  predict   -- emit prediction JSONL (optionally with per-sample SVG plots)

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
Every run directory receives exactly one manifest.json capturing the config
snapshot, seed, input content hash, and output paths.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .data import (
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    write_dataset,
    write_predictions,
)
from .errors import ConfigError, DataError, NumericError
from .metrics import MetricsReport
from .model import MomentHighlightModel
from .spans import clamp_valid
from .trainer import (
    TrainConfig,
    Trainer,
    evaluate_model,
    load_checkpoint,
    predict_sample,
    read_checkpoint_manifest,
    save_checkpoint,
)


def _dataset_hash(data_dir: Path) -> str:
    digest = hashlib.sha256()
    for path in sorted(data_dir.rglob("*")):
        if path.is_file():
            digest.update(path.name.encode())
            digest.update(path.read_bytes())
    return digest.hexdigest()


def _prepare_out_dir(out: Path, force: bool) -> None:
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError(f"output directory {out} is not empty (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)


def _write_manifest(out: Path, payload: dict) -> None:
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    if args.spec:
        with open(args.spec, "r", encoding="utf-8") as fh:
            spec = SyntheticSpec.from_dict(json.load(fh))
    else:
        spec = SyntheticSpec(seed=args.seed)
    out = Path(args.out)
    _prepare_out_dir(out, args.force)
    samples = generate_synthetic(spec)
    write_dataset(samples, out)
    _write_manifest(out, {
        "command": "gen-data",
        "spec": spec.to_dict(),
        "seed": spec.seed,
        "n_samples": len(samples),
        "content_hash": _dataset_hash(out),
    })
    print(f"wrote {len(samples)} samples to {out}")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _load_run_config(args, d_video: int, d_text: int) -> tuple[ModelConfig, TrainConfig]:
    model_dict: dict = {}
    train_dict: dict = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        model_dict = dict(raw.get("model", {}))
        train_dict = dict(raw.get("train", {}))

    model_dict.setdefault("d_video", d_video)
    model_dict.setdefault("d_text", d_text)
    for flag, key in (("d_model", "d_model"), ("heads", "heads"), ("num_queries", "num_queries")):
        value = getattr(args, flag, None)
        if value is not None:
            model_dict[key] = value
    if args.layers:
        enc, fus, dec = (int(x) for x in args.layers.split("/"))
        model_dict.update(encoder_layers=enc, fusion_layers=fus, decoder_layers=dec)
    if args.ablate_encoder:
        model_dict["use_encoder"] = False
    if args.ablate_fusion:
        model_dict["use_fusion"] = False
    if args.ablate_decoder:
        model_dict["use_decoder"] = False
    model_dict.setdefault("init_seed", args.seed if args.seed is not None else 0)

    for flag, key in (("steps", "num_steps"), ("batch_size", "batch_size"), ("lr", "lr"), ("seed", "seed")):
        value = getattr(args, flag, None)
        if value is not None:
            train_dict[key] = value
    toggles = dict(train_dict.get("toggles", {}))
    for name in ("cls", "l1", "iou", "bce", "rank"):
        if getattr(args, f"no_{name}_loss"):
            toggles[name] = False
    if toggles:
        train_dict["toggles"] = toggles

    return ModelConfig.from_dict(model_dict), TrainConfig.from_dict(train_dict)


def cmd_train(args) -> int:
    data_dir = Path(args.data)
    samples = load_dataset(data_dir)
    d_video = samples[0].video_features.shape[1]
    d_text = samples[0].text_features.shape[1]
    model_cfg, train_cfg = _load_run_config(args, d_video, d_text)

    out = Path(args.out)
    _prepare_out_dir(out, args.force)
    # full default dump so a rerun can reproduce this run from the file alone
    with open(out / "config.json", "w", encoding="utf-8") as fh:
        json.dump({"model": model_cfg.to_dict(), "train": train_cfg.to_dict()}, fh, indent=2, sort_keys=True)
        fh.write("\n")

    model = MomentHighlightModel(model_cfg)
    print(f"model parameters: {model.num_parameters():,}")
    trainer = Trainer(model, samples, train_cfg)

    log_path = out / "loss_log.jsonl"
    best = {"map_avg": -1.0, "step": -1}
    eval_every = args.eval_every or max(1, train_cfg.num_steps // 4)
    with open(log_path, "w", encoding="utf-8") as log:
        for _ in range(train_cfg.num_steps):
            bd = trainer.step()
            log.write(json.dumps({"step": trainer.step_count, **bd.to_dict()}) + "\n")
            if trainer.step_count % eval_every == 0 or trainer.step_count == train_cfg.num_steps:
                report = evaluate_model(model, samples, max_text_len=train_cfg.max_text_len)
                print(f"step {trainer.step_count}: loss {bd.total:.4f} "
                      f"train map_avg {report.map_avg:.4f} r1@0.5 {report.r1_at[0.5]:.4f}")
                if report.map_avg >= best["map_avg"]:
                    best = {"map_avg": report.map_avg, "step": trainer.step_count}
                    save_checkpoint(out / "best.ckpt", model, trainer.optimizer,
                                    step=trainer.step_count, train_config=train_cfg)

    save_checkpoint(out / "last.ckpt", model, trainer.optimizer,
                    step=trainer.step_count, train_config=train_cfg)
    _write_manifest(out, {
        "command": "train",
        "seed": train_cfg.seed,
        "model_config": model_cfg.to_dict(),
        "train_config": train_cfg.to_dict(),
        "data_hash": _dataset_hash(data_dir),
        "num_parameters": model.num_parameters(),
        "best": best,
        "outputs": {"best": str(out / "best.ckpt"), "last": str(out / "last.ckpt"),
                    "loss_log": str(log_path)},
    })
    return 0


# ---------------------------------------------------------------------------
# eval / predict
# ---------------------------------------------------------------------------


def _restore(checkpoint: str) -> MomentHighlightModel:
    manifest = read_checkpoint_manifest(checkpoint)
    model = MomentHighlightModel(ModelConfig.from_dict(manifest["model_config"]))
    load_checkpoint(checkpoint, model)
    return model


def _report_table(report: MetricsReport) -> str:
    rows = [
        ("MR R1@0.5", report.r1_at[0.5]),
        ("MR R1@0.7", report.r1_at[0.7]),
        ("MR mAP@0.5", report.map_at[0.5]),
        ("MR mAP@0.75", report.map_at[0.75]),
        ("MR mAP avg", report.map_avg),
        ("HD mAP", report.hd_map),
        ("HD HIT@1", report.hit_at_1),
    ]
    width = max(len(name) for name, _ in rows)
    lines = [f"{name:<{width}}  {value * 100:6.2f}" for name, value in rows]
    return "\n".join(lines)


def cmd_eval(args) -> int:
    model = _restore(args.checkpoint)
    samples = load_dataset(Path(args.data))
    report = evaluate_model(model, samples, warn=lambda m: print(f"warning: {m}", file=sys.stderr))
    out = Path(args.out)
    _prepare_out_dir(out, args.force)
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    table = _report_table(report)
    (out / "report.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    _write_manifest(out, {
        "command": "eval",
        "checkpoint": str(args.checkpoint),
        "data_hash": _dataset_hash(Path(args.data)),
        "outputs": {"report_json": str(out / "report.json"), "report_txt": str(out / "report.txt")},
    })
    return 0


def _plot_sample(sample, spans_sec: list, saliency: np.ndarray, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax_sal, ax_spans) = plt.subplots(
        2, 1, figsize=(8, 4), sharex=True, gridspec_kw={"height_ratios": [3, 1]}
    )
    times = (np.arange(len(saliency)) + 0.5) * sample.clip_len_sec
    ax_sal.plot(times, saliency, marker=".", label="predicted saliency")
    for lo, hi in sample.gt.moments * sample.duration_sec:
        ax_sal.axvspan(lo, hi, alpha=0.15, color="green")
    ax_sal.set_ylabel("saliency")
    ax_sal.legend(loc="upper right", fontsize=8)
    ax_sal.set_title(sample.qid)

    for rank, (lo, hi, score) in enumerate(spans_sec):
        ax_spans.plot([lo, hi], [-rank, -rank], linewidth=4, alpha=max(0.2, float(score)))
    ax_spans.set_yticks([])
    ax_spans.set_xlabel("time (s)")
    ax_spans.set_ylabel("moments")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def cmd_predict(args) -> int:
    model = _restore(args.checkpoint)
    samples = load_dataset(Path(args.data))
    out = Path(args.out)
    _prepare_out_dir(out, args.force)

    records = []
    for s in samples:
        pred = predict_sample(model, s)
        spans_sec = clamp_valid(pred.spans) * s.duration_sec
        order = np.argsort(-pred.scores, kind="stable")
        ranked = [[float(spans_sec[i, 0]), float(spans_sec[i, 1]), float(pred.scores[i])] for i in order]
        records.append({
            "qid": s.qid,
            "spans": ranked,
            "saliency": [float(x) for x in pred.saliency],
        })
        if args.plot:
            _plot_sample(s, ranked, pred.saliency, out / f"{s.qid}.svg")
    path = out / "predictions.jsonl"
    write_predictions(path, records)
    _write_manifest(out, {
        "command": "predict",
        "checkpoint": str(args.checkpoint),
        "data_hash": _dataset_hash(Path(args.data)),
        "outputs": {"predictions": str(path)},
    })
    print(f"wrote {len(records)} predictions to {path}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="momenthd",
                                     description="Joint moment retrieval and highlight detection")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--spec", help="JSON file with SyntheticSpec fields")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON file with {model: {...}, train: {...}}")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--d-model", dest="d_model", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--num-queries", dest="num_queries", type=int)
    p.add_argument("--layers", help="encoder/fusion/decoder layer counts, e.g. 1/1/4")
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--ablate-encoder", action="store_true")
    p.add_argument("--ablate-fusion", action="store_true")
    p.add_argument("--ablate-decoder", action="store_true")
    for name in ("cls", "l1", "iou", "bce", "rank"):
        p.add_argument(f"--no-{name}-loss", dest=f"no_{name}_loss", action="store_true")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write prediction JSONL (optionally plots)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--plot", action="store_true")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return 3
    except NumericError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
