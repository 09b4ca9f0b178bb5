"""Command-line surface: train, eval, predict, gradcheck.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import gradcheck as gc
from . import tensor as T
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, build_config, config_lines, parse_config_file
from .data import DataError, SegmentationSample, load_dataset, synth_dataset, write_gray
from .metrics import evaluate_pairs
from .model import SegmentationModel, ViewOutputs
from .tensor import Tensor
from .train import Adam, ViewWeights, fuse_decision, train_epoch

FINAL_CKPT = "model_final.ckpt"
CONFIG_ECHO = "config_used.cfg"


def _add_common_flags(p: argparse.ArgumentParser, config_help: str = "flat key = value config file"):
    p.add_argument("--config", help=config_help)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="entropy temperature of the view-weight solver")
    p.add_argument("--image-size", dest="image_size", type=int, default=None)
    p.add_argument("--no-glff", action="store_true",
                   help="replace per-scale fusion with a plain 1x1 mix (ablation)")
    p.add_argument("--no-dfm", action="store_true",
                   help="replace the dense decoder with a plain head (ablation)")
    p.add_argument("--out-dir", dest="out_dir", default=None)
    p.add_argument("--data-dir", dest="data_dir", default=None)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coopseg",
        description="Two-branch segmentation with cooperative multi-view training",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, desc in (
        ("train", "train a model and write per-epoch checkpoints plus a log CSV"),
        ("eval", "score a checkpoint on a dataset, writing a metrics CSV"),
        ("predict", "write 8-bit grayscale mask images for each input"),
        ("gradcheck", "run the finite-difference gradient suite"),
    ):
        p = sub.add_parser(name, help=desc)
        if name in ("eval", "predict"):
            _add_common_flags(
                p, f"flat key = value config file (default: <out-dir>/{CONFIG_ECHO})"
            )
            p.add_argument("--checkpoint", default=None,
                           help=f"model file (default: <out-dir>/{FINAL_CKPT})")
        else:
            _add_common_flags(p)
    return parser


def _config_from_args(args, reuse_run_config: bool = False) -> RunConfig:
    config_path = args.config
    if config_path is None and reuse_run_config:
        # score/export with the settings the run was trained under
        echo = Path(args.out_dir or RunConfig.out_dir) / CONFIG_ECHO
        if echo.is_file():
            config_path = echo
    file_values = parse_config_file(config_path) if config_path else {}
    overrides = dict(
        seed=args.seed, epochs=args.epochs, lam=args.lam,
        image_size=args.image_size, out_dir=args.out_dir, data_dir=args.data_dir,
    )
    if args.no_glff:
        overrides["glff_on"] = False
    if args.no_dfm:
        overrides["dfm_on"] = False
    return build_config(file_values, **{k: v for k, v in overrides.items() if v is not None})


def _get_samples(cfg: RunConfig) -> list[SegmentationSample]:
    if cfg.data_dir:
        samples = load_dataset(cfg.data_dir, cfg.image_size)
        if not samples:
            raise DataError(f"no samples found under {cfg.data_dir!r}")
        return samples
    return synth_dataset(cfg.synth_samples, cfg.image_size, cfg.seed)


def _batches(samples, batch_size: int, dtype):
    out = []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i : i + batch_size]
        images = np.stack([s.image for s in chunk]).astype(dtype)
        masks = np.stack([s.mask for s in chunk]).astype(dtype)
        out.append((Tensor(images), Tensor(masks)))
    return out


def _write_csv(path: Path, header: list[str], rows: list[list]):
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")


def _cell(v) -> str:
    if isinstance(v, float):
        return format(v, ".10g")
    return str(v)


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / CONFIG_ECHO).write_text("\n".join(config_lines(cfg)) + "\n")
    samples = _get_samples(cfg)
    dtype = np.float32 if cfg.dtype == "float32" else np.float64
    batches = _batches(samples, cfg.batch_size, dtype)
    model = SegmentationModel(cfg)
    optimizer = Adam(model.parameters(), lr=cfg.lr)
    rows = []
    best_obj, stale = float("inf"), 0
    for epoch in range(1, cfg.epochs + 1):
        report = train_epoch(model, optimizer, batches, cfg.lam)
        rows.append([epoch, *report.losses.tolist(), *report.weights.tolist(), report.objective])
        save_checkpoint(out_dir / f"epoch_{epoch:04d}.ckpt", dict(model.named_state()))
        print(
            f"epoch {epoch}: losses "
            + " ".join(f"{v:.4f}" for v in report.losses)
            + f" obj {report.objective:.4f}"
        )
        if cfg.early_stop_patience > 0:
            if report.objective < best_obj - 1e-6:
                best_obj, stale = report.objective, 0
            else:
                stale += 1
                if stale >= cfg.early_stop_patience:
                    print(f"objective plateaued for {stale} epochs, stopping early")
                    break
    save_checkpoint(out_dir / FINAL_CKPT, dict(model.named_state()))
    _write_csv(
        out_dir / "train_log.csv",
        ["epoch", "loss_1", "loss_2", "loss_3", "w_1", "w_2", "w_3", "objective"],
        rows,
    )
    return 0


def _load_model(cfg: RunConfig, ckpt_arg) -> SegmentationModel:
    path = Path(ckpt_arg) if ckpt_arg else Path(cfg.out_dir) / FINAL_CKPT
    model = SegmentationModel(cfg)
    model.load_state(load_checkpoint(path))
    return model.eval()


def _decide(cfg: RunConfig, model: SegmentationModel, outs: ViewOutputs) -> Tensor:
    if cfg.eval_view == "fused":
        w = ViewWeights(model.view_weights.copy(), cfg.lam)
        return fuse_decision(w, outs)
    return {"transformer": outs.transformer, "cnn": outs.cnn, "fusion": outs.fusion}[cfg.eval_view]


def cmd_eval(args) -> int:
    cfg = _config_from_args(args, reuse_run_config=True)
    samples = _get_samples(cfg)
    model = _load_model(cfg, args.checkpoint)
    dtype = np.float32 if cfg.dtype == "float32" else np.float64
    preds, ids, gts = [], [], []
    with T.no_grad():
        for images, masks in _batches(samples, cfg.batch_size, dtype):
            out = _decide(cfg, model, model(images))
            preds.extend(np.asarray(out.data, dtype=np.float64))
            gts.extend(masks.data.astype(np.float64))
    ids = [s.id for s in samples]
    report = evaluate_pairs(ids, preds, gts)
    rows = [[i, d, j, m] for i, d, j, m in zip(report.ids, report.dice, report.iou, report.mae)]
    rows.append(["mean", report.mean_dice, report.mean_iou, report.mean_mae])
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(out_dir / "eval.csv", ["id", "dice", "iou", "mae"], rows)
    print(f"mDice {report.mean_dice:.4f}  mIoU {report.mean_iou:.4f}  MAE {report.mean_mae:.4f}")
    return 0


def cmd_predict(args) -> int:
    cfg = _config_from_args(args, reuse_run_config=True)
    samples = _get_samples(cfg)
    model = _load_model(cfg, args.checkpoint)
    dtype = np.float32 if cfg.dtype == "float32" else np.float64
    pred_dir = Path(cfg.out_dir) / "predictions"
    pred_dir.mkdir(parents=True, exist_ok=True)
    idx = 0
    with T.no_grad():
        for images, _ in _batches(samples, cfg.batch_size, dtype):
            out = _decide(cfg, model, model(images)).data
            for b in range(out.shape[0]):
                gray = np.rint(255.0 * out[b, 0]).astype(np.uint8)
                write_gray(pred_dir / f"{samples[idx].id}.pgm", gray)
                idx += 1
    print(f"wrote {idx} mask images to {pred_dir}")
    return 0


def cmd_gradcheck(args) -> int:
    results = gc.run_op_suite(seed=0, inputs_per_op=5)
    failed = False
    for r in results:
        status = "PASS" if r.ok else "FAIL"
        print(f"{r.name:24s} max rel err {r.max_rel_err:.3e}  {status}")
        failed = failed or not r.ok
    err = gc.check_model_end_to_end(seed=0, n_samples=50)
    status = "PASS" if err < gc.TOL_DEFAULT else "FAIL"
    print(f"{'model_end_to_end':24s} max rel err {err:.3e}  {status}")
    failed = failed or err >= gc.TOL_DEFAULT
    return 1 if failed else 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "train": cmd_train,
        "eval": cmd_eval,
        "predict": cmd_predict,
        "gradcheck": cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, CheckpointError, RuntimeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
