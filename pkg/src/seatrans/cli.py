"""Command line: ``seatrans {synth,pretrain-seg,train,eval,ablate,compare,hetero,explain}``.

Run commands take ``--config run.yaml`` plus any number of ``--set key=value``
overrides (dotted keys, YAML values) and write into ``--out``, which is
guarded by a ``.lock`` file for the duration of the command.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Iterator

import numpy as np
import torch
import yaml
from PIL import Image

from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .config import RunConfig, load_run_config
from .data import ChannelStats, SyntheticConfig, generate_synthetic, split_names, write_dataset
from .errors import MissingCheckpointError, SeATransError
from .experiments import (
    COMPARE_KINDS,
    fit_model,
    full_vs_vanilla_wins,
    prepare_data,
    pretrain_segmentation,
    run_ablation,
    run_compare,
    run_hetero,
    segmentation_state,
)
from .gradcam import grad_cam, overlay
from .training import evaluate, segmentation_dice

logger = logging.getLogger("seatrans")


class RunDirLockedError(SeATransError):
    pass


@contextlib.contextmanager
def run_dir(path: str | Path) -> Iterator[Path]:
    """Create ``path`` and hold ``path/.lock`` exclusively while the block runs."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    lock = path / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RunDirLockedError(
            f"run directory {path} is locked by another command (remove {lock} if stale)"
        ) from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield path
    finally:
        lock.unlink(missing_ok=True)


def _parse_overrides(items: list[str]) -> dict[str, Any]:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise SeATransError(f"override {item!r} must look like key=value")
        out[key.strip()] = yaml.safe_load(value)
    return out


def _run_config(args) -> RunConfig:
    overrides = _parse_overrides(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.config:
        return load_run_config(args.config, overrides)
    raw: dict[str, Any] = {}
    for dotted, value in overrides.items():
        node = raw
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = value
    return RunConfig.from_dict(raw)


def _write_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_rows(out: Path, stem: str, rows: list[dict[str, Any]]) -> None:
    """Same records as ``stem.jsonl`` and ``stem.csv``."""
    with (out / f"{stem}.jsonl").open("w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    flat = [{k: (json.dumps(v) if isinstance(v, list) else v) for k, v in r.items()} for r in rows]
    keys = list(dict.fromkeys(k for r in flat for k in r))
    with (out / f"{stem}.csv").open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(flat)


def _format_table(header: list[str], rows: list[list[Any]]) -> str:
    cells = [header] + [[f"{v:.4f}" if isinstance(v, float) else str(v) for v in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


# ---------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    cfg = SyntheticConfig(
        n_samples=args.n + args.n_val + args.n_test, image_size=args.image_size,
        preset=args.preset, seed=args.seed,
    )
    ds = generate_synthetic(cfg)
    with run_dir(args.out) as out:
        manifest = write_dataset(ds, out, split_names(args.n, args.n_val, args.n_test))
    print(f"wrote {len(ds)} samples ({int(ds.labels.sum())} positive) to {manifest}")
    return 0


def cmd_pretrain_seg(args) -> int:
    run = _run_config(args)
    with run_dir(args.out) as out:
        data = prepare_data(run.data, run.model.backbone, run.seed)
        unet = pretrain_segmentation(run.model.backbone, data["train"], run.seg_train, run.seed)
        dice = segmentation_dice(unet, data.get("test") or data["train"])
        save_checkpoint(unet, out / "seg.ckpt", config=run.to_dict(), seed=run.seed,
                        extra={"dice": dice, "stats": dataclasses.asdict(data.stats)})
        _write_json(out / "summary.json", {"command": "pretrain-seg", "dice": dice})
    print(f"segmentation dice per class: {[round(d, 4) for d in dice]}")
    return 0


def cmd_train(args) -> int:
    run = _run_config(args)
    with run_dir(args.out) as out:
        _write_json(out / "config.json", run.to_dict())
        data = prepare_data(run.data, run.model.backbone, run.seed)
        seg_state = None
        if run.model.kind not in ("vanilla", "multi"):
            if run.model.seg_checkpoint:
                _, arrays = read_checkpoint(run.model.seg_checkpoint)
                seg_state = {k: torch.from_numpy(v) for k, v in arrays.items()}
            else:
                unet = pretrain_segmentation(run.model.backbone, data["train"], run.seg_train, run.seed)
                save_checkpoint(unet, out / "seg.ckpt", config={}, seed=run.seed)
                seg_state = segmentation_state(unet)
        fit = fit_model(run.model, data, run.train, run.seed, seg_state)
        extra = {"stats": dataclasses.asdict(data.stats), "data": run.to_dict()["data"]}
        save_checkpoint(fit.model, out / "model.ckpt", seed=run.seed, step=fit.history.steps, extra=extra)
        rows = [{"split": "train", **r.to_dict()} for r in fit.history.history]
        if fit.test is not None:
            rows.append({"split": "test", **fit.test.to_dict()})
        _write_rows(out, "metrics", rows)
        summary = {
            "command": "train", "kind": run.model.kind, "steps": fit.history.steps,
            "final_loss": fit.history.losses[-1], "params": fit.num_params, "seconds": fit.seconds,
            "test": None if fit.test is None else fit.test.to_dict(),
        }
        _write_json(out / "summary.json", summary)
    if fit.test is not None:
        t = fit.test
        print(f"test ACC {t.acc:.4f}  SPE {t.spe:.4f}  SEN {t.sen:.4f}  AUC {t.auc:.4f}")
    return 0


def _load_for_inference(args):
    if not args.checkpoint:
        raise MissingCheckpointError("a model checkpoint is required (--checkpoint PATH)")
    model, manifest = load_checkpoint(args.checkpoint)
    model.eval()
    stats = manifest.extra.get("stats")
    run = _run_config(args) if (args.config or args.set) else RunConfig.from_dict(
        {"seed": manifest.seed, "data": manifest.extra.get("data") or {}}
    )
    return model, manifest, run, (ChannelStats(tuple(stats["mean"]), tuple(stats["std"])) if stats else None)


def cmd_eval(args) -> int:
    model, manifest, run, stats = _load_for_inference(args)
    data = prepare_data(run.data, model.cfg.backbone, run.seed)
    split = data[args.split]
    if stats is not None:
        # undo the evaluation split's own stats, apply the training ones from the checkpoint
        split = dataclasses.replace(
            split, images=stats.apply(split.images * _std(data.stats) + _mean(data.stats))
        )
    report = evaluate(model, split)
    print(f"{args.split} ACC {report.acc:.4f}  SPE {report.spe:.4f}  SEN {report.sen:.4f}  AUC {report.auc:.4f}")
    if args.out:
        with run_dir(args.out) as out:
            _write_rows(out, "eval", [{"split": args.split, **report.to_dict()}])
    return 0


def _mean(stats: ChannelStats) -> torch.Tensor:
    return torch.tensor(stats.mean, dtype=torch.float32).view(1, -1, 1, 1)


def _std(stats: ChannelStats) -> torch.Tensor:
    return torch.tensor(stats.std, dtype=torch.float32).view(1, -1, 1, 1)


def cmd_ablate(args) -> int:
    run = _run_config(args)
    seeds = args.seeds if args.seeds else [run.seed]
    with run_dir(args.out) as out:
        _write_json(out / "config.json", run.to_dict())
        rows = run_ablation(run, seeds)
        _write_rows(out, "ablation", [r.to_dict() for r in rows])
        wins, total = full_vs_vanilla_wins(rows)
        _write_json(out / "summary.json", {"command": "ablate", "full_ge_vanilla": wins, "seeds": total})
    table = [
        [r.seed, *("x" if f else "-" for f in r.flags), r.auc, r.params] for r in rows
    ]
    print(_format_table(["seed", "multi_scale", "asymmetric", "sea_block", "auc", "params"], table))
    print(f"full >= vanilla in {wins} of {total} seeds")
    return 0


def cmd_compare(args) -> int:
    run = _run_config(args)
    with run_dir(args.out) as out:
        _write_json(out / "config.json", run.to_dict())
        rows = run_compare(run, args.kinds or COMPARE_KINDS)
        _write_rows(out, "compare", [r.to_dict() for r in rows])
    table = [
        [r.kind, r.metrics.acc, r.metrics.spe, r.metrics.sen, r.metrics.auc,
         " ".join(f"{d:.4f}" for d in r.metrics.dice) or "-"]
        for r in rows
    ]
    print(_format_table(["model", "acc", "spe", "sen", "auc", "dice"], table))
    return 0


def cmd_hetero(args) -> int:
    run = _run_config(args)
    with run_dir(args.out) as out:
        result = run_hetero(run, (args.source, args.swap))
        _write_json(out / "summary.json", {"command": "hetero", **result.to_dict()})
    a, b = result.source_presets
    print(f"AUC with {a} segmentation: {result.auc[a]:.4f}")
    print(f"AUC with {b} segmentation: {result.auc[b]:.4f}")
    print(f"AUC change: {result.auc_change:+.4f}  frozen segmentation invariant: {result.frozen_invariant}")
    return 0


def _read_image(path: Path, size: int) -> np.ndarray:
    if not path.is_file():
        raise SeATransError(f"image not found: {path}")
    img = Image.open(path).convert("RGB").resize((size, size), Image.BILINEAR)
    return np.asarray(img, dtype=np.float32) / 255.0


def cmd_explain(args) -> int:
    model, manifest, run, stats = _load_for_inference(args)
    size = run.data.image_size or model.cfg.backbone.input_size[0]
    if args.image:
        raws = [(Path(args.image).stem, _read_image(Path(args.image), size))]
    else:
        data = prepare_data(run.data, model.cfg.backbone, run.seed)
        split = data[args.split]
        raw = split.images * _std(data.stats) + _mean(data.stats)
        raws = [
            (f"{args.split}_{i:05d}", raw[i].permute(1, 2, 0).numpy())
            for i in args.index
        ]
    with run_dir(args.out) as out:
        for name, raw in raws:
            x = torch.from_numpy(np.ascontiguousarray(raw)).permute(2, 0, 1)[None]
            if stats is not None:
                x = stats.apply(x)
            heat = grad_cam(model, x, args.layer)
            with torch.no_grad():
                prob = model(x).prob.item()
            Image.fromarray(overlay(raw, heat)).save(out / f"{name}_gradcam.png")
            np.save(out / f"{name}_gradcam.npy", heat.values)
            print(f"{name}: p(disease) = {prob:.4f}, heatmap from {heat.layer}")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seatrans", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_args(p, out_required=True):
        p.add_argument("--config", help="YAML run config")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, e.g. train.epochs=5")
        p.add_argument("--seed", type=int, help="shorthand for --set seed=N")
        p.add_argument("--out", required=out_required, help="run directory")

    p = sub.add_parser("synth", help="write a synthetic dataset with a manifest")
    p.add_argument("--preset", default="synthetic-a")
    p.add_argument("--n", type=int, default=128, help="training samples")
    p.add_argument("--n-val", type=int, default=0)
    p.add_argument("--n-test", type=int, default=0)
    p.add_argument("--image-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain-seg", help="pretrain and save the segmentation UNet")
    run_args(p)
    p.set_defaults(func=cmd_pretrain_seg)

    p = sub.add_parser("train", help="train one model and save its checkpoint")
    run_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a data split")
    run_args(p, out_required=False)
    p.add_argument("--checkpoint")
    p.add_argument("--split", default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train the four ablation rows")
    run_args(p)
    p.add_argument("--seeds", type=int, nargs="+")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("compare", help="train and score the baselines and the full model")
    run_args(p)
    p.add_argument("--kinds", nargs="+", choices=COMPARE_KINDS)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("hetero", help="swap the segmentation source preset")
    run_args(p)
    p.add_argument("--source", default="synthetic-a")
    p.add_argument("--swap", default="synthetic-b")
    p.set_defaults(func=cmd_hetero)

    p = sub.add_parser("explain", help="Grad-CAM heatmaps for a checkpoint")
    run_args(p)
    p.add_argument("--checkpoint")
    p.add_argument("--image", help="PNG to explain (default: samples of --split)")
    p.add_argument("--split", default="test")
    p.add_argument("--index", type=int, nargs="+", default=[0])
    p.add_argument("--layer", help="module name to hook (default: model's last stage)")
    p.set_defaults(func=cmd_explain)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except SeATransError as exc:
        print(f"seatrans {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
