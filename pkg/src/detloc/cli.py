"""Command-line entry point.

Subcommands cover the full pipeline: synth, extract-noise, make-masks,
train, eval, localize, report. Diagnostics go to stderr; machine output
goes to files in the chosen output directory, together with a
resolved_config.json snapshot that makes each run reproducible.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Set DETLOC_WORKERS to bound the number of compute threads.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import dataio, maskgen, residual, synthbench
from .dataio import DataError
from .locfuse import FusionWeights, fuse_maps
from .metrics import EvalReport
from .trainer import NumericsError, PreparedDataset, TrainConfig, evaluate, run_training

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # noqa: A003 - argparse API
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _apply_worker_env() -> None:
    workers = os.environ.get("DETLOC_WORKERS")
    if workers:
        import torch

        torch.set_num_threads(max(1, int(workers)))


def _snapshot(out_dir: Path, command: str, params: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    clean = {
        k: (str(v) if isinstance(v, Path) else v)
        for k, v in params.items()
        if k != "func" and not callable(v)
    }
    dataio.write_json(out_dir / "resolved_config.json", {"command": command, "params": clean})


def _parse_overrides(pairs: list[str]) -> dict:
    out = {}
    for raw in pairs:
        if "=" not in raw:
            raise UsageError(f"overrides must be key=value, got {raw!r}")
        key, value = raw.split("=", 1)
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def _load_train_config(path: str | None, overrides: dict) -> TrainConfig:
    data: dict = {}
    if path:
        p = Path(path)
        if not p.exists():
            raise DataError(f"config file not found: {p}")
        try:
            data = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise DataError("config file must hold a flat JSON object")
    data.update(overrides)
    try:
        return TrainConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise DataError(f"bad config: {exc}") from exc


def cmd_synth(args) -> int:
    out = Path(args.out)
    plan = [(args.split, args.count, args.seed)]
    if args.val_count:
        plan.append(("val", args.val_count, args.seed + 1))
    if args.test_count:
        plan.append(("test", args.test_count, args.seed + 2))
    records: list[dict] = []
    for split, count, seed in plan:
        spec = synthbench.SpliceSpec(
            count=count,
            seed=seed,
            size=args.size,
            split=split,
            sigma_s=args.sigma_s,
            base_dir=args.base_dir,
        )
        records.extend(synthbench.generate(spec, out))
    dataio.write_manifest(out / "manifest.jsonl", records)
    _snapshot(out, "synth", vars(args))
    print(f"wrote {len(records)} samples to {out}", file=sys.stderr)
    return EXIT_OK


def cmd_extract_noise(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.manifest:
        paths = [rec.image_path for rec in dataio.load_manifest(args.manifest)]
    else:
        paths = [Path(p) for p in args.images]
    if not paths:
        raise DataError("no input images given")
    for path in paths:
        if not path.exists():
            raise DataError(f"image not found: {path}")
        image = dataio.load_image(path)
        if args.filter == "wavelet":
            noise = residual.extract_residual(image, args.sigma)
        else:
            noise = residual.srm_residual(image)
        dataio.save_float_array(out / path.stem, noise.residual, sigma=noise.sigma)
    _snapshot(out, "extract-noise", vars(args))
    print(f"extracted {len(paths)} residuals to {out}", file=sys.stderr)
    return EXIT_OK


def cmd_make_masks(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = maskgen.ThresholdConfig(threshold=args.threshold, morph_cleanup=not args.no_cleanup)
    scales = [int(s) for s in args.scales.split(",")] if args.scales else []
    records = dataio.load_manifest(args.manifest)
    made = 0
    for rec in records:
        if rec.pair_path is None:
            continue
        real = dataio.load_image(rec.pair_path)
        fake = dataio.load_image(rec.image_path)
        mask = maskgen.pair_to_mask(real, fake, cfg)
        stem = Path(rec.image_path).stem
        dataio.save_mask(out / f"{stem}.png", mask)
        for s in scales:
            aligned = maskgen.align_mask(mask, s, s)
            dataio.save_float_array(out / f"{stem}_{s}x{s}", aligned)
        made += 1
    if made == 0:
        raise DataError("manifest has no records with pair_path; nothing to do")
    _snapshot(out, "make-masks", vars(args))
    print(f"wrote {made} masks to {out}", file=sys.stderr)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_train_config(args.config, _parse_overrides(args.set or []))
    out = Path(args.out)
    _snapshot(out, "train", {**vars(args), "resolved": cfg.to_dict()})
    final = run_training(args.manifest, cfg, out, step=args.step, init_checkpoint=args.init)
    print(f"training complete: {final}", file=sys.stderr)
    return EXIT_OK


def _load_eval_dataset(args, model_cfg) -> PreparedDataset:
    records = [r for r in dataio.load_manifest(args.manifest) if r.split == args.split]
    if not records:
        raise DataError(f"manifest has no {args.split!r} samples")
    cfg = TrainConfig(
        sigma=args.sigma,
        num_classes=model_cfg.num_classes,
        head_channels=model_cfg.head_channels,
        aggregation=model_cfg.aggregation,
        backbone=model_cfg.backbone,
        input_size=model_cfg.input_size,
        hidden_units=model_cfg.hidden_units,
    )
    return PreparedDataset(records, cfg)


def cmd_eval(args) -> int:
    from .net import load_checkpoint

    model, _ = load_checkpoint(args.checkpoint)
    ds = _load_eval_dataset(args, model.cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        report, extras = evaluate(model, ds, fusion=_gamma_weights(args.gamma))
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    (out / "eval_report.json").write_text(report.to_json(), encoding="utf-8")
    if args.curves:
        thresholds, fpr, tpr = extras["roc"]
        with (out / "roc.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["threshold", "fpr", "tpr"])
            writer.writerows(zip(thresholds, fpr, tpr))
        recall, precision = extras["pr"]
        with (out / "pr.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["recall", "precision"])
            writer.writerows(zip(recall, precision))
    if "per_class_recall" in extras:
        dataio.write_json(
            out / "per_class_recall.json",
            {
                "recall": extras["per_class_recall"],
                "avg": extras["per_class_recall_avg"],
                "classes": list(dataio.VALID_LABELS),
            },
        )
    _snapshot(out, "eval", vars(args))
    print(f"eval report written to {out / 'eval_report.json'}", file=sys.stderr)
    return EXIT_OK


def _gamma_weights(raw: str) -> FusionWeights:
    parts = [float(v) for v in raw.split(",")]
    if len(parts) != 3:
        raise UsageError(f"--gamma needs three comma-separated values, got {raw!r}")
    return FusionWeights(*parts)


def cmd_localize(args) -> int:
    from .net import load_checkpoint

    model, _ = load_checkpoint(args.checkpoint)
    ds = _load_eval_dataset(args, model.cfg)
    weights = _gamma_weights(args.gamma)
    out = Path(args.out)
    maps_dir = out / "maps"
    maps_dir.mkdir(parents=True, exist_ok=True)
    size = model.cfg.input_size

    import torch

    model.eval()
    with torch.no_grad():
        for start in range(0, len(ds), 64):
            idx = np.arange(start, min(start + 64, len(ds)))
            seg_maps, _, _ = model(ds.images[torch.as_tensor(idx)])
            for row, i in enumerate(idx):
                fused = fuse_maps(
                    [seg_maps[j][row, 0].numpy() for j in range(3)], size, size, weights
                )
                stem = Path(ds.records[i].image_path).stem
                dataio.save_gray_map(maps_dir / f"{stem}.png", fused)
                dataio.save_float_array(maps_dir / stem, fused)
    _snapshot(out, "localize", vars(args))
    print(f"wrote {len(ds)} localization maps to {maps_dir}", file=sys.stderr)
    return EXIT_OK


_REPORT_COLUMNS = ["run", "acc", "auc", "eer", "ap", "fpr", "fnr", "iou", "pbca", "iinc"]


def cmd_report(args) -> int:
    rows = []
    for path in args.reports:
        p = Path(path)
        if not p.exists():
            raise DataError(f"report not found: {p}")
        try:
            data = json.loads(p.read_text(encoding="utf-8"))
            rep = EvalReport.from_dict(data)
        except (json.JSONDecodeError, TypeError) as exc:
            raise DataError(f"malformed report {p}: {exc}") from exc
        row = {"run": p.parent.name or p.stem}
        for col in _REPORT_COLUMNS[1:]:
            value = getattr(rep, col)
            row[col] = "" if value is None else f"{value:.4f}"
        rows.append(row)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "report.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=_REPORT_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    widths = {c: max(len(c), *(len(r[c]) for r in rows)) for c in _REPORT_COLUMNS}
    lines = ["  ".join(c.ljust(widths[c]) for c in _REPORT_COLUMNS)]
    for r in rows:
        lines.append("  ".join(r[c].ljust(widths[c]) for c in _REPORT_COLUMNS))
    (out / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _snapshot(out, "report", vars(args))
    print(f"merged {len(rows)} reports into {out / 'report.csv'}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="detloc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic splice corpus")
    p.add_argument("--count", type=int, required=True, help="number of fake/real pairs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="train", choices=("train", "val", "test"))
    p.add_argument("--val-count", type=int, default=0, dest="val_count",
                   help="also generate this many val pairs (seed+1)")
    p.add_argument("--test-count", type=int, default=0, dest="test_count",
                   help="also generate this many test pairs (seed+2)")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--sigma-s", type=float, default=8.0, dest="sigma_s")
    p.add_argument("--base-dir", default=None, dest="base_dir")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract-noise", help="extract noise residuals")
    p.add_argument("--sigma", type=float, default=5.0)
    p.add_argument("--filter", choices=("wavelet", "srm"), default="wavelet")
    p.add_argument("--manifest", default=None)
    p.add_argument("--images", nargs="*", default=[])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract_noise)

    p = sub.add_parser("make-masks", help="derive masks from real/fake pairs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--threshold", type=float, default=0.05)
    p.add_argument("--no-cleanup", action="store_true", dest="no_cleanup")
    p.add_argument("--scales", default=None, help="comma-separated sizes for float sidecars")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_masks)

    p = sub.add_parser("train", help="run the two-step training protocol")
    p.add_argument("--config", default=None)
    p.add_argument("--manifest", required=True)
    p.add_argument("--step", choices=("1", "2", "all"), default="all")
    p.add_argument("--init", default=None, help="checkpoint to initialize step 2 from")
    p.add_argument("--out", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="compute detection and localization metrics")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--gamma", default="0.1,0.2,0.7")
    p.add_argument("--curves", action="store_true", help="also write ROC and P/R CSVs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("localize", help="export fused localization maps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--gamma", default="0.1,0.2,0.7")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("report", help="merge eval reports into one table")
    p.add_argument("reports", nargs="+", help="eval_report.json paths")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        _apply_worker_env()
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericsError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def entrypoint() -> None:
    sys.exit(main())
