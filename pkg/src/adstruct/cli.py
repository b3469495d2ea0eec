"""Command-line entry point: ``adstruct <command> ...``.

Exit status: 0 success, 2 unparsable input (arguments, dataset, config or
prediction files), 3 data validation failure, 4 configuration or
dimension mismatch, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import data_io, pipeline
from .errors import (
    AdStructError,
    ConfigurationError,
    ContractError,
    DimensionError,
    ParseError,
    ValidationError,
)
from .segmentation import SegmenterConfig, load_segmenter, save_segmenter, train_segmenter
from .tagging import SWEEP_THRESHOLDS, TaggerConfig, load_tagger, save_tagger, train_tagger

EXIT_OK, EXIT_OTHER, EXIT_PARSE, EXIT_VALIDATION, EXIT_CONFIG = 0, 1, 2, 3, 4

log = logging.getLogger("adstruct")


def _config_section(path, key):
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON config ({exc.msg})", exc.lineno) from exc
    return dict(data.get(key, {}))


def _overrides(args, mapping):
    return {field: getattr(args, attr) for attr, field in mapping.items()
            if getattr(args, attr, None) is not None}


def _split(records, val_fraction, seed):
    if not val_fraction:
        return records, []
    split = data_io.split_dataset(records, val_fraction, seed)
    keep = set(split.train)
    return [r for r in records if r.id in keep], [r for r in records if r.id not in keep]


def cmd_gen_synthetic(args):
    cfg = data_io.SyntheticConfig(
        n_videos=args.n_videos, t_range=(args.t_min, args.t_max), D=args.dim, C=args.classes,
        vocab=args.vocab, seed=args.seed, snippet_rate=args.rate, separation=args.separation,
        noise=args.noise)
    records = data_io.generate_synthetic(cfg)
    data_io.save_dataset(records, args.out, sidecar=args.sidecar)
    print(f"wrote {len(records)} videos to {args.out}")


def cmd_train_seg(args):
    records = data_io.load_dataset(args.data)
    if not records:
        raise ValidationError("dataset is empty")
    section = _config_section(args.config, "segmenter")
    section.update(_overrides(args, {"epochs": "epochs", "lr": "lr", "batch_size": "batch_size",
                                     "loss": "loss", "seed": "seed", "hidden": "hidden"}))
    section.setdefault("input_dim", records[0].features.shape[1])
    model = load_segmenter(args.resume) if args.resume else None
    cfg = SegmenterConfig.from_dict({**(model.config.__dict__ if model else {}), **section})
    train, val = _split(records, args.val_fraction, cfg.seed)
    model = train_segmenter(train, cfg, model=model, val_records=val,
                            eval_every=args.eval_every if val else 0, log_path=args.log)
    save_segmenter(model, args.out)
    last = model.history[-1] if model.history else {}
    print(f"saved segmenter to {args.out} ({len(model.history)} epochs, last {last})")


def cmd_train_tag(args):
    records = data_io.load_dataset(args.data)
    if not records:
        raise ValidationError("dataset is empty")
    section = _config_section(args.config, "tagger")
    section.update(_overrides(args, {"epochs": "epochs", "lr_head": "lr_head", "lr_rest": "lr_rest",
                                     "batch_size": "batch_size", "seed": "seed", "classes": "n_classes"}))
    section.setdefault("input_dim", records[0].features.shape[1])
    model = load_tagger(args.resume) if args.resume else None
    cfg = TaggerConfig.from_dict({**(model.config.__dict__ if model else {}), **section})
    train, _ = _split(records, args.val_fraction, cfg.seed)
    model = train_tagger(train, cfg, model=model, log_path=args.log)
    save_tagger(model, args.out)
    last = model.history[-1] if model.history else {}
    print(f"saved tagger to {args.out} ({len(model.history)} epochs, last {last})")


def _pipeline_config(args):
    return pipeline.PipelineConfig.load(
        args.config,
        seg_checkpoints=args.seg or None, tag_checkpoints=args.tag or None,
        boundary_threshold=args.boundary_threshold, score_threshold=args.score_threshold,
        min_gap=args.min_gap, workers=args.workers)


def _load_models(cfg):
    return ([load_segmenter(p) for p in cfg.seg_checkpoints],
            [load_tagger(p) for p in cfg.tag_checkpoints])


def cmd_predict(args):
    cfg = _pipeline_config(args)
    records = data_io.load_dataset(args.data)
    segs, tags = _load_models(cfg)
    preds = pipeline.predict(records, segs, tags, cfg.boundary_threshold, cfg.score_threshold,
                             cfg.min_gap, cfg.edge_snap, cfg.workers)
    pipeline.write_predictions(args.out, preds, {r.id: r.duration for r in records})
    print(f"wrote predictions for {len(preds)} videos to {args.out}")


def cmd_evaluate(args):
    preds = pipeline.read_predictions(args.pred)
    records = data_io.load_dataset(args.gt)
    report = pipeline.evaluate_predictions(preds, records)
    doc = json.dumps(report.to_dict(), indent=2)
    if args.out:
        Path(args.out).write_text(doc + "\n", encoding="utf-8")
    print(doc)


def cmd_sweep(args):
    cfg = _pipeline_config(args)
    records = data_io.load_dataset(args.data)
    segs, tags = _load_models(cfg)
    rows = pipeline.sweep(records, segs, tags, args.thresholds, args.which, cfg.boundary_threshold,
                          cfg.score_threshold, cfg.min_gap, cfg.edge_snap, cfg.workers)
    table = [{k: v for k, v in r.items() if k != "predictions"} for r in rows]
    print(f"{'threshold':>9} {'F1':>8} {'avg_mAP':>8} {'final':>8} {'labels':>7}")
    for r in table:
        print(f"{r['threshold']:>9.3f} {r['f1']:>8.4f} {r['avg_map']:>8.4f} {r['final']:>8.4f} "
              f"{r['mean_labels']:>7.3f}")
    if args.out:
        Path(args.out).write_text(json.dumps(table, indent=2) + "\n", encoding="utf-8")


def _add_predict_args(p):
    p.add_argument("--data", required=True, help="dataset file (JSON lines)")
    p.add_argument("--seg", nargs="+", default=[], help="segmenter checkpoint(s); several = ensemble")
    p.add_argument("--tag", nargs="+", default=[], help="tagger checkpoint(s); several = ensemble")
    p.add_argument("--config", help="JSON pipeline config; flags override it")
    p.add_argument("--boundary-threshold", type=float)
    p.add_argument("--score-threshold", type=float)
    p.add_argument("--min-gap", type=float)
    p.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adstruct", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-videos", type=int, default=50)
    p.add_argument("--t-min", type=int, default=48)
    p.add_argument("--t-max", type=int, default=112)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--vocab", type=int, default=200)
    p.add_argument("--rate", type=float, default=4.0)
    p.add_argument("--separation", type=float, default=4.0)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--sidecar", action="store_true", help="store features as .npy sidecars")
    p.set_defaults(func=cmd_gen_synthetic)

    for name, func, doc in (("train-seg", cmd_train_seg, "train the scene segmenter"),
                            ("train-tag", cmd_train_tag, "train the scene tagger")):
        p = sub.add_parser(name, help=doc)
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True, help="checkpoint path")
        p.add_argument("--config", help="JSON config file with a 'segmenter'/'tagger' section")
        p.add_argument("--resume", help="checkpoint to continue training from")
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--val-fraction", type=float, default=0.0)
        p.add_argument("--log", help="append per-epoch JSON lines here")
        if name == "train-seg":
            p.add_argument("--lr", type=float)
            p.add_argument("--loss", choices=["bce", "focal"])
            p.add_argument("--hidden", type=int)
            p.add_argument("--eval-every", type=int, default=10)
        else:
            p.add_argument("--lr-head", type=float)
            p.add_argument("--lr-rest", type=float)
            p.add_argument("--classes", type=int)
        p.set_defaults(func=func)

    p = sub.add_parser("predict", help="segment and tag every video")
    _add_predict_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score a prediction file against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", help="also write the JSON report here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="evaluate over a list of thresholds")
    _add_predict_args(p)
    p.add_argument("--thresholds", type=float, nargs="+", default=list(SWEEP_THRESHOLDS))
    p.add_argument("--which", choices=["score", "boundary"], default="score")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ConfigurationError, DimensionError, ContractError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (AdStructError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
