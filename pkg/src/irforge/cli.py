"""Command-line entry point: ``irforge <subcommand> ...``.

Exit codes: 0 on success, 1 on invalid input or usage, 2 on I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .compose import bag_cp_augment
from .dataset import ConfigError, GenerationConfig, emit_dataset
from .exchange import ExchangeConfig, ExchangeParams, exchange_forward, save_params
from .exchange.core import MECHANISMS, SELECTIONS
from .exchange.reference import exchange_reference
from .library import load_library, write_toy_inputs
from .metrics import INTERPOLATIONS, average_precision, evaluate, load_ground_truth, \
    load_predictions, recall_at
from .rng import derive_stream
from .stats import dataset_stats
from .types import Annotation, GrayImage, SkyMask

log = logging.getLogger("irforge")

REFERENCE_TARGETS = 13655
REFERENCE_IMAGES = 1024
REFERENCE_CONTRAST_BELOW_2 = 0.90


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _float_pair(text):
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected LO,HI, got {text!r}")
    return [float(p) for p in parts]


def _add_layout_flags(p):
    g = p.add_argument_group("cluster layout")
    g.add_argument("--region-size", type=int, help="dense-area side in px (default 20)")
    g.add_argument("--clusters-min", type=int, help="dense areas per image, lower bound (default 1)")
    g.add_argument("--clusters-max", type=int, help="dense areas per image, upper bound (default 3)")
    g.add_argument("--targets-min", type=int, help="targets per dense area, lower bound (default 8)")
    g.add_argument("--targets-max", type=int, help="targets per dense area, upper bound (default 12)")
    g.add_argument("--chip-min", type=int, help="smallest resized chip side in px (default 1)")
    g.add_argument("--chip-max", type=int, help="largest resized chip side in px (default 5)")
    g.add_argument("--spacing-min", type=int, help="min border gap between targets in px (default 1)")
    g.add_argument("--spacing-max", type=int, help="max gap to the nearest neighbour in px (default 2)")
    g = p.add_argument_group("blend parameters, each as LO,HI")
    g.add_argument("--rho-range", type=_float_pair, help="Gaussian peak offset / chip size (default 0,0.2)")
    g.add_argument("--sigma-range", type=_float_pair, help="Gaussian spread / chip size (default 0.3,0.6)")
    g.add_argument("--theta-range", type=_float_pair, help="rotation in degrees (default -90,90)")
    g.add_argument("--lambda-range", type=_float_pair, help="brightness factor (default 0.5,1)")
    p.add_argument("--mask-threshold", type=float,
                   help="added intensity at which a pasted pixel joins the target mask (default 5)")
    p.add_argument("--no-sky-only", dest="sky_only", action="store_false", default=None,
                   help="paste anywhere instead of sky regions only")


_LAYOUT_KEYS = [f.name for f in fields(GenerationConfig)
                if f.name not in ("seed", "base_dir", "mask_dir", "library_dir", "out_dir", "splits")]


def _overrides(args) -> dict:
    return {k: getattr(args, k) for k in _LAYOUT_KEYS if getattr(args, k, None) is not None}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="irforge", description="Clustered infrared small-target toolkit.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a clustered small-target dataset")
    p.add_argument("--config", help="generation config JSON")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.add_argument("--base-dir")
    p.add_argument("--mask-dir")
    p.add_argument("--library-dir")
    p.add_argument("--demo", type=int, metavar="N",
                   help="first write N synthetic base scenes, masks and a chip library under OUT/inputs")
    _add_layout_flags(p)

    p = sub.add_parser("augment", help="background-aware copy-paste on one image")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True, help="sky mask PNG (white = sky)")
    p.add_argument("--annotation", help="existing annotation directory")
    p.add_argument("--library", required=True, help="chip library directory")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_layout_flags(p)

    p = sub.add_parser("exchange-demo", help="run the feature exchange on random maps")
    p.add_argument("--c", type=int, default=8)
    p.add_argument("--h", type=int, default=4)
    p.add_argument("--w", type=int, default=4)
    p.add_argument("--p", type=float, default=0.5, help="exchange fraction (default 1/2)")
    p.add_argument("--mechanism", choices=sorted(MECHANISMS), default="channel")
    p.add_argument("--selection", choices=SELECTIONS, default="dynamic")
    p.add_argument("--adapter-hidden", type=int, default=64)
    p.add_argument("--no-adapter", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="directory for weights.bin (+ .json sidecar)")

    p = sub.add_parser("eval", help="AP and recall of detections against a dataset tree")
    p.add_argument("--pred", required=True, help="JSON array of {image_id, bbox, score}")
    p.add_argument("--gt", required=True, help="dataset root containing annotations/")
    p.add_argument("--iou", type=float, help="also report AP/recall at this IoU threshold")
    p.add_argument("--interp", choices=INTERPOLATIONS, default="allpoint")
    p.add_argument("--format", choices=("json", "csv"), default="json")

    p = sub.add_parser("stats", help="size, contrast and brightness statistics of a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="write the JSON report here as stats.json")
    return parser


def _synth(args) -> int:
    data = {}
    if args.config:
        with open(args.config) as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ConfigError(f"{args.config}: top level must be an object")
    for key, flag in (("seed", "seed"), ("out_dir", "out"), ("base_dir", "base_dir"),
                      ("mask_dir", "mask_dir"), ("library_dir", "library_dir")):
        if getattr(args, flag) is not None:
            data[key] = getattr(args, flag)
    data.update(_overrides(args))
    if args.demo:
        if "out_dir" not in data:
            raise ConfigError("--demo needs --out")
        seed = data.get("seed", 0)
        data.update(write_toy_inputs(Path(data["out_dir"]) / "inputs", args.demo, seed=seed))
    cfg = GenerationConfig.from_dict(data)
    manifest = emit_dataset(cfg)
    n = len(manifest["images"])
    summary = {
        "images": n,
        "skipped": len(manifest["skipped"]),
        "total_targets": manifest["total_targets"],
        "mean_targets_per_image": manifest["total_targets"] / n if n else 0.0,
        "reference_mean_targets_per_image": REFERENCE_TARGETS / REFERENCE_IMAGES,
        "out_dir": cfg.out_dir,
    }
    print(json.dumps(summary, indent=2))
    return 0


def _augment(args) -> int:
    img = GrayImage.load(args.image)
    mask = SkyMask.load(args.mask)
    ann = Annotation.load(args.annotation) if args.annotation else Annotation.empty(*img.shape)
    cfg = GenerationConfig.from_dict(_overrides(args))
    out_img, out_ann = bag_cp_augment(
        img, mask, ann, load_library(args.library), cfg.cluster_spec(),
        derive_stream(args.seed, 0), cfg.param_ranges(),
        sky_only=cfg.sky_only, mask_threshold=cfg.mask_threshold,
    )
    out = Path(args.out)
    out_img.save(out / "image.png")
    out_ann.save(out / "annotation")
    print(json.dumps({"targets_before": len(ann), "targets_after": len(out_ann)}))
    return 0


def _exchange_demo(args) -> int:
    cfg = ExchangeConfig(args.p, args.mechanism, args.selection, args.adapter_hidden,
                         not args.no_adapter)
    rng = derive_stream(args.seed, 0)
    params = ExchangeParams.random(args.c, args.adapter_hidden, rng)
    x1 = rng.standard_normal((args.c, args.h, args.w))
    x2 = rng.standard_normal((args.c, args.h, args.w))
    y1, y2, cache = exchange_forward(x1, x2, cfg, params, derive_stream(args.seed, 1))
    r1, r2 = exchange_reference(x1, x2, cfg, params, derive_stream(args.seed, 1))
    first = cache.stages[0]
    result = {
        "mechanism": cfg.mechanism,
        "selection": cfg.selection,
        "m": cache.m1.tolist(),
        "m2": cache.m2.tolist(),
        "I_topk": first.selection1.indices.tolist(),
        "I_topk2": first.selection2.indices.tolist(),
        "near_tie": cache.near_tie,
        "max_abs_diff_vs_oracle": float(max(np.abs(y1 - r1).max(), np.abs(y2 - r2).max())),
    }
    if args.out:
        save_params(params, Path(args.out) / "weights.bin")
    print(json.dumps(result, indent=2))
    return 0


def _eval(args) -> int:
    preds = load_predictions(args.pred)
    gts = load_ground_truth(args.gt)
    report = evaluate(preds, gts)
    if args.format == "csv":
        text = report.to_csv()
        if args.iou is not None:
            ap = average_precision(preds, gts, args.iou, args.interp)
            text += f"ap@{args.iou}/{args.interp},{ap:.6f}\nrecall@{args.iou},{recall_at(preds, gts, args.iou):.6f}\n"
        sys.stdout.write(text)
        return 0
    out = report.to_dict()
    if args.iou is not None:
        out["selected"] = {
            "iou": args.iou,
            "interp": args.interp,
            "ap": average_precision(preds, gts, args.iou, args.interp),
            "recall": recall_at(preds, gts, args.iou),
        }
    print(json.dumps(out, indent=2))
    return 0


def _stats(args) -> int:
    stats = dataset_stats(args.data).to_dict()
    stats["reference"] = {
        "fraction_contrast_below_2": REFERENCE_CONTRAST_BELOW_2,
        "targets_per_image": REFERENCE_TARGETS / REFERENCE_IMAGES,
    }
    text = json.dumps(stats, indent=2)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "stats.json").write_text(text + "\n")
    print(text)
    return 0


COMMANDS = {
    "synth": _synth,
    "augment": _augment,
    "exchange-demo": _exchange_demo,
    "eval": _eval,
    "stats": _stats,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except OSError as exc:
        print(f"irforge: I/O error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, TypeError, KeyError) as exc:
        print(f"irforge: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
