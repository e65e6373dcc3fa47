"""Command-line interface.

Subcommands cover the full desk-scale pipeline: synthesize data, train,
infer activation maps, extract pseudo boxes, refine CAMs with background
cues, evaluate localization and segmentation, and emit plots.  Every run
writes a manifest.json (config snapshot + input hashes) into its output
directory.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import metrics, postprocess, refine, report
from .config import Config, apply_env, apply_overrides, load_config, write_config
from .data import load_class_csv, load_dataset, load_ranked_classes_csv
from .synthetic import generate_synthetic
from .tensorio import read_tensor
from .train import Checkpoint, infer_maps, train


def _build_config(args) -> Config:
    config = load_config(args.config) if args.config else apply_env(Config())
    overrides = {
        name: getattr(args, attr, None)
        for name, attr in [
            ("backbone", "backbone"),
            ("batch_size", "batch_size"),
            ("alpha", "alpha"),
            ("theta", "theta"),
            ("lr", "lr"),
            ("momentum", "momentum"),
            ("epochs", "epochs"),
            ("seed", "seed"),
            ("image_size", "image_size"),
            ("head_init", "head_init"),
            ("calibration_size", "calibration_size"),
            ("data_dir", "data"),
            ("out_dir", "out"),
        ]
    }
    return apply_env(apply_overrides(config, overrides))


def _add_config_flags(parser, with_training=True):
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--data", help="dataset directory (images/ plus optional masks/, labels/)")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--theta", type=float, help="binarization threshold in (0, 1)")
    parser.add_argument("--image-size", dest="image_size", type=int)
    parser.add_argument("--calibration-size", dest="calibration_size", type=int)
    if with_training:
        parser.add_argument("--backbone", help="builtin | features-dir:<path>")
        parser.add_argument("--batch-size", dest="batch_size", type=int)
        parser.add_argument("--alpha", type=float, help="rank-weight smoothness (>= 0)")
        parser.add_argument("--lr", type=float)
        parser.add_argument("--momentum", type=float)
        parser.add_argument("--epochs", type=int)
        parser.add_argument("--seed", type=int)
        parser.add_argument("--head-init", dest="head_init", choices=["kaiming_normal", "kaiming_uniform", "normal", "uniform"])


def _load_maps_dir(maps_dir) -> dict:
    maps_dir = Path(maps_dir)
    files = sorted(maps_dir.glob("*.c2am"))
    if not files:
        raise FileNotFoundError(f"no .c2am map files under {maps_dir}")
    return {p.stem: read_tensor(p) for p in files}


def _resolve_polarity_from_maps(maps: dict, theta: float, calibration_size: int):
    calib_ids = sorted(maps)[:calibration_size]
    return postprocess.resolve_polarity(
        [maps[i] for i in calib_ids], theta, min_maps=min(16, len(calib_ids))
    ), calib_ids


def cmd_synth(args) -> int:
    generate_synthetic(args.n, args.seed, args.out, image_size=args.image_size or 64)
    print(f"wrote {args.n} synthetic images to {args.out}")
    return 0


def cmd_train(args) -> int:
    config = _build_config(args)
    if not config.data_dir:
        raise SystemExit("error: train needs a dataset (--data or data_dir in the config)")
    checkpoint = train(config)
    out = Path(config.out_dir)
    write_config(config, out / "config.ini")
    report.write_manifest(out, "train", config.as_dict(), [config.data_dir, args.config])
    final = checkpoint.loss_history[-1]
    print(f"trained {config.epochs} epochs; final epoch mean total loss {final['l_total']:.6f}")
    print(f"checkpoint: {out / 'checkpoint.pt'}")
    return 0


def cmd_infer(args) -> int:
    checkpoint = Checkpoint.load(args.checkpoint)
    maps = infer_maps(checkpoint, args.data, args.out)
    report.write_manifest(args.out, "infer", checkpoint.config, [args.checkpoint, args.data])
    print(f"wrote {len(maps)} activation maps to {args.out}")
    return 0


def cmd_extract_boxes(args) -> int:
    if not args.out:
        raise SystemExit("error: --out is required")
    config = _build_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.maps:
        maps = _load_maps_dir(args.maps)
    else:
        if not (args.checkpoint and args.data):
            raise SystemExit("error: extract-boxes needs either --maps or --checkpoint with --data")
        checkpoint = Checkpoint.load(args.checkpoint)
        maps = infer_maps(checkpoint, args.data, out / "maps")
    polarity, calib_ids = _resolve_polarity_from_maps(maps, config.theta, config.calibration_size)

    theta = config.theta
    if args.calibrate_theta:
        if not args.data:
            raise SystemExit("error: --calibrate-theta needs --data with ground-truth masks")
        dataset = load_dataset(args.data)
        if not dataset.has_masks:
            raise SystemExit(f"error: no masks/ directory under {args.data} for theta calibration")
        gt = [dataset.load_mask(i) for i in calib_ids]
        calib_maps = [
            refine.bilinear_upsample(np.asarray(maps[i]).squeeze(), gt[0].shape) for i in calib_ids
        ]
        theta = postprocess.calibrate_theta(calib_maps, gt, polarity)
        print(f"calibrated theta = {theta:.2f}")

    image_size = (config.image_size, config.image_size)
    boxes = postprocess.generate_pseudo_boxes(maps, polarity, theta, image_size, out / "pred_boxes.csv")
    (out / "polarity.json").write_text(
        json.dumps(
            {
                "flipped": polarity.flipped,
                "votes_for": polarity.votes_for,
                "votes_against": polarity.votes_against,
                "calibration_size": polarity.calibration_size,
                "tied": polarity.tied,
                "theta": theta,
            },
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    report.write_manifest(out, "extract-boxes", config.as_dict(), [args.maps, args.checkpoint, args.data])
    print(f"wrote {len(boxes)} pseudo boxes to {out / 'pred_boxes.csv'} (flipped={polarity.flipped})")
    return 0


def cmd_refine_cam(args) -> int:
    if not args.out:
        raise SystemExit("error: --out is required")
    out = Path(args.out)
    labels_dir = out / "labels"
    labels_dir.mkdir(parents=True, exist_ok=True)
    cam_dir = Path(args.cams)
    ids = sorted(p.stem for p in cam_dir.glob("*.c2am"))
    if not ids:
        raise SystemExit(f"error: no CAM stacks under {cam_dir}")

    cues = {}
    if args.cues:
        for image_id in ids:
            cues[image_id] = refine.read_bg_png(Path(args.cues) / f"{image_id}.png")
    else:
        if not (args.checkpoint and args.data):
            raise SystemExit("error: refine-cam needs either --cues or --checkpoint with --data")
        checkpoint = Checkpoint.load(args.checkpoint)
        maps = infer_maps(checkpoint, args.data, out / "maps")
        config = _build_config(args)
        polarity, _ = _resolve_polarity_from_maps(maps, config.theta, config.calibration_size)
        dataset = load_dataset(args.data)
        cue_dir = out / "cues"
        cue_dir.mkdir(exist_ok=True)
        for image_id in ids:
            if image_id not in maps:
                raise SystemExit(f"error: no activation map for CAM stack {image_id!r}")
            cue = refine.extract_bg_cues(maps[image_id], polarity, (dataset.image_size, dataset.image_size))
            refine.export_bg_png(cue, cue_dir / f"{image_id}.png")
            cues[image_id] = cue

    for image_id in ids:
        stack = refine.load_cam_stack(cam_dir, image_id)
        labels = refine.refine_cam(stack, cues[image_id])
        refine.write_label_png(labels, labels_dir / f"{image_id}.png")
    report.write_manifest(out, "refine-cam", {}, [args.cams, args.cues, args.checkpoint, args.data])
    print(f"wrote {len(ids)} refined label maps to {labels_dir}")
    return 0


def cmd_eval_wsol(args) -> int:
    preds_multi = postprocess.read_box_csv(args.pred)
    preds = {i: boxes[0] for i, boxes in preds_multi.items()}
    gts = postprocess.read_box_csv(args.gt)
    payload = {
        "n_images": len(preds),
        "gt_known": metrics.gt_known_loc(preds, gts),
    }
    if args.ranked_classes and args.gt_classes:
        ranked = load_ranked_classes_csv(args.ranked_classes)
        gt_classes = load_class_csv(args.gt_classes)
        payload["top1"] = metrics.topk_loc(preds, gts, gt_classes, ranked, k=1)
        payload["top5"] = metrics.topk_loc(preds, gts, gt_classes, ranked, k=5)
    if args.maps:
        if not args.image_size:
            raise SystemExit("error: --maps needs --image-size to scale boxes")
        maps = _load_maps_dir(args.maps)
        if args.polarity:
            flipped = json.loads(Path(args.polarity).read_text(encoding="utf-8"))["flipped"]
            if flipped:
                maps = {i: 1.0 - np.asarray(m) for i, m in maps.items()}
        payload["max_box_acc_v2"] = metrics.max_box_acc_v2(
            maps, gts, (args.image_size, args.image_size)
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_json_report(out / "wsol.json", payload)
    report.write_manifest(out, "eval-wsol", {}, [args.pred, args.gt, args.maps, args.ranked_classes, args.gt_classes])
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def cmd_eval_wsss(args) -> int:
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    ids = sorted(p.stem for p in gt_dir.glob("*.png"))
    if not ids:
        raise SystemExit(f"error: no label PNGs under {gt_dir}")
    confusion = np.zeros((args.num_classes, args.num_classes), dtype=np.int64)
    for image_id in ids:
        gt = refine.read_label_png(gt_dir / f"{image_id}.png")
        pred = refine.read_label_png(pred_dir / f"{image_id}.png")
        confusion += metrics.confusion_matrix(gt, pred, args.num_classes)
    iou, miou = metrics.seg_iou(confusion)
    payload = {
        "n_images": len(ids),
        "per_class_iou": {str(c): (None if np.isnan(v) else float(v)) for c, v in enumerate(iou)},
        "miou": miou,
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_json_report(out / "wsss.json", payload)
    report.write_manifest(out, "eval-wsss", {"num_classes": args.num_classes}, [args.pred, args.gt])
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def cmd_report(args) -> int:
    if not args.out:
        raise SystemExit("error: --out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    made_something = False
    if args.loss_csv:
        report.plot_loss_curve(args.loss_csv, out / "loss_curve.png")
        print(f"wrote {out / 'loss_curve.png'}")
        made_something = True
    sweep_csv = args.alpha_sweep_csv
    if args.sweep_alphas:
        config = _build_config(args)
        if not (config.data_dir and args.eval_data):
            raise SystemExit("error: an alpha sweep needs --data (training) and --eval-data")
        alphas = [float(a) for a in args.sweep_alphas.replace(",", " ").split()]
        sweep_csv = out / "alpha_sweep.csv"
        report.run_alpha_sweep(config, alphas, args.eval_data, sweep_csv, epochs=args.sweep_epochs)
        print(f"wrote {sweep_csv}")
        made_something = True
    if sweep_csv:
        report.plot_alpha_sweep(sweep_csv, out / "alpha_sweep.png")
        print(f"wrote {out / 'alpha_sweep.png'}")
        made_something = True
    if not made_something:
        raise SystemExit("error: nothing to report; pass --loss-csv, --alpha-sweep-csv or --sweep-alphas")
    report.write_manifest(out, "report", {}, [args.loss_csv, args.alpha_sweep_csv])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="c2am",
        description="Class-agnostic activation maps from foreground/background contrast",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic shapes dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--image-size", dest="image_size", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the activation map network")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="write per-image activation maps from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("extract-boxes", help="resolve polarity and extract pseudo boxes")
    _add_config_flags(p, with_training=False)
    p.add_argument("--checkpoint")
    p.add_argument("--maps", help="directory of precomputed activation maps")
    p.add_argument("--calibrate-theta", action="store_true", help="pick theta on the calibration split (needs masks)")
    p.set_defaults(func=cmd_extract_boxes)

    p = sub.add_parser("refine-cam", help="refine CAM stacks with background cues")
    _add_config_flags(p, with_training=False)
    p.add_argument("--cams", required=True, help="directory of CAM stacks (*.c2am + *.json)")
    p.add_argument("--cues", help="directory of background-cue PNGs (else computed from --checkpoint)")
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_refine_cam)

    p = sub.add_parser("eval-wsol", help="localization metrics from box tables")
    p.add_argument("--pred", required=True, help="predicted box CSV")
    p.add_argument("--gt", required=True, help="ground-truth box CSV (multi-box)")
    p.add_argument("--ranked-classes", help="CSV image_id,class_rank_1..k from a classifier")
    p.add_argument("--gt-classes", help="CSV image_id,class_id")
    p.add_argument("--maps", help="activation-map directory for MaxBoxAccV2")
    p.add_argument("--polarity", help="polarity.json from extract-boxes")
    p.add_argument("--image-size", dest="image_size", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval_wsol)

    p = sub.add_parser("eval-wsss", help="segmentation IoU/mIoU from label maps")
    p.add_argument("--pred", required=True, help="predicted label PNG directory")
    p.add_argument("--gt", required=True, help="ground-truth label PNG directory")
    p.add_argument("--num-classes", dest="num_classes", type=int, required=True, help="including background")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval_wsss)

    p = sub.add_parser("report", help="emit loss-curve / alpha-sweep plots")
    _add_config_flags(p)
    p.add_argument("--loss-csv", dest="loss_csv")
    p.add_argument("--alpha-sweep-csv", dest="alpha_sweep_csv")
    p.add_argument("--sweep-alphas", dest="sweep_alphas", help="comma-separated alphas to train and score")
    p.add_argument("--sweep-epochs", dest="sweep_epochs", type=int)
    p.add_argument("--eval-data", dest="eval_data")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
