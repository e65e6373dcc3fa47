"""Report emission: JSON metric reports, run manifests and PNG plots."""

import csv
import hashlib
import json
from dataclasses import replace
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def write_json_report(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def hash_input(path) -> dict:
    """Digest of a file, or of a directory's sorted (name, file digest) pairs."""
    path = Path(path)
    if path.is_dir():
        digest = hashlib.sha256()
        for child in sorted(p for p in path.rglob("*") if p.is_file()):
            digest.update(str(child.relative_to(path)).encode())
            digest.update(bytes.fromhex(_sha256_file(child)))
        return {"path": str(path), "kind": "dir", "sha256": digest.hexdigest()}
    return {"path": str(path), "kind": "file", "sha256": _sha256_file(path)}


def write_manifest(out_dir, command: str, config: dict, inputs) -> Path:
    """Record what produced this output directory: command, config, input hashes."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": config,
        "inputs": [hash_input(p) for p in inputs if p is not None],
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_loss_log(path) -> list:
    rows = []
    with open(path, encoding="utf-8", newline="") as f:
        for row in csv.DictReader(f):
            rows.append({k: (int(v) if k in ("epoch", "step") else float(v)) for k, v in row.items()})
    return rows


def plot_loss_curve(loss_csv, out_png) -> None:
    """Per-step total loss with per-epoch means overlaid."""
    rows = read_loss_log(loss_csv)
    if not rows:
        raise ValueError(f"{loss_csv} has no rows")
    steps = [r["step"] for r in rows]
    totals = [r["l_total"] for r in rows]
    epochs = sorted({r["epoch"] for r in rows})
    epoch_means = [np.mean([r["l_total"] for r in rows if r["epoch"] == e]) for e in epochs]
    epoch_steps = [np.mean([r["step"] for r in rows if r["epoch"] == e]) for e in epochs]

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, totals, lw=0.8, alpha=0.5, label="total loss (per step)")
    ax.plot(epoch_steps, epoch_means, "o-", color="tab:red", label="epoch mean")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)


def plot_alpha_sweep(sweep_csv, out_png) -> None:
    """Metric-vs-alpha curve from rows alpha,median_iou."""
    alphas, scores = [], []
    with open(sweep_csv, encoding="utf-8", newline="") as f:
        for row in csv.DictReader(f):
            alphas.append(float(row["alpha"]))
            scores.append(float(row["median_iou"]))
    if not alphas:
        raise ValueError(f"{sweep_csv} has no rows")
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(alphas, scores, "o-")
    ax.set_xlabel("alpha (rank-weight smoothness)")
    ax.set_ylabel("held-out median mask IoU")
    ax.set_ylim(0.0, 1.0)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)


def run_alpha_sweep(base_config, alphas, eval_data_dir, out_csv, epochs=None) -> list:
    """Train once per alpha and score held-out median mask IoU; write the CSV.

    Intended for small desk-scale sweeps; epochs can be reduced from the base
    config to keep the sweep cheap.
    """
    from .data import load_dataset
    from .metrics import binarized_map_ious
    from .postprocess import resolve_polarity
    from .train import infer_maps, train

    rows = []
    out_csv = Path(out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    eval_dataset = load_dataset(eval_data_dir)
    gt_masks = {i: eval_dataset.load_mask(i) for i in eval_dataset.ids}
    for alpha in alphas:
        config = replace(base_config, alpha=float(alpha))
        if epochs is not None:
            config = replace(config, epochs=epochs)
        run_dir = Path(config.out_dir) / f"alpha_{alpha:g}"
        checkpoint = train(config, out_dir=run_dir)
        maps = infer_maps(checkpoint, eval_data_dir, run_dir / "maps")
        calib = [maps[i] for i in sorted(maps)[: config.calibration_size]]
        polarity = resolve_polarity(calib, config.theta, min_maps=min(16, len(calib)))
        ious = binarized_map_ious(maps, gt_masks, polarity.flipped, config.theta)
        rows.append({"alpha": float(alpha), "median_iou": float(np.median(list(ious.values())))})
    with open(out_csv, "w", encoding="utf-8", newline="\n") as f:
        writer = csv.DictWriter(f, fieldnames=["alpha", "median_iou"], lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return rows
