"""Synthetic shapes-on-textures dataset.

Desk-scale stand-in for real localization data: warm-colored foreground
shapes (two families) composited onto cool-colored background textures (two
families), so foregrounds resemble other foregrounds and backgrounds other
backgrounds.  Ground-truth masks and tight boxes come for free.

Layout written under out_dir:
    images/<id>.png    RGB image
    masks/<id>.png     binary mask (0 / 255)
    labels/<id>.png    indexed label map (0 = background, else the class id)
    boxes.csv          image_id,xmin,ymin,xmax,ymax
    classes.csv        image_id,class_id   (class = foreground family, 1-based)
    manifest.json      generator parameters
"""

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .postprocess import BoundingBox, write_box_csv
from .refine import write_label_png

# declared minimum Euclidean RGB distance between fg and bg mean colors
COLOR_SEPARATION_MARGIN = 0.25

FG_FAMILIES = ("ellipse", "diamond")
BG_FAMILIES = ("gradient", "stripes")


@dataclass
class SyntheticSample:
    image: np.ndarray  # (3, H, W) float in [0, 1]
    gt_mask: np.ndarray  # (H, W) uint8 in {0, 1}
    gt_box: BoundingBox
    fg_family: str
    bg_family: str


def _gradient_background(rng, size):
    h, w = size, size
    top = np.array([rng.uniform(0.05, 0.25), rng.uniform(0.35, 0.55), rng.uniform(0.55, 0.8)])
    bottom = np.array([rng.uniform(0.1, 0.3), rng.uniform(0.5, 0.7), rng.uniform(0.4, 0.6)])
    t = np.linspace(0.0, 1.0, h)[:, None, None]  # vertical blend
    img = (1 - t) * top[None, None, :] + t * bottom[None, None, :]
    img = np.broadcast_to(img, (h, w, 3)) + rng.normal(0.0, 0.02, size=(h, w, 3))
    return img


def _stripes_background(rng, size):
    h, w = size, size
    c0 = np.array([rng.uniform(0.2, 0.35), rng.uniform(0.15, 0.3), rng.uniform(0.35, 0.55)])
    c1 = np.array([rng.uniform(0.3, 0.45), rng.uniform(0.3, 0.45), rng.uniform(0.5, 0.7)])
    period = rng.integers(6, 13)
    yy, xx = np.mgrid[0:h, 0:w]
    phase = ((yy + xx) // period) % 2  # diagonal stripes
    img = np.where(phase[..., None] == 0, c0[None, None, :], c1[None, None, :])
    img = img + rng.normal(0.0, 0.02, size=(h, w, 3))
    return img


def _shape_mask(rng, size, family):
    h = w = size
    frac = rng.uniform(0.12, 0.30)  # target area fraction
    aspect = rng.uniform(0.6, 1.6)
    if family == "ellipse":
        a = np.sqrt(frac * h * w * aspect / np.pi)
    else:  # diamond area = 2ab
        a = np.sqrt(frac * h * w * aspect / 2.0)
    b = a / aspect
    cx = rng.uniform(0.32 * w, 0.68 * w)
    cy = rng.uniform(0.32 * h, 0.68 * h)
    # keep the shape strictly inside the frame
    a = min(a, cx - 1.0, w - 2.0 - cx)
    b = min(b, cy - 1.0, h - 2.0 - cy)
    yy, xx = np.mgrid[0:h, 0:w]
    if family == "ellipse":
        inside = ((xx - cx) / a) ** 2 + ((yy - cy) / b) ** 2 <= 1.0
    else:
        inside = np.abs(xx - cx) / a + np.abs(yy - cy) / b <= 1.0
    return inside.astype(np.uint8)


def _fg_color(rng, family):
    if family == "ellipse":  # warm reds
        return np.array([rng.uniform(0.75, 0.95), rng.uniform(0.15, 0.35), rng.uniform(0.05, 0.25)])
    return np.array([rng.uniform(0.85, 1.0), rng.uniform(0.7, 0.9), rng.uniform(0.05, 0.25)])


def tight_box(mask: np.ndarray) -> BoundingBox:
    ys, xs = np.nonzero(mask)
    return BoundingBox(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))


def make_sample(rng, size: int) -> SyntheticSample:
    fg_family = FG_FAMILIES[rng.integers(0, 2)]
    bg_family = BG_FAMILIES[rng.integers(0, 2)]
    bg = _gradient_background(rng, size) if bg_family == "gradient" else _stripes_background(rng, size)
    mask = _shape_mask(rng, size, fg_family)
    color = _fg_color(rng, fg_family)
    img = bg.copy()
    img[mask.astype(bool)] = color[None, :] + rng.normal(0.0, 0.03, size=(int(mask.sum()), 3))
    img = np.clip(img, 0.0, 1.0)
    return SyntheticSample(
        image=img.transpose(2, 0, 1),
        gt_mask=mask,
        gt_box=tight_box(mask),
        fg_family=fg_family,
        bg_family=bg_family,
    )


def generate_synthetic(n_images: int, seed: int, out_dir, image_size: int = 64) -> list:
    """Write a deterministic dataset of n_images samples; returns their metadata."""
    out = Path(out_dir)
    for sub in ("images", "masks", "labels"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    boxes, classes, records = {}, {}, []
    for i in range(n_images):
        sample = make_sample(rng, image_size)
        image_id = f"img_{i:05d}"
        pixels = np.floor(sample.image.transpose(1, 2, 0) * 255.0 + 0.5).astype(np.uint8)
        Image.fromarray(pixels).save(out / "images" / f"{image_id}.png")
        Image.fromarray(sample.gt_mask * 255).save(out / "masks" / f"{image_id}.png")
        class_id = FG_FAMILIES.index(sample.fg_family) + 1
        write_label_png(sample.gt_mask.astype(np.int64) * class_id, out / "labels" / f"{image_id}.png")
        boxes[image_id] = sample.gt_box
        classes[image_id] = class_id
        records.append((image_id, sample.fg_family, sample.bg_family, sample.gt_box))
    write_box_csv(out / "boxes.csv", boxes)
    with open(out / "classes.csv", "w", encoding="utf-8", newline="\n") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["image_id", "class_id"])
        for image_id in sorted(classes):
            writer.writerow([image_id, classes[image_id]])
    manifest = {
        "kind": "synthetic",
        "n_images": n_images,
        "seed": seed,
        "image_size": image_size,
        "fg_families": list(FG_FAMILIES),
        "bg_families": list(BG_FAMILIES),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return records
