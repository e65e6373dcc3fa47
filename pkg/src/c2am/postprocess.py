"""From activation maps to binary masks, polarity decisions and pseudo boxes.

The trained map is polarity-ambiguous (the objective is symmetric under
swapping foreground and background), so a calibration pass votes on which of
P / 1-P is foreground before any boxes are extracted: the candidate whose
largest connected component touches the map border least is taken as the
object side.
"""

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import ndimage

EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


class BoundingBox(NamedTuple):
    """Inclusive pixel-coordinate rectangle."""

    xmin: int
    ymin: int
    xmax: int
    ymax: int


@dataclass
class BinaryMask:
    data: np.ndarray  # (H, W) uint8 in {0, 1}
    threshold_used: float
    degenerate: bool = False  # constant input map; mask is all zeros


@dataclass
class PolarityDecision:
    flipped: bool  # True: foreground = 1 - P
    votes_for: int  # votes in favor of flipping
    votes_against: int
    calibration_size: int
    tied: bool = False


def minmax_normalize(values: np.ndarray):
    """Scale to [0, 1] per map; returns (normalized, is_constant)."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = values.min(), values.max()
    if hi - lo == 0:
        return np.zeros_like(values), True
    return (values - lo) / (hi - lo), False


def binarize(p, theta: float) -> BinaryMask:
    """Threshold a map at theta after per-map min-max normalization.

    A constant map cannot be normalized and yields an all-zero mask flagged
    degenerate.
    """
    if not 0.0 <= theta < 1.0:
        raise ValueError(f"theta must lie in [0, 1), got {theta}")
    p = np.asarray(p, dtype=np.float64)
    if p.ndim == 3 and p.shape[0] == 1:
        p = p[0]
    if p.ndim != 2:
        raise ValueError(f"expected an H x W map, got shape {p.shape}")
    normalized, constant = minmax_normalize(p)
    if constant:
        return BinaryMask(np.zeros(p.shape, dtype=np.uint8), theta, degenerate=True)
    return BinaryMask((normalized >= theta).astype(np.uint8), theta)


def largest_component(mask: BinaryMask) -> BinaryMask:
    """Keep only the largest 8-connected component of set pixels.

    Size ties go to the component whose first pixel comes earliest in
    row-major order.
    """
    data = mask.data
    if data.sum() == 0:
        raise ValueError("mask has no set pixels")
    labels, _ = ndimage.label(data, structure=EIGHT_CONNECTED)
    sizes = np.bincount(labels.ravel())[1:]  # skip background label 0
    best_size = sizes.max()
    candidates = np.flatnonzero(sizes == best_size) + 1
    flat = labels.ravel()
    winner = min(candidates, key=lambda lab: int(np.argmax(flat == lab)))
    return BinaryMask((labels == winner).astype(np.uint8), mask.threshold_used)


def extract_bbox(mask: BinaryMask, image_size) -> BoundingBox:
    """Tight inclusive box around set pixels, rescaled to image coordinates.

    image_size is (H_img, W_img).  A mask pixel (r, c) is treated as covering
    image rows [r*s, (r+1)*s - 1] for stride s = H_img / H; box edges are
    linearly scaled, rounded to nearest and clipped to the image bounds.
    """
    ys, xs = np.nonzero(mask.data)
    if len(ys) == 0:
        raise ValueError("cannot extract a box from an empty mask")
    h_img, w_img = image_size
    sy = h_img / mask.data.shape[0]
    sx = w_img / mask.data.shape[1]
    xmin = int(np.rint(xs.min() * sx))
    xmax = int(np.rint((xs.max() + 1) * sx)) - 1
    ymin = int(np.rint(ys.min() * sy))
    ymax = int(np.rint((ys.max() + 1) * sy)) - 1
    return BoundingBox(
        xmin=max(0, min(xmin, w_img - 1)),
        ymin=max(0, min(ymin, h_img - 1)),
        xmax=max(0, min(xmax, w_img - 1)),
        ymax=max(0, min(ymax, h_img - 1)),
    )


def full_image_box(image_size) -> BoundingBox:
    h_img, w_img = image_size
    return BoundingBox(0, 0, w_img - 1, h_img - 1)


def border_contact_ratio(component: np.ndarray) -> float:
    """Fraction of a component's pixels lying on the map boundary."""
    ys, xs = np.nonzero(component)
    h, w = component.shape
    on_border = (ys == 0) | (ys == h - 1) | (xs == 0) | (xs == w - 1)
    return float(on_border.sum()) / len(ys)


def _foreground_vote(p: np.ndarray, theta: float):
    """Vote whether 1-P looks more like foreground than P (None = abstain)."""
    ratios = {}
    for flipped, candidate in ((False, p), (True, 1.0 - np.asarray(p, dtype=np.float64))):
        mask = binarize(candidate, theta)
        if mask.degenerate or mask.data.sum() == 0:
            continue
        ratios[flipped] = border_contact_ratio(largest_component(mask).data)
    if len(ratios) < 2 or ratios[True] == ratios[False]:
        return None
    return ratios[True] < ratios[False]


def resolve_polarity(maps, theta: float = 0.5, min_maps: int = 16) -> PolarityDecision:
    """Majority vote over a calibration set on whether foreground is 1 - P.

    Per map, both polarities are binarized and the one whose largest
    component touches the border least is voted foreground.  An exact tie
    keeps P as foreground and is recorded.
    """
    maps = list(maps)
    if len(maps) < min_maps:
        raise ValueError(f"calibration set too small: {len(maps)} < {min_maps}")
    votes_for = votes_against = 0
    for p in maps:
        vote = _foreground_vote(np.asarray(p, dtype=np.float64).squeeze(), theta)
        if vote is True:
            votes_for += 1
        elif vote is False:
            votes_against += 1
    tied = votes_for == votes_against
    return PolarityDecision(
        flipped=votes_for > votes_against,
        votes_for=votes_for,
        votes_against=votes_against,
        calibration_size=len(maps),
        tied=tied,
    )


def map_to_box(p, theta: float, image_size):
    """binarize -> largest component -> box; full-image fallback on degenerate maps.

    Returns (box, warning_or_None).
    """
    mask = binarize(p, theta)
    if mask.degenerate or mask.data.sum() == 0:
        return full_image_box(image_size), "empty mask after thresholding; used full-image box"
    return extract_bbox(largest_component(mask), image_size), None


def generate_pseudo_boxes(maps: dict, polarity: PolarityDecision, theta: float, image_size, out_csv) -> dict:
    """Extract one class-agnostic box per image and write the box table.

    maps: {image_id: activation map (H x W or 1 x H x W)}.  Rows are written
    sorted by image id; warnings go to a ``<out_csv>.warnings.txt`` sidecar.
    Returns {image_id: BoundingBox}.
    """
    out_csv = Path(out_csv)
    boxes = {}
    warnings = []
    for image_id in sorted(maps):
        p = np.asarray(maps[image_id], dtype=np.float64).squeeze()
        if polarity.flipped:
            p = 1.0 - p
        box, warning = map_to_box(p, theta, image_size)
        boxes[image_id] = box
        if warning:
            warnings.append(f"{image_id}: {warning}")
    write_box_csv(out_csv, boxes)
    if warnings:
        sidecar = out_csv.with_suffix(out_csv.suffix + ".warnings.txt")
        sidecar.write_text("\n".join(warnings) + "\n", encoding="utf-8")
    return boxes


def write_box_csv(path, boxes: dict) -> None:
    """Box table: header image_id,xmin,ymin,xmax,ymax; UTF-8; LF line endings."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["image_id", "xmin", "ymin", "xmax", "ymax"])
        for image_id in sorted(boxes):
            b = boxes[image_id]
            writer.writerow([image_id, b.xmin, b.ymin, b.xmax, b.ymax])


def read_box_csv(path) -> dict:
    """Read a box table; returns {image_id: [BoundingBox, ...]} (multi-box allowed)."""
    boxes = {}
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        required = {"image_id", "xmin", "ymin", "xmax", "ymax"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(f"{path}: expected header with columns {sorted(required)}")
        for row in reader:
            box = BoundingBox(int(row["xmin"]), int(row["ymin"]), int(row["xmax"]), int(row["ymax"]))
            boxes.setdefault(row["image_id"], []).append(box)
    return boxes


def calibrate_theta(maps, gt_masks, polarity: PolarityDecision, thetas=None) -> float:
    """Pick the threshold maximizing median mask IoU on a calibration split.

    Requires ground-truth masks, so it only applies to datasets that ship
    them (e.g. the synthetic benchmark).  maps and gt_masks are aligned
    lists; maps are compared at mask resolution (upsample upstream).
    """
    if thetas is None:
        thetas = np.round(np.arange(0.05, 1.0, 0.05), 2)
    best_theta, best_score = None, -1.0
    for theta in thetas:
        ious = []
        for p, gt in zip(maps, gt_masks):
            p = np.asarray(p, dtype=np.float64).squeeze()
            if polarity.flipped:
                p = 1.0 - p
            mask = binarize(p, float(theta)).data.astype(bool)
            gt = np.asarray(gt).astype(bool)
            union = np.logical_or(mask, gt).sum()
            ious.append(np.logical_and(mask, gt).sum() / union if union else 0.0)
        score = float(np.median(ious))
        if score > best_score:
            best_theta, best_score = float(theta), score
    return best_theta
