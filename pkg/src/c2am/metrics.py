"""Localization and segmentation metrics.

Boxes use inclusive pixel coordinates, so a box's area is
(xmax - xmin + 1) * (ymax - ymin + 1).  A localization counts as correct at
threshold delta when the predicted box reaches IoU >= delta against at least
one ground-truth box of the image.
"""

from dataclasses import dataclass

import numpy as np

from .postprocess import BoundingBox, binarize, map_to_box
from .refine import bilinear_upsample

MBAV2_IOU_THRESHOLDS = (0.3, 0.5, 0.7)
MBAV2_TAUS = tuple(np.round(np.arange(0.0, 1.0, 0.05), 2))


@dataclass
class LocResult:
    gt_known: float
    top1: float
    top5: float
    n_images: int

    def as_dict(self) -> dict:
        return {
            "gt_known": self.gt_known,
            "top1": self.top1,
            "top5": self.top5,
            "n_images": self.n_images,
        }


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two inclusive-coordinate boxes."""
    ix = min(a.xmax, b.xmax) - max(a.xmin, b.xmin) + 1
    iy = min(a.ymax, b.ymax) - max(a.ymin, b.ymin) + 1
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    area_a = (a.xmax - a.xmin + 1) * (a.ymax - a.ymin + 1)
    area_b = (b.xmax - b.xmin + 1) * (b.ymax - b.ymin + 1)
    return inter / (area_a + area_b - inter)


def _best_iou(pred: BoundingBox, gt_boxes) -> float:
    return max(box_iou(pred, gt) for gt in gt_boxes)


def gt_known_loc(preds: dict, gts: dict, delta: float = 0.5) -> float:
    """Fraction of images whose predicted box reaches IoU >= delta with a GT box.

    preds: {image_id: BoundingBox}; gts: {image_id: [BoundingBox, ...]}.
    """
    if not preds:
        raise ValueError("no predictions")
    missing = sorted(set(preds) - set(gts))
    if missing:
        raise KeyError(f"images without ground-truth boxes: {missing[:5]}")
    correct = sum(1 for i, p in preds.items() if _best_iou(p, gts[i]) >= delta)
    return correct / len(preds)


def topk_loc(preds: dict, gts: dict, gt_classes: dict, ranked_classes: dict, k: int, delta: float = 0.5) -> float:
    """Fraction correct on both class (GT class within top-k) and box (IoU >= delta).

    ranked_classes: {image_id: [class ids best-first]} from an external
    classifier; gt_classes: {image_id: class id}.
    """
    if not preds:
        raise ValueError("no predictions")
    correct = 0
    for image_id, pred in preds.items():
        if image_id not in ranked_classes:
            raise KeyError(f"no class predictions for image {image_id!r}")
        if image_id not in gt_classes:
            raise KeyError(f"no ground-truth class for image {image_id!r}")
        if image_id not in gts:
            raise KeyError(f"no ground-truth boxes for image {image_id!r}")
        cls_ok = gt_classes[image_id] in ranked_classes[image_id][:k]
        if cls_ok and _best_iou(pred, gts[image_id]) >= delta:
            correct += 1
    return correct / len(preds)


def max_box_acc_v2(maps: dict, gts: dict, image_size, taus=MBAV2_TAUS, deltas=MBAV2_IOU_THRESHOLDS) -> float:
    """Mean over IoU ratios of the best accuracy across binarization thresholds.

    For every threshold tau the per-image box is extracted with the standard
    pipeline (binarize, largest component, tight box; full-image fallback for
    degenerate maps); acc(tau, delta) is the fraction of images whose box
    reaches IoU >= delta, and the score averages max_tau acc(tau, delta) over
    the three ratios.
    """
    if not maps:
        raise ValueError("no activation maps")
    missing = sorted(set(maps) - set(gts))
    if missing:
        raise KeyError(f"images without ground-truth boxes: {missing[:5]}")
    ids = sorted(maps)
    # best IoU per (tau, image), then thresholded per delta
    ious = np.zeros((len(taus), len(ids)))
    for t, tau in enumerate(taus):
        for j, image_id in enumerate(ids):
            box, _ = map_to_box(np.asarray(maps[image_id]).squeeze(), float(tau), image_size)
            ious[t, j] = _best_iou(box, gts[image_id])
    score = 0.0
    for delta in deltas:
        acc_per_tau = (ious >= delta).mean(axis=1)
        score += acc_per_tau.max()
    return score / len(deltas)


def confusion_matrix(gt_labels, pred_labels, num_classes: int) -> np.ndarray:
    """Pixel confusion counts; rows = GT class, cols = predicted class.

    num_classes includes the background class 0.  Accepts single label maps
    or iterables of them.
    """
    gt = np.asarray(gt_labels)
    pred = np.asarray(pred_labels)
    if gt.shape != pred.shape:
        raise ValueError(f"label map shapes differ: {gt.shape} vs {pred.shape}")
    gt = gt.ravel().astype(np.int64)
    pred = pred.ravel().astype(np.int64)
    if gt.min() < 0 or gt.max() >= num_classes or pred.min() < 0 or pred.max() >= num_classes:
        raise ValueError(f"labels outside [0, {num_classes})")
    counts = np.bincount(num_classes * gt + pred, minlength=num_classes**2)
    return counts.reshape(num_classes, num_classes)


def seg_iou(confusion: np.ndarray):
    """Per-class IoU and mIoU from a confusion matrix.

    IoU_c = TP / (TP + FP + FN).  Classes absent from both GT and prediction
    get NaN and are excluded from the mean.
    """
    confusion = np.asarray(confusion, dtype=np.float64)
    if confusion.sum() == 0:
        raise ValueError("empty confusion matrix")
    tp = np.diag(confusion)
    denom = confusion.sum(axis=0) + confusion.sum(axis=1) - tp
    iou = np.full(len(tp), np.nan)
    present = denom > 0
    iou[present] = tp[present] / denom[present]
    return iou, float(np.nanmean(iou))


def mask_iou(a, b) -> float:
    """IoU of two binary masks (any nonzero counts as set)."""
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(a, b).sum() / union)


def binarized_map_ious(maps: dict, gt_masks: dict, flipped: bool, theta: float) -> dict:
    """Per-image IoU of the polarity-corrected, upsampled, binarized map vs GT mask."""
    ious = {}
    for image_id, p in maps.items():
        p = np.asarray(p, dtype=np.float64).squeeze()
        if flipped:
            p = 1.0 - p
        gt = np.asarray(gt_masks[image_id]).astype(bool)
        upsampled = bilinear_upsample(p, gt.shape) if p.shape != gt.shape else p
        ious[image_id] = mask_iou(binarize(upsampled, theta).data, gt)
    return ious
