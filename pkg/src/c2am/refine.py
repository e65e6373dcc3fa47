"""Background cues and CAM refinement.

The complement of the polarity-corrected activation map is a per-pixel
backgroundness score.  Stacking that cue on top of the per-class CAMs and
taking the channel argmax relabels pixels where the cue dominates as
background, removing false background activation from the initial CAMs.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .postprocess import PolarityDecision, minmax_normalize
from .tensorio import read_tensor, write_tensor

# 8-bit palette for indexed label PNGs: background black, classes cycle hues.
_PALETTE_BASE = [
    (0, 0, 0), (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
    (210, 245, 60), (250, 190, 190), (0, 128, 128), (170, 110, 40),
]


@dataclass
class CamStack:
    """Per-image class activation maps, one per present class, each in [0, 1]."""

    class_ids: list
    maps: np.ndarray  # (K, H, W)

    def __post_init__(self):
        self.maps = np.asarray(self.maps, dtype=np.float64)
        if self.maps.ndim != 3 or self.maps.shape[0] != len(self.class_ids):
            raise ValueError(
                f"need one map per class id: {len(self.class_ids)} ids, maps {self.maps.shape}"
            )
        if len(self.class_ids) < 1:
            raise ValueError("a CAM stack needs at least one class")
        if len(set(self.class_ids)) != len(self.class_ids):
            raise ValueError("duplicate class ids")
        if 0 in self.class_ids:
            raise ValueError("class id 0 is reserved for background")


def bilinear_upsample(values: np.ndarray, out_size) -> np.ndarray:
    """Bilinear resize of an H x W array (half-pixel-center convention)."""
    t = torch.as_tensor(np.asarray(values, dtype=np.float64))[None, None]
    out = F.interpolate(t, size=tuple(out_size), mode="bilinear", align_corners=False)
    return out[0, 0].numpy()


def extract_bg_cues(p, polarity: PolarityDecision, image_size) -> np.ndarray:
    """Backgroundness map in [0, 1] at image resolution (higher = background).

    The cue is 1 minus the polarity-corrected foreground map, bilinearly
    upsampled to the image size.
    """
    p = np.asarray(p, dtype=np.float64).squeeze()
    if p.ndim != 2:
        raise ValueError(f"expected an H x W activation map, got shape {p.shape}")
    p_fg = 1.0 - p if polarity.flipped else p
    cue = bilinear_upsample(1.0 - p_fg, image_size)
    return np.clip(cue, 0.0, 1.0)


def refine_cam(cam: CamStack, cue: np.ndarray) -> np.ndarray:
    """Channel argmax over [cue, class maps]; ties favor background, then lower ids.

    Returns an integer label map (0 = background, otherwise a class id from
    the stack).
    """
    cue = np.asarray(cue, dtype=np.float64)
    if cue.shape != cam.maps.shape[1:]:
        raise ValueError(f"cue shape {cue.shape} does not match CAMs {cam.maps.shape[1:]}")
    order = np.argsort(cam.class_ids, kind="stable")
    ids_sorted = np.asarray(cam.class_ids)[order]
    maps_sorted = cam.maps[order]
    best_idx = maps_sorted.argmax(axis=0)  # first (= lowest id) wins class ties
    best_val = np.take_along_axis(maps_sorted, best_idx[None], axis=0)[0]
    labels = ids_sorted[best_idx].astype(np.int64)
    labels[cue >= best_val] = 0  # cue-vs-class ties go to background
    return labels


def export_bg_png(cue: np.ndarray, path) -> None:
    """Write the cue as 8-bit grayscale, 255 = background, 0 = foreground."""
    cue = np.asarray(cue, dtype=np.float64)
    if cue.min() < 0 or cue.max() > 1:
        raise ValueError("cue values must lie in [0, 1]")
    # round half up so a 0.5 cue maps to 128
    pixels = np.floor(255.0 * cue + 0.5).astype(np.uint8)
    Image.fromarray(pixels, mode="L").save(path)


def read_bg_png(path) -> np.ndarray:
    """Inverse of export_bg_png up to quantization."""
    return np.asarray(Image.open(path).convert("L"), dtype=np.float64) / 255.0


def label_palette(num_classes: int) -> list:
    flat = []
    for i in range(256):
        r, g, b = _PALETTE_BASE[i % len(_PALETTE_BASE)] if i < num_classes else (0, 0, 0)
        flat += [r, g, b]
    return flat


def write_label_png(labels: np.ndarray, path) -> None:
    """Indexed 8-bit PNG with class ids as palette indices (0 = background)."""
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() > 255:
        raise ValueError("label ids must fit in 8 bits")
    img = Image.fromarray(labels.astype(np.uint8), mode="P")
    img.putpalette(label_palette(int(labels.max()) + 1))
    img.save(path)


def read_label_png(path) -> np.ndarray:
    img = Image.open(path)
    if img.mode not in ("P", "L"):
        raise ValueError(f"{path}: expected an indexed or grayscale label PNG, got mode {img.mode}")
    return np.asarray(img, dtype=np.int64)


def save_cam_stack(cam: CamStack, directory, image_id: str) -> None:
    """Tensor file per image plus a JSON sidecar listing the class ids."""
    directory = Path(directory)
    write_tensor(directory / f"{image_id}.c2am", cam.maps.astype(np.float32))
    sidecar = {"class_ids": [int(c) for c in cam.class_ids]}
    (directory / f"{image_id}.json").write_text(json.dumps(sidecar), encoding="utf-8")


def load_cam_stack(directory, image_id: str, normalize: bool = True) -> CamStack:
    """Read a stored CAM stack; maps are min-max normalized per class by default."""
    directory = Path(directory)
    maps = read_tensor(directory / f"{image_id}.c2am").astype(np.float64)
    sidecar = json.loads((directory / f"{image_id}.json").read_text(encoding="utf-8"))
    if normalize:
        maps = np.stack([minmax_normalize(m)[0] for m in maps])
    return CamStack(class_ids=list(sidecar["class_ids"]), maps=maps)
