"""Dataset ingestion: a directory of images plus optional masks/labels/boxes.

Images are normalized to [-1, 1] for the encoder.  The same layout covers
the synthetic generator output and VOC-style image+indexed-mask directories.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image


@dataclass
class ImageDataset:
    root: Path
    ids: list
    image_size: int
    has_masks: bool = False
    has_labels: bool = False
    _extensions: dict = field(default_factory=dict, repr=False)

    def image_path(self, image_id):
        ext = self._extensions.get(image_id, ".png")
        return self.root / "images" / f"{image_id}{ext}"

    def load_image(self, image_id) -> np.ndarray:
        """(3, H, W) float32 in [-1, 1]."""
        arr = np.asarray(Image.open(self.image_path(image_id)).convert("RGB"), dtype=np.float32)
        return (arr / 255.0 - 0.5) / 0.5

    def load_image_chw(self, image_id) -> np.ndarray:
        return self.load_image(image_id).transpose(2, 0, 1)

    def load_mask(self, image_id) -> np.ndarray:
        """(H, W) uint8 in {0, 1}; any nonzero mask pixel counts as set."""
        path = self.root / "masks" / f"{image_id}.png"
        return (np.asarray(Image.open(path).convert("L")) > 0).astype(np.uint8)

    def load_label_map(self, image_id) -> np.ndarray:
        path = self.root / "labels" / f"{image_id}.png"
        return np.asarray(Image.open(path), dtype=np.int64)


def load_dataset(root) -> ImageDataset:
    """Image directory (png/jpg, square, one size) plus optional masks/labels."""
    root = Path(root)
    image_dir = root / "images"
    if not image_dir.is_dir():
        raise FileNotFoundError(f"no images/ directory under {root}")
    extensions = {}
    for pattern in ("*.png", "*.jpg", "*.jpeg"):
        for path in image_dir.glob(pattern):
            extensions.setdefault(path.stem, path.suffix)
    if not extensions:
        raise FileNotFoundError(f"no images under {image_dir}")
    ids = sorted(extensions)
    with Image.open(image_dir / f"{ids[0]}{extensions[ids[0]]}") as probe:
        w, h = probe.size
    if w != h:
        raise ValueError(f"expected square images, got {w}x{h} (resize before ingestion)")
    return ImageDataset(
        root=root,
        ids=ids,
        image_size=h,
        has_masks=(root / "masks").is_dir(),
        has_labels=(root / "labels").is_dir(),
        _extensions=extensions,
    )


def load_class_csv(path) -> dict:
    """image_id,class_id rows -> {image_id: int}."""
    classes = {}
    with open(path, encoding="utf-8", newline="") as f:
        for row in csv.DictReader(f):
            classes[row["image_id"]] = int(row["class_id"])
    return classes


def load_ranked_classes_csv(path) -> dict:
    """image_id,class_rank_1,...,class_rank_k rows -> {image_id: [ids best-first]}."""
    ranked = {}
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        rank_cols = sorted(
            (c for c in reader.fieldnames or [] if c.startswith("class_rank_")),
            key=lambda c: int(c.rsplit("_", 1)[1]),
        )
        if not rank_cols:
            raise ValueError(f"{path}: no class_rank_* columns")
        for row in reader:
            ranked[row["image_id"]] = [int(row[c]) for c in rank_cols]
    return ranked


def batch_ids(ids, batch_size: int, rng=None):
    """Yield id batches, shuffled when an rng is given; singleton tails are dropped."""
    order = list(ids)
    if rng is not None:
        order = [order[i] for i in rng.permutation(len(order))]
    for start in range(0, len(order), batch_size):
        chunk = order[start : start + batch_size]
        if len(chunk) >= 2:
            yield chunk
