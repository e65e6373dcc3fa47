"""Training loop, checkpointing and activation-map inference."""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import Config
from .data import ImageDataset, batch_ids, load_dataset
from .loss import total_loss
from .model import (
    ActivationHead,
    C2AMNet,
    FeatureDirEncoder,
    disentangle_batch,
    init_activation_head,
)
from .tensorio import write_tensor

LOSS_LOG_HEADER = ("epoch", "step", "l_neg", "l_pos_f", "l_pos_b", "l_total")


class TrainingDiverged(RuntimeError):
    """Raised when the loss turns non-finite."""


@dataclass
class Checkpoint:
    encoder_state: dict  # empty when training on precomputed features
    head_state: dict
    config: dict
    epoch: int
    loss_history: list  # per-epoch mean loss components

    def save(self, path) -> None:
        torch.save(
            {
                "encoder_state": self.encoder_state,
                "head_state": self.head_state,
                "config": self.config,
                "epoch": self.epoch,
                "loss_history": self.loss_history,
            },
            path,
        )

    @classmethod
    def load(cls, path) -> "Checkpoint":
        payload = torch.load(path, map_location="cpu", weights_only=True)
        return cls(**payload)


def build_model(config: Config):
    """Instantiate the network (and feature source) described by the config.

    Returns (model, feature_encoder); feature_encoder is None for the
    builtin backbone, in which case the model is the joint encoder+head net.
    """
    if config.backbone == "builtin":
        return C2AMNet(widths=config.encoder_widths, head_init=config.head_init), None
    if config.backbone.startswith("features-dir:"):
        handle = FeatureDirEncoder(config.backbone.split(":", 1)[1], config.image_size)
        head = ActivationHead(handle.out_channels)
        init_activation_head(head, config.head_init)
        return head, handle
    raise ValueError(f"unknown backbone {config.backbone!r}")


def model_from_checkpoint(checkpoint: Checkpoint):
    config = Config(**{**checkpoint.config, "encoder_widths": tuple(checkpoint.config["encoder_widths"])})
    model, handle = build_model(config)
    if handle is None:
        model.encoder.load_state_dict(checkpoint.encoder_state)
        model.head.load_state_dict(checkpoint.head_state)
    else:
        model.load_state_dict(checkpoint.head_state)
    model.eval()
    return model, handle, config


def _forward_batch(model, handle, dataset: ImageDataset, ids):
    images = torch.from_numpy(np.stack([dataset.load_image_chw(i) for i in ids]))
    if handle is None:
        z, p = model(images)
    else:
        z = torch.stack([handle.load(i) for i in ids])
        p = model(z)
    return z, p


def train(config: Config, out_dir=None) -> Checkpoint:
    """Run the contrastive training loop; returns the final checkpoint.

    Writes loss_log.csv and checkpoint.pt under out_dir (default
    config.out_dir); the checkpoint is refreshed every epoch.
    """
    out = Path(out_dir if out_dir is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(config.data_dir)
    if dataset.image_size != config.image_size:
        raise ValueError(
            f"dataset images are {dataset.image_size}px but config.image_size is {config.image_size}"
        )
    torch.manual_seed(config.seed)
    model, handle = build_model(config)
    shuffle_rng = np.random.default_rng(config.seed)
    optimizer = torch.optim.SGD(model.parameters(), lr=config.lr, momentum=config.momentum)

    history = []
    checkpoint = None
    with open(out / "loss_log.csv", "w", encoding="utf-8", newline="\n") as log:
        writer = csv.writer(log, lineterminator="\n")
        writer.writerow(LOSS_LOG_HEADER)
        step = 0
        for epoch in range(1, config.epochs + 1):
            model.train()
            epoch_rows = []
            for ids in batch_ids(dataset.ids, config.batch_size, shuffle_rng):
                z, p = _forward_batch(model, handle, dataset, ids)
                v_f, v_b = disentangle_batch(z, p)
                breakdown = total_loss(v_f, v_b, config.alpha)
                if not torch.isfinite(breakdown.l_total):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch} step {step}: {breakdown.as_floats()}"
                    )
                optimizer.zero_grad()
                breakdown.l_total.backward()
                optimizer.step()
                values = breakdown.as_floats()
                writer.writerow(
                    [epoch, step, values["l_neg"], values["l_pos_f"], values["l_pos_b"], values["l_total"]]
                )
                epoch_rows.append(values)
                step += 1
            if not epoch_rows:
                raise ValueError(
                    f"no usable batches: {len(dataset.ids)} images with batch_size {config.batch_size}"
                )
            means = {
                key: float(np.mean([r[key] for r in epoch_rows]))
                for key in ("l_neg", "l_pos_f", "l_pos_b", "l_pos", "l_total")
            }
            history.append({"epoch": epoch, **means})
            checkpoint = Checkpoint(
                encoder_state=model.encoder.state_dict() if handle is None else {},
                head_state=model.head.state_dict() if handle is None else model.state_dict(),
                config=config.as_dict(),
                epoch=epoch,
                loss_history=history,
            )
            checkpoint.save(out / "checkpoint.pt")
    return checkpoint


def infer_maps(checkpoint: Checkpoint, data_dir, out_dir) -> dict:
    """Write one activation-map tensor file per image; returns {id: map (1,H,W)}.

    Runs in eval mode (frozen normalization statistics), so repeated calls
    produce bit-identical files.
    """
    model, handle, config = model_from_checkpoint(checkpoint)
    dataset = load_dataset(data_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    maps = {}
    with torch.no_grad():
        for ids in _chunks(dataset.ids, max(config.batch_size, 2)):
            _, p = _forward_batch(model, handle, dataset, ids)
            for image_id, pm in zip(ids, p):
                arr = pm.numpy().astype(np.float32)  # (1, H, W)
                write_tensor(out / f"{image_id}.c2am", arr)
                maps[image_id] = arr
    return maps


def _chunks(items, size):
    for start in range(0, len(items), size):
        yield items[start : start + size]
