"""Disentangler: encoder, activation head and the foreground/background split.

The encoder maps an image to a C x H x W feature map and ends in a ReLU so
features are nonnegative; that keeps every cosine similarity downstream in
[0, 1].  The activation head is a 3x3 convolution with batch normalization,
squashed through a sigmoid so the single-channel activation map lies in
[0, 1].  The map P and its complement 1 - P split the flattened feature map
into one foreground and one background vector per image:

    v_f[c] = sum_hw P[hw] * Z[c, hw],    v_b[c] = sum_hw (1 - P[hw]) * Z[c, hw]
"""

from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn as nn

from .tensorio import read_tensor


@dataclass
class FeatureMap:
    """Per-image encoder output (C x H x W tensor) plus its spatial stride."""

    data: torch.Tensor
    stride: int


@dataclass
class FgBgRepresentation:
    """Foreground/background vectors of one image; v_f + v_b is the spatial sum of Z."""

    v_f: torch.Tensor
    v_b: torch.Tensor


class SmallEncoder(nn.Module):
    """Four strided conv blocks (overall stride 16), ReLU-terminated.

    A desk-scale trainable stand-in for a large pretrained backbone.
    Kernel 2 / stride 2 convolutions tile the image into non-overlapping
    blocks: feature cell (i, j) is a function of exactly its own
    stride x stride patch, centered at ((i + 0.5) * stride, (j + 0.5) * stride),
    which lines up with half-pixel-center bilinear upsampling and keeps the
    activation map a per-patch content classifier.
    """

    def __init__(self, in_channels: int = 3, widths=(16, 32, 64, 64)):
        super().__init__()
        layers = []
        c_in = in_channels
        for w in widths:
            layers += [
                nn.Conv2d(c_in, w, 2, stride=2),
                nn.BatchNorm2d(w),
                nn.ReLU(inplace=True),
            ]
            c_in = w
        self.net = nn.Sequential(*layers)
        self.in_channels = in_channels
        self.out_channels = widths[-1]
        self.stride = 2 ** len(widths)
        for m in self.modules():
            if isinstance(m, nn.Conv2d) and m.bias is not None:
                nn.init.zeros_(m.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:  # (n, 3, H_img, W_img) -> (n, C, H, W)
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValueError(f"expected (n, {self.in_channels}, H, W) input, got {tuple(x.shape)}")
        return self.net(x)


class FeatureDirEncoder:
    """Encoder handle backed by precomputed per-image feature files.

    Each image id maps to ``<root>/<id>.c2am`` holding a C x H x W tensor.
    """

    def __init__(self, root, image_size: int):
        self.root = Path(root)
        self.image_size = image_size
        first = sorted(self.root.glob("*.c2am"))
        if not first:
            raise FileNotFoundError(f"no .c2am feature files under {self.root}")
        probe = read_tensor(first[0])
        if probe.ndim != 3:
            raise ValueError(f"feature files must be C x H x W, got shape {probe.shape}")
        self.out_channels = probe.shape[0]
        if image_size % probe.shape[1] != 0:
            raise ValueError(
                f"image size {image_size} is not a multiple of feature size {probe.shape[1]}"
            )
        self.stride = image_size // probe.shape[1]

    def load(self, image_id: str) -> torch.Tensor:
        path = self.root / f"{image_id}.c2am"
        if not path.exists():
            raise FileNotFoundError(f"missing precomputed features for {image_id!r}: {path}")
        feats = torch.from_numpy(read_tensor(path))
        if feats.shape[0] != self.out_channels:
            raise ValueError(
                f"{path}: expected {self.out_channels} channels, got {feats.shape[0]}"
            )
        return feats


class ActivationHead(nn.Module):
    """3x3 conv + batch norm + sigmoid producing the single-channel map in [0, 1]."""

    def __init__(self, in_channels: int):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, 1, 3, padding=1)
        self.bn = nn.BatchNorm2d(1)
        nn.init.zeros_(self.conv.bias)

    def forward(self, z: torch.Tensor) -> torch.Tensor:  # (n, C, H, W) -> (n, 1, H, W)
        if z.shape[1] != self.conv.in_channels:
            raise ValueError(
                f"head expects {self.conv.in_channels} channels, got {z.shape[1]}"
            )
        return torch.sigmoid(self.bn(self.conv(z)))

    def logits(self, z: torch.Tensor) -> torch.Tensor:
        """Pre-sigmoid activations; useful for gradient diagnostics."""
        return self.bn(self.conv(z))


HEAD_INIT_SCHEMES = ("kaiming_normal", "kaiming_uniform", "normal", "uniform")


def init_activation_head(head: ActivationHead, scheme: str = "kaiming_normal") -> None:
    """Re-initialize the head conv under one of the four supported schemes.

    Batch-norm weight/bias are always reset to 1/0 and the conv bias to 0.
    """
    w = head.conv.weight
    if scheme == "kaiming_normal":
        nn.init.kaiming_normal_(w)
    elif scheme == "kaiming_uniform":
        nn.init.kaiming_uniform_(w)
    elif scheme == "normal":
        nn.init.normal_(w)
    elif scheme == "uniform":
        nn.init.uniform_(w)
    else:
        raise ValueError(f"unknown init scheme {scheme!r}; choose from {HEAD_INIT_SCHEMES}")
    nn.init.zeros_(head.conv.bias)
    nn.init.ones_(head.bn.weight)
    nn.init.zeros_(head.bn.bias)


def disentangle(z, p) -> FgBgRepresentation:
    """Split one feature map into its foreground/background vectors.

    z: (C, H, W) features, p: (1, H, W) or (H, W) activation map.  Plain
    matrix product of the flattened map against the flattened features; no
    normalization by activated area.
    """
    z = torch.as_tensor(z)
    p = torch.as_tensor(p)
    if p.ndim == 3:
        p = p.squeeze(0)
    if z.ndim != 3 or p.shape != z.shape[1:]:
        raise ValueError(f"spatial mismatch: features {tuple(z.shape)}, map {tuple(p.shape)}")
    z_flat = z.reshape(z.shape[0], -1)  # (C, HW)
    p_flat = p.reshape(-1).to(z_flat.dtype)  # (HW,)
    return FgBgRepresentation(v_f=z_flat @ p_flat, v_b=z_flat @ (1.0 - p_flat))


def disentangle_batch(z: torch.Tensor, p: torch.Tensor):
    """Batched split: (n, C, H, W) x (n, 1, H, W) -> v_f, v_b each (n, C)."""
    if z.shape[0] != p.shape[0] or z.shape[2:] != p.shape[2:]:
        raise ValueError(f"spatial mismatch: features {tuple(z.shape)}, maps {tuple(p.shape)}")
    p_flat = p.reshape(p.shape[0], -1)  # (n, HW)
    z_flat = z.reshape(z.shape[0], z.shape[1], -1)  # (n, C, HW)
    v_f = torch.bmm(z_flat, p_flat.unsqueeze(2)).squeeze(2)
    v_b = torch.bmm(z_flat, (1.0 - p_flat).unsqueeze(2)).squeeze(2)
    return v_f, v_b


class C2AMNet(nn.Module):
    """Builtin encoder + activation head trained jointly."""

    def __init__(self, in_channels: int = 3, widths=(16, 32, 64, 64), head_init: str = "kaiming_normal"):
        super().__init__()
        self.encoder = SmallEncoder(in_channels, widths)
        self.head = ActivationHead(self.encoder.out_channels)
        init_activation_head(self.head, head_init)
        self.stride = self.encoder.stride

    def forward(self, x: torch.Tensor):
        z = self.encoder(x)  # (n, C, H, W)
        p = self.head(z)  # (n, 1, H, W)
        return z, p


def encode(batch_data: torch.Tensor, backbone, ids=None) -> list:
    """Run the encoder handle over a batch, returning one FeatureMap per image.

    ``backbone`` is either a SmallEncoder/C2AMNet-style module or a
    FeatureDirEncoder (which needs ``ids`` to locate the stored tensors).
    """
    if isinstance(backbone, FeatureDirEncoder):
        if ids is None:
            raise ValueError("precomputed-feature encoder needs image ids")
        return [FeatureMap(backbone.load(i), backbone.stride) for i in ids]
    module = backbone.encoder if isinstance(backbone, C2AMNet) else backbone
    z = module(batch_data)
    return [FeatureMap(z[i], module.stride) for i in range(z.shape[0])]
