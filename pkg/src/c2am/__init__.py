"""Class-agnostic activation maps via cross-image foreground/background contrast.

Subpackage map:
    model        encoder, activation head, fg/bg disentangling
    loss         the contrastive objective with similarity rank weighting
    postprocess  binarization, connected components, polarity, pseudo boxes
    metrics      localization (GT-known / top-k / MaxBoxAccV2) and IoU/mIoU
    refine       background cues and CAM refinement
    synthetic    deterministic toy dataset generator
    train        training loop, checkpoints, map inference
    tensorio     the C2AM binary tensor format
    config       run configuration
    report       plots, JSON reports, run manifests
    cli          the `c2am` command
"""

__version__ = "0.1.0"
