"""Apply a trained checkpoint to photos, seen or unseen."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .checkpoint import Checkpoint
from .errors import RegionLookupError, ValidationError
from .images import to_tensor

DIRECTIONS = {"to_a": "a", "to_b": "b"}


@dataclass
class StylizeRequest:
    checkpoint: Checkpoint
    input: object
    direction: str = "to_a"
    masks: Optional[np.ndarray] = None


class Stylizer:
    """Forward-only wrapper around a checkpoint's networks.

    The pair is rebuilt once from the checkpoint tensors, so repeated calls
    share it and the checkpoint itself is never touched.
    """

    def __init__(self, checkpoint: Checkpoint):
        self.checkpoint = checkpoint
        self.pair = checkpoint.to_pair()
        self.pair.requires_grad_(False)

    def __call__(self, image, direction: str = "to_a", masks=None) -> torch.Tensor:
        if direction not in DIRECTIONS:
            raise ValidationError(f"direction must be 'to_a' or 'to_b', got {direction!r}")
        x = to_tensor(image, dtype=torch.float32)
        labels = None
        if masks is None:
            if len(self.pair.region_labels) > 1:
                raise ValidationError("this checkpoint has several regions; a label map for the input is required")
        else:
            labels = np.asarray(masks, dtype=np.int64)
            if labels.shape != tuple(x.shape[-2:]):
                raise ValidationError(f"label map is {labels.shape}, image is {tuple(x.shape[-2:])}")
            unknown = sorted(set(np.unique(labels).tolist()) - set(self.pair.region_labels))
            if unknown:
                raise RegionLookupError(f"labels {unknown} are not in the checkpoint's regions {list(self.pair.region_labels)}")
        with torch.no_grad():
            return self.pair.apply(DIRECTIONS[direction], x, labels)


def stylize(req: StylizeRequest, backbone=None) -> torch.Tensor:
    """Stylize ``req.input`` toward one of the checkpoint's two styles.

    ``backbone`` is accepted for interface symmetry and unused; inference is
    forward-only.
    """
    return Stylizer(req.checkpoint)(req.input, req.direction, req.masks)


def self_apply(ckpt: Checkpoint, side: str) -> torch.Tensor:
    """Run the style-``side`` network on its own training photo."""
    if side not in ("a", "b"):
        raise ValidationError(f"side must be 'a' or 'b', got {side!r}")
    if not ckpt.has_images():
        raise ValidationError("checkpoint does not carry its training images")
    return Stylizer(ckpt)(ckpt.image(side), f"to_{side}", ckpt.labels(side))
