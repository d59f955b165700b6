"""Evaluation metrics: reconstruction PSNR, Gram distance, saturation histograms."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
import torch

from .backbone import Backbone, extract_features
from .checkpoint import Checkpoint
from .errors import ValidationError
from .images import to_numpy, to_tensor
from .inference import Stylizer
from .losses import style_loss

# psnr of identical images; serialized as the string "identical"
IDENTICAL = math.inf


def _array(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        return to_numpy(x).astype(np.float64)
    return np.asarray(x, dtype=np.float64)


def psnr(x, y) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1]."""
    a, b = _array(x), _array(y)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return IDENTICAL
    return 10.0 * math.log10(1.0 / mse)


def rgb_to_hsv(image) -> np.ndarray:
    """Vectorized RGB -> HSV with all channels in [0, 1]."""
    rgb = _array(image)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    delta = mx - mn
    safe = np.where(delta > 0, delta, 1.0)
    s = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)
    rc, gc, bc = (mx - r) / safe, (mx - g) / safe, (mx - b) / safe
    h = np.where(r == mx, bc - gc, np.where(g == mx, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, mx], axis=-1)


def saturation_hist_distance(x, y, bins: int = 32) -> float:
    """L1 distance between normalized HSV-saturation histograms (range [0, 2])."""
    if bins < 2:
        raise ValidationError(f"bins must be >= 2, got {bins}")
    hx, _ = np.histogram(rgb_to_hsv(x)[..., 1], bins=bins, range=(0.0, 1.0))
    hy, _ = np.histogram(rgb_to_hsv(y)[..., 1], bins=bins, range=(0.0, 1.0))
    return float(np.abs(hx / hx.sum() - hy / hy.sum()).sum())


def style_gram_distance(x, style, backbone: Backbone, masks_x=None, masks_style=None) -> float:
    """Style loss between an image and a style photo."""
    with torch.no_grad():
        return float(style_loss(extract_features(backbone, x), extract_features(backbone, style), masks_x, masks_style))


@dataclass
class EvalReport:
    self_psnr_a: float
    self_psnr_b: float
    cycle_psnr_a: float
    cycle_psnr_b: float
    style_gram_dist_to_a: float
    style_gram_dist_to_b: float
    sat_hist_dist: float

    def to_dict(self) -> dict:
        return {k: ("identical" if v == IDENTICAL else v) for k, v in asdict(self).items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def evaluate(ckpt: Checkpoint, backbone: Backbone, x_a=None, x_b=None, bins: int = 32) -> EvalReport:
    """Measure self/cycle reconstruction, residual style distance and saturation match.

    Training photos come from the checkpoint unless given explicitly.
    ``sat_hist_dist`` averages the two directions' stylized-vs-style distances.
    """
    xa = to_tensor(x_a) if x_a is not None else ckpt.image("a")
    xb = to_tensor(x_b) if x_b is not None else ckpt.image("b")
    la, lb = ckpt.labels("a"), ckpt.labels("b")
    net = Stylizer(ckpt)
    ba = net(xb, "to_a", lb)
    ab = net(xa, "to_b", la)
    return EvalReport(
        self_psnr_a=psnr(net(xa, "to_a", la), xa),
        self_psnr_b=psnr(net(xb, "to_b", lb), xb),
        cycle_psnr_a=psnr(net(ab, "to_a", la), xa),
        cycle_psnr_b=psnr(net(ba, "to_b", lb), xb),
        style_gram_dist_to_a=style_gram_distance(ba, xa, backbone, lb, la),
        style_gram_dist_to_b=style_gram_distance(ab, xb, backbone, la, lb),
        sat_hist_dist=0.5 * (saturation_hist_distance(ba, xa, bins) + saturation_hist_distance(ab, xb, bins)),
    )
