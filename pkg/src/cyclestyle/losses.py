"""Perceptual content and Gram style losses, and the composite training loss.

Network arguments named ``g_a`` / ``g_b`` are callables ``g(image, labels)``
taking a ``(1, 3, H, W)`` tensor and that image's label map (or ``None``);
:meth:`StyleNetworkPair.transfer` produces them, and :func:`identity` is the
trivial one.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np
import torch

from .backbone import Backbone, FeaturePyramid
from .errors import CorrespondenceError, DegenerateRegionError, DivergenceError, ValidationError
from .images import to_tensor
from .regions import RegionMaskSet, downsample_labels

log = logging.getLogger(__name__)

Network = Callable[..., torch.Tensor]


def identity(image, labels=None):
    return image


@dataclass(frozen=True)
class LossWeights:
    lambda_c: float = 1.0
    lambda_s: float = 1.0
    lambda_L: float = 0.0

    def __post_init__(self):
        for name in ("lambda_c", "lambda_s", "lambda_L"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValidationError(f"{name} must be a finite nonnegative number, got {v}")
        if self.lambda_L != 0:
            # the matting Laplacian term is not implemented
            raise ValidationError("lambda_L must be 0; the matting Laplacian regularizer is not supported")

    def to_dict(self) -> dict:
        return asdict(self)


class SubLossId(str, Enum):
    CYCLE_B = "cycle_b"
    CYCLE_A = "cycle_a"
    SELF_A = "self_a"
    SELF_B = "self_b"
    STYLE_BA = "style_ba"
    STYLE_AB = "style_ab"

    @property
    def is_style(self) -> bool:
        return self in (SubLossId.STYLE_BA, SubLossId.STYLE_AB)

    def weight(self, weights: LossWeights) -> float:
        return weights.lambda_s if self.is_style else weights.lambda_c


SUBLOSS_IDS: Tuple[SubLossId, ...] = tuple(SubLossId)


@dataclass
class GramMatrix:
    values: torch.Tensor
    mass: float


def _entries(p) -> Mapping[str, torch.Tensor]:
    return p.entries if isinstance(p, FeaturePyramid) else p


def content_loss(f, g) -> torch.Tensor:
    """Sum over layers of the per-element mean squared feature difference."""
    fe, ge = _entries(f), _entries(g)
    if set(fe) != set(ge):
        raise ValidationError(f"pyramids have different layers: {sorted(fe)} vs {sorted(ge)}")
    total = None
    for name in sorted(fe):
        a, b = fe[name], ge[name]
        if a.shape != b.shape:
            raise ValidationError(f"layer {name}: shape {tuple(a.shape)} vs {tuple(b.shape)}")
        term = (a - b).pow(2).sum() / a[0].numel() if a.dim() == 4 else (a - b).pow(2).mean()
        total = term if total is None else total + term
    return total


def gram(feature: torch.Tensor, mask=None) -> GramMatrix:
    """Mask-weighted Gram matrix normalized by channel count and mask mass."""
    if feature.dim() == 4:
        if feature.shape[0] != 1:
            raise ValidationError("gram expects a single feature map")
        feature = feature[0]
    c, h, w = feature.shape
    flat = feature.reshape(c, h * w)
    if mask is None:
        mass = float(h * w)
        rows = flat
    else:
        m = torch.as_tensor(mask, dtype=feature.dtype, device=feature.device)
        if tuple(m.shape) != (h, w):
            raise ValidationError(f"mask shape {tuple(m.shape)} does not match feature size {(h, w)}")
        mass = float(m.sum())
        if mass <= 0:
            raise DegenerateRegionError("mask has zero mass; drop the region")
        rows = flat * m.reshape(1, h * w).sqrt()
    g = rows @ rows.T
    g = 0.5 * (g + g.T) / (c * mass)
    return GramMatrix(g, mass)


def _region_labels(labels_f, labels_s) -> Tuple[int, ...]:
    set_f = set(np.unique(labels_f).tolist())
    set_s = set(np.unique(labels_s).tolist())
    if set_f != set_s:
        raise CorrespondenceError(f"regions differ between images: {sorted(set_f)} vs {sorted(set_s)}")
    return tuple(sorted(set_f))


def style_loss(f, style, masks_f=None, masks_style=None, style_grams=None) -> torch.Tensor:
    """Squared Frobenius distance between Gram matrices, summed over layers and regions.

    ``masks_f``/``masks_style`` are label maps at the source images'
    resolution; ``None`` for both means one whole-image region. A region that
    vanishes at some layer's resolution is skipped there with a warning.
    ``style_grams`` optionally supplies precomputed style-side Grams keyed by
    ``(layer, region)``.
    """
    fe, se = _entries(f), _entries(style)
    if set(fe) != set(se):
        raise ValidationError(f"pyramids have different layers: {sorted(fe)} vs {sorted(se)}")
    if (masks_f is None) != (masks_style is None):
        raise ValidationError("masks must be given for both images or neither")
    regions = (None,) if masks_f is None else _region_labels(masks_f, masks_style)
    total = None
    for name in sorted(fe):
        a = fe[name]
        small_f = None if masks_f is None else downsample_labels(np.asarray(masks_f), tuple(a.shape[-2:]))
        small_s = None
        for r in regions:
            if r is None:
                ma = None
            else:
                ma = small_f == r
                if not ma.any():
                    log.warning("region %s vanishes at layer %s; skipping", r, name)
                    continue
            if style_grams is not None and (name, r) in style_grams:
                gs = style_grams[(name, r)]
                if gs is None:
                    continue
            else:
                b = se[name]
                if r is not None and small_s is None:
                    small_s = downsample_labels(np.asarray(masks_style), tuple(b.shape[-2:]))
                ms = None if r is None else small_s == r
                if ms is not None and not ms.any():
                    log.warning("region %s vanishes at layer %s; skipping", r, name)
                    continue
                gs = gram(b, ms).values
            ga = gram(a, ma).values
            term = (ga - gs).pow(2).sum()
            total = term if total is None else total + term
    if total is None:
        return fe[sorted(fe)[0]].new_zeros(())
    return total


class LossContext:
    """Everything that stays fixed while a pair of networks is optimized.

    Holds the two photos, their label maps, the backbone and the weights, and
    caches the photos' features and style Grams.
    """

    def __init__(self, x_a, x_b, backbone: Backbone, masks: Optional[RegionMaskSet] = None,
                 weights: LossWeights = LossWeights()):
        dtype = backbone.mean.dtype
        self.x_a = to_tensor(x_a, dtype=dtype).detach()
        self.x_b = to_tensor(x_b, dtype=dtype).detach()
        for x in (self.x_a, self.x_b):
            if min(x.shape[-2:]) < 16:
                raise ValidationError(f"images must be at least 16x16, got {tuple(x.shape[-2:])}")
        self.backbone = backbone
        self.weights = weights
        self.masks = masks
        if masks is not None:
            if masks.labels_a.shape != tuple(self.x_a.shape[-2:]) or masks.labels_b.shape != tuple(self.x_b.shape[-2:]):
                raise ValidationError("label maps must match their photos' dimensions")
        self.labels_a = None if masks is None else masks.labels_a
        self.labels_b = None if masks is None else masks.labels_b
        with torch.no_grad():
            self.feat_a = FeaturePyramid(backbone(self.x_a), tuple(self.x_a.shape[-2:]))
            self.feat_b = FeaturePyramid(backbone(self.x_b), tuple(self.x_b.shape[-2:]))
        self.grams_a = self._grams(self.feat_a, self.labels_a)
        self.grams_b = self._grams(self.feat_b, self.labels_b)

    def _grams(self, feats: FeaturePyramid, labels) -> Dict:
        out = {}
        regions = (None,) if labels is None else tuple(int(v) for v in np.unique(labels))
        for name, t in feats.items():
            small = None if labels is None else downsample_labels(labels, tuple(t.shape[-2:]))
            for r in regions:
                m = None if r is None else small == r
                out[(name, r)] = None if (m is not None and not m.any()) else gram(t, m).values
        return out

    def features(self, x: torch.Tensor) -> FeaturePyramid:
        return FeaturePyramid(self.backbone(x), tuple(x.shape[-2:]))

    def raw(self, sid: SubLossId, g_a: Network, g_b: Network) -> torch.Tensor:
        """Unweighted value of one sub-loss."""
        sid = SubLossId(sid)
        xa, xb, la, lb = self.x_a, self.x_b, self.labels_a, self.labels_b
        if sid is SubLossId.CYCLE_B:
            return content_loss(self.features(g_b(g_a(xb, lb), lb)), self.feat_b)
        if sid is SubLossId.CYCLE_A:
            return content_loss(self.features(g_a(g_b(xa, la), la)), self.feat_a)
        if sid is SubLossId.SELF_A:
            return content_loss(self.features(g_a(xa, la)), self.feat_a)
        if sid is SubLossId.SELF_B:
            return content_loss(self.features(g_b(xb, lb)), self.feat_b)
        if sid is SubLossId.STYLE_BA:
            return style_loss(self.features(g_a(xb, lb)), self.feat_a, lb, la, style_grams=self.grams_a)
        return style_loss(self.features(g_b(xa, la)), self.feat_b, la, lb, style_grams=self.grams_b)

    def sub_loss(self, sid, g_a: Network, g_b: Network) -> torch.Tensor:
        """Unweighted sub-loss value; see :meth:`weighted` for the scaled term."""
        return self.raw(sid, g_a, g_b)

    def weighted(self, sid, g_a: Network, g_b: Network) -> torch.Tensor:
        sid = SubLossId(sid)
        return sid.weight(self.weights) * self.raw(sid, g_a, g_b)

    def cycle(self, g_a, g_b) -> torch.Tensor:
        return self.raw(SubLossId.CYCLE_B, g_a, g_b) + self.raw(SubLossId.CYCLE_A, g_a, g_b)

    def self_consistency(self, g_a, g_b) -> torch.Tensor:
        return self.raw(SubLossId.SELF_A, g_a, g_b) + self.raw(SubLossId.SELF_B, g_a, g_b)

    def joint_style(self, g_a, g_b) -> torch.Tensor:
        return self.raw(SubLossId.STYLE_BA, g_a, g_b) + self.raw(SubLossId.STYLE_AB, g_a, g_b)

    def total(self, g_a, g_b) -> torch.Tensor:
        w = self.weights
        style = w.lambda_s * self.joint_style(g_a, g_b)
        if w.lambda_c == 0:
            return style
        return w.lambda_c * (self.cycle(g_a, g_b) + self.self_consistency(g_a, g_b)) + style


def cycle_loss(g_a, g_b, x_a, x_b, backbone, masks=None) -> torch.Tensor:
    return LossContext(x_a, x_b, backbone, masks).cycle(g_a, g_b)


def self_loss(g_a, g_b, x_a, x_b, backbone, masks=None) -> torch.Tensor:
    return LossContext(x_a, x_b, backbone, masks).self_consistency(g_a, g_b)


def joint_style_loss(g_a, g_b, x_a, x_b, masks, backbone) -> torch.Tensor:
    return LossContext(x_a, x_b, backbone, masks).joint_style(g_a, g_b)


def total_loss(weights: LossWeights, g_a, g_b, x_a, x_b, masks, backbone) -> torch.Tensor:
    return LossContext(x_a, x_b, backbone, masks, weights).total(g_a, g_b)


def sub_loss(sid, weights: LossWeights, g_a, g_b, x_a, x_b, masks, backbone) -> torch.Tensor:
    """Unweighted value of one of the six terms."""
    return LossContext(x_a, x_b, backbone, masks, weights).raw(sid, g_a, g_b)


@dataclass
class BaselineResult:
    image: torch.Tensor
    objective: List[float]


def baseline_direct_transfer(x_a, x_b, weights: LossWeights, backbone: Backbone, steps: int,
                             masks: Optional[RegionMaskSet] = None, max_step: float = 0.05,
                             max_halvings: int = 20, armijo: float = 1e-4) -> BaselineResult:
    """Optimize pixels directly: content of ``x_b`` plus style of ``x_a``.

    Projected gradient descent from ``x_b`` with a step whose largest pixel
    change is ``max_step``, halved until the Armijo condition holds. A step
    that cannot be made to decrease the objective is skipped, so the
    objective trace never increases.
    """
    if steps < 1:
        raise ValidationError(f"steps must be >= 1, got {steps}")
    ctx = LossContext(x_a, x_b, backbone, masks, weights)
    la = ctx.labels_a
    lb = ctx.labels_b

    def objective(x):
        val = x.new_zeros(())
        if weights.lambda_c:
            val = val + weights.lambda_c * content_loss(ctx.features(x), ctx.feat_b)
        if weights.lambda_s:
            val = val + weights.lambda_s * style_loss(ctx.features(x), ctx.feat_a, lb, la, style_grams=ctx.grams_a)
        return val

    x = ctx.x_b.clone()
    f = None
    trace = []
    rate = max_step
    for k in range(steps + 1):
        x.requires_grad_(True)
        fx = objective(x)
        if not torch.isfinite(fx):
            raise DivergenceError(f"non-finite objective at step {k}")
        (grad,) = torch.autograd.grad(fx, x)
        x = x.detach()
        f = float(fx.detach())
        trace.append(f)
        if k == steps:
            break
        gmax = float(grad.abs().max())
        if gmax == 0.0:
            continue
        t = rate / gmax
        for _ in range(max_halvings):
            cand = (x - t * grad).clamp(0.0, 1.0)
            with torch.no_grad():
                fc = float(objective(cand))
            if math.isfinite(fc) and fc <= f - armijo * float((grad * (x - cand)).sum()):
                x = cand
                rate = min(max_step, 2 * t * gmax)
                break
            t *= 0.5
        else:
            rate = max(t * gmax, 1e-8)
    return BaselineResult(x.detach(), trace)
