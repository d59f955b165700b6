"""Feed-forward stylization network with conditional instance normalization.

One convolutional trunk is shared by every (style, region) view; each view
owns its own instance-norm scale/shift vectors, and switching views switches
the style. Layer indices below are 0-based over the 16 convolutions:

    0      9x9 conv, stride 1                 (encoder)
    1-2    3x3 conv, stride 2                 (encoder)
    3-12   five residual blocks of two 1x1 convs
    13-14  nearest x2 upsample + 3x3 conv     (decoder)
    15     9x9 conv to RGB, no normalization, sigmoid

Skip connections add the output of layer 2 to the input of layer 13 and the
output of layer 1 to the input of layer 14.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import CapacityError, NumericError, RegionLookupError, ValidationError
from .images import to_tensor
from .regions import MAX_REGIONS, composite

STYLES = ("a", "b")


@dataclass(frozen=True)
class NetConfig:
    base_channels: int = 32
    residual_blocks: int = 5
    in_epsilon: float = 1e-5
    output_activation: str = "sigmoid"
    per_region_trunks: bool = False

    def __post_init__(self):
        if self.base_channels < 1 or self.residual_blocks < 0:
            raise ValidationError("base_channels must be positive and residual_blocks nonnegative")
        if self.output_activation != "sigmoid":
            raise ValidationError(f"unsupported output activation {self.output_activation!r}")
        if self.in_epsilon <= 0:
            raise ValidationError("in_epsilon must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class LayerSpec:
    index: int
    in_channels: int
    out_channels: int
    kernel: int
    stride: int
    upsample: bool
    normalized: bool
    residual: bool


def skip_connections(config: NetConfig) -> Tuple[Tuple[int, int], ...]:
    """``(source, destination)`` layer pairs; the source output joins the destination input."""
    first_dec = 3 + 2 * config.residual_blocks
    return ((2, first_dec), (1, first_dec + 1))


def layer_specs(config: NetConfig) -> List[LayerSpec]:
    b = config.base_channels
    specs = [
        LayerSpec(0, 3, b, 9, 1, False, True, False),
        LayerSpec(1, b, 2 * b, 3, 2, False, True, False),
        LayerSpec(2, 2 * b, 4 * b, 3, 2, False, True, False),
    ]
    for i in range(2 * config.residual_blocks):
        specs.append(LayerSpec(3 + i, 4 * b, 4 * b, 1, 1, False, True, True))
    n = len(specs)
    specs += [
        LayerSpec(n, 4 * b, 2 * b, 3, 1, True, True, False),
        LayerSpec(n + 1, 2 * b, b, 3, 1, True, True, False),
        LayerSpec(n + 2, b, 3, 9, 1, False, False, False),
    ]
    return specs


class Trunk(nn.Module):
    """The convolution kernels and biases; carries no normalization state."""

    def __init__(self, config: NetConfig, rng: np.random.Generator):
        super().__init__()
        self.specs = layer_specs(config)
        self.convs = nn.ModuleList()
        for s in self.specs:
            conv = nn.Conv2d(s.in_channels, s.out_channels, s.kernel, s.stride)
            bound = 1.0 / np.sqrt(s.in_channels * s.kernel * s.kernel)
            with torch.no_grad():
                conv.weight.copy_(torch.from_numpy(rng.uniform(-bound, bound, conv.weight.shape).astype(np.float32)))
                conv.bias.copy_(torch.from_numpy(rng.uniform(-bound, bound, conv.bias.shape).astype(np.float32)))
            self.convs.append(conv)

    def conv(self, idx: int, h: torch.Tensor) -> torch.Tensor:
        s = self.specs[idx]
        if s.upsample:
            h = F.interpolate(h, scale_factor=2, mode="nearest")
        p = s.kernel // 2
        if p:
            h = F.pad(h, (p, p, p, p), mode="reflect")
        return self.convs[idx](h)


def _key(style: str, region: int, idx: int, part: str) -> str:
    return f"{style}_{region}_{idx}_{part}"


class StyleNetworkPair(nn.Module):
    """Shared trunk(s) plus instance-norm parameters keyed by (style, region)."""

    def __init__(self, config: NetConfig, region_labels: Iterable[int], seed: int = 0):
        super().__init__()
        labels = tuple(sorted({int(r) for r in region_labels}))
        if not labels:
            raise ValidationError("at least one region label is required")
        if len(labels) > MAX_REGIONS:
            raise CapacityError(f"regions>{MAX_REGIONS} ({len(labels)} requested)")
        self.config = config
        self.region_labels = labels
        self.specs = layer_specs(config)
        self.normalized_layers = tuple(s.index for s in self.specs if s.normalized)
        rng = np.random.default_rng(seed)
        if config.per_region_trunks:
            self.trunks = nn.ModuleDict({str(r): Trunk(config, rng) for r in labels})
        else:
            self.trunks = nn.ModuleDict({"shared": Trunk(config, rng)})
        self.in_params = nn.ParameterDict()
        self.reset_in_params(labels)

    # -- parameter bookkeeping -------------------------------------------------

    def reset_in_params(self, region_labels: Optional[Iterable[int]] = None) -> None:
        """Replace all instance-norm sets with scale 1 / shift 0 for ``region_labels``."""
        labels = self.region_labels if region_labels is None else tuple(sorted({int(r) for r in region_labels}))
        if self.config.per_region_trunks and set(labels) - set(self.region_labels):
            raise CapacityError("per-region trunks cannot take new region labels; use full training")
        if len(labels) > MAX_REGIONS:
            raise CapacityError(f"regions>{MAX_REGIONS} ({len(labels)} requested)")
        ref = next(iter(self.trunks.values())).convs[0].weight
        self.in_params = nn.ParameterDict()
        for style in STYLES:
            for r in labels:
                for idx in self.normalized_layers:
                    c = self.specs[idx].out_channels
                    self.in_params[_key(style, r, idx, "scale")] = nn.Parameter(torch.ones(c, dtype=ref.dtype))
                    self.in_params[_key(style, r, idx, "shift")] = nn.Parameter(torch.zeros(c, dtype=ref.dtype))
        self.region_labels = labels

    def trunk_for(self, region: int) -> Trunk:
        return self.trunks["shared"] if "shared" in self.trunks else self.trunks[str(region)]

    def in_param(self, style: str, region: int, idx: int, part: str) -> nn.Parameter:
        return self.in_params[_key(style, region, idx, part)]

    def conv_parameters(self) -> List[nn.Parameter]:
        return [p for t in self.trunks.values() for p in t.parameters()]

    def named_tensors(self) -> Dict[str, torch.Tensor]:
        """Parameters under the checkpoint path scheme."""
        out = {}
        for name, trunk in self.trunks.items():
            prefix = "trunk" if name == "shared" else f"trunk/region/{name}"
            for idx, conv in enumerate(trunk.convs):
                out[f"{prefix}/layer/{idx}/kernel"] = conv.weight
                out[f"{prefix}/layer/{idx}/bias"] = conv.bias
        for style in STYLES:
            for r in self.region_labels:
                for idx in self.normalized_layers:
                    for part in ("scale", "shift"):
                        out[f"style/{style}/region/{r}/layer/{idx}/{part}"] = self.in_param(style, r, idx, part)
        return out

    def describe(self) -> dict:
        """Topology summary used by the architecture audit."""
        return {
            "conv_layers": [asdict(s) for s in self.specs],
            "num_conv": len(self.specs),
            "num_residual_conv": sum(s.residual for s in self.specs),
            "normalized": list(self.normalized_layers),
            "skips": [list(s) for s in skip_connections(self.config)],
        }

    # -- forward ----------------------------------------------------------------

    def _pad(self, x: torch.Tensor) -> Tuple[torch.Tensor, int, int]:
        h, w = x.shape[-2:]
        ph, pw = (-h) % 4, (-w) % 4
        if ph or pw:
            x = F.pad(x, (0, pw, 0, ph), mode="reflect")
        return x, h, w

    def _norm(self, h: torch.Tensor, style: str, regions: Sequence[int], idx: int) -> torch.Tensor:
        scale = torch.stack([self.in_param(style, r, idx, "scale") for r in regions])
        shift = torch.stack([self.in_param(style, r, idx, "shift") for r in regions])
        h = F.instance_norm(h, eps=self.config.in_epsilon)
        return h * scale[:, :, None, None] + shift[:, :, None, None]

    def _run_trunk(self, trunk: Trunk, x: torch.Tensor, style: str, regions: Sequence[int], check: bool = False) -> torch.Tensor:
        # x is (1, 3, H, W); the region views form the batch from layer 0's norm on
        taps = {}
        skip_in = {dst: src for src, dst in skip_connections(self.config)}
        h = x
        last = len(self.specs) - 1
        idx = 0
        while idx < last:
            spec = self.specs[idx]
            if idx in skip_in:
                h = h + taps[skip_in[idx]]
            if spec.residual:
                y = F.relu(self._norm(trunk.conv(idx, h), style, regions, idx))
                h = h + self._norm(trunk.conv(idx + 1, y), style, regions, idx + 1)
                idx += 1
            else:
                h = F.relu(self._norm(trunk.conv(idx, h), style, regions, idx))
            taps[idx] = h
            if check:
                _check(h, idx)
            idx += 1
        return torch.sigmoid(trunk.conv(last, h))

    def forward_regions(self, image: torch.Tensor, style: str, regions: Optional[Sequence[int]] = None) -> torch.Tensor:
        """Run every requested region view of ``style`` on one image.

        Returns an ``(R, 3, H, W)`` tensor, one row per region in order.
        """
        if style not in STYLES:
            raise ValidationError(f"style must be 'a' or 'b', got {style!r}")
        regions = self.region_labels if regions is None else tuple(regions)
        for r in regions:
            if r not in self.region_labels:
                raise RegionLookupError(f"region {r} has no instance-norm parameters")
        if image.dim() != 4 or image.shape[0] != 1 or image.shape[1] != 3:
            raise ValidationError(f"expected a (1, 3, H, W) image, got {tuple(image.shape)}")
        if min(image.shape[-2:]) < 4:
            raise ValidationError("image must be at least 4 pixels on each side")
        x, h, w = self._pad(image)
        if "shared" in self.trunks:
            out = self._run_trunk(self.trunks["shared"], x, style, regions)
        else:
            out = torch.cat([self._run_trunk(self.trunk_for(r), x, style, (r,)) for r in regions])
        out = out[..., :h, :w]
        if not torch.isfinite(out).all():
            self._locate_nonfinite(x, style, regions)
        return out

    def _locate_nonfinite(self, x, style, regions):
        with torch.no_grad():
            for r in regions:
                self._run_trunk(self.trunk_for(r), x, style, (r,), check=True)
        raise NumericError(f"non-finite activations at layer {len(self.specs) - 1}")

    def apply(self, style: str, image: torch.Tensor, labels=None) -> torch.Tensor:
        """Stylize toward ``style`` compositing the region views by ``labels``.

        ``labels`` is the image's ``H x W`` label map; ``None`` means a single
        region covering the whole image (only valid for single-region pairs).
        """
        if labels is None:
            if len(self.region_labels) != 1:
                raise ValidationError("a multi-region network needs a label map for its input")
            return self.forward_regions(image, style)
        present = [int(v) for v in np.unique(np.asarray(labels))]
        outs = self.forward_regions(image, style, present)
        return composite({r: outs[i:i + 1] for i, r in enumerate(present)}, labels)

    def transfer(self, style: str):
        """Callable ``g(image, labels)`` realizing the style-``style`` network."""
        def g(image, labels=None):
            return self.apply(style, image, labels)
        g.style = style
        return g

    def view(self, style: str, region: int) -> "NetView":
        return NetView(self, style, region)


def _check(h: torch.Tensor, idx: int) -> None:
    if not torch.isfinite(h).all():
        raise NumericError(f"non-finite activations at layer {idx}")


@dataclass(frozen=True)
class NetView:
    """One (style, region) network: the shared trunk plus one norm set."""

    pair: StyleNetworkPair
    style: str
    region_label: int

    def __call__(self, image: torch.Tensor) -> torch.Tensor:
        return self.forward(image)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        return self.pair.forward_regions(image, self.style, (self.region_label,))

    def parameters(self) -> List[nn.Parameter]:
        p = self.pair
        own = [p.in_param(self.style, self.region_label, i, part) for i in p.normalized_layers for part in ("scale", "shift")]
        return list(p.trunk_for(self.region_label).parameters()) + own


def build_pair(config: NetConfig = NetConfig(), region_labels: Iterable[int] = (0,), seed: int = 0) -> StyleNetworkPair:
    return StyleNetworkPair(config, region_labels, seed)


def forward(view: NetView, image) -> torch.Tensor:
    """Validated single-view forward for any accepted image form."""
    ref = view.pair.conv_parameters()[0]
    return view.forward(to_tensor(image, dtype=ref.dtype))


def in_param_view(pair: StyleNetworkPair, trainable: str = "all") -> List[nn.Parameter]:
    """The exact tensors an optimizer may update in the given mode."""
    norm = list(pair.in_params.values())
    if trainable == "instance_norm_only":
        return norm
    if trainable == "all":
        return pair.conv_parameters() + norm
    raise ValidationError(f"trainable must be 'all' or 'instance_norm_only', got {trainable!r}")
