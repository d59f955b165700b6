"""Frozen VGG-19 feature extractor truncated at conv3_1.

Two sources are supported: a tensor archive holding pretrained weights, or a
seeded pseudo-random initialization with the same topology (used by tests and
CI, where the pretrained asset is unavailable).
"""

from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .archive import read_archive, write_archive
from .errors import CycleStyleError, LoadError, SchemaError, ValidationError
from .images import to_tensor

log = logging.getLogger(__name__)

ENV_VAR = "CYCLESTYLE_BACKBONE"
FORMAT = "cyclestyle-backbone"
VERSION = 1

# (name, kind, in_channels, out_channels); pools carry no channels
TOPOLOGY = (
    ("conv1_1", "conv", 3, 64),
    ("conv1_2", "conv", 64, 64),
    ("pool1", "pool", 0, 0),
    ("conv2_1", "conv", 64, 128),
    ("conv2_2", "conv", 128, 128),
    ("pool2", "pool", 0, 0),
    ("conv3_1", "conv", 128, 256),
)
CONV_LAYERS = tuple(name for name, kind, _, _ in TOPOLOGY if kind == "conv")
DEFAULT_TAPS = frozenset({"conv1_1", "conv2_1", "conv3_1"})

# normalization published with the torchvision ImageNet VGG-19 weights
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

# indices of the conv layers inside torchvision's ``vgg19().features``
TORCHVISION_INDEX = {"conv1_1": 0, "conv1_2": 2, "conv2_1": 5, "conv2_2": 7, "conv3_1": 10}


def expected_shapes() -> Dict[str, Tuple[Tuple[int, ...], Tuple[int, ...]]]:
    return {name: ((cout, cin, 3, 3), (cout,)) for name, kind, cin, cout in TOPOLOGY if kind == "conv"}


@dataclass
class FeaturePyramid:
    """Activations at the backbone's tap points for one input image."""

    entries: Dict[str, torch.Tensor]
    source_shape: Tuple[int, int]

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.entries[name]

    def keys(self):
        return self.entries.keys()

    def items(self):
        return self.entries.items()

    def detach(self) -> "FeaturePyramid":
        return FeaturePyramid({k: v.detach() for k, v in self.entries.items()}, self.source_shape)


class Backbone(nn.Module):
    """VGG-19 prefix with frozen weights.

    Weights live in buffers, so optimizers never see them and autograd only
    propagates through them to the input. A tap named after a conv layer
    exports that layer's post-ReLU activation.
    """

    def __init__(self, weights: Mapping[str, Tuple[np.ndarray, np.ndarray]],
                 mean=IMAGENET_MEAN, std=IMAGENET_STD, tap_points: Iterable[str] = DEFAULT_TAPS,
                 source: str = ""):
        super().__init__()
        tap_points = frozenset(tap_points)
        unknown = tap_points - {name for name, _, _, _ in TOPOLOGY}
        if unknown:
            raise ValidationError(f"unknown tap points: {sorted(unknown)}")
        self.tap_points = tap_points
        self.source = source
        for name in CONV_LAYERS:
            w, b = weights[name]
            self.register_buffer(f"{name}_weight", torch.as_tensor(np.asarray(w, dtype=np.float32)).clone())
            self.register_buffer(f"{name}_bias", torch.as_tensor(np.asarray(b, dtype=np.float32)).clone())
        self.register_buffer("mean", torch.tensor(mean, dtype=torch.float32).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(std, dtype=torch.float32).view(1, 3, 1, 1))
        self._last = max(i for i, (name, _, _, _) in enumerate(TOPOLOGY) if name in tap_points)

    @property
    def layers(self):
        """Ordered ``(name, kind, params)`` triples; ``params`` is empty for pools."""
        out = []
        for name, kind, _, _ in TOPOLOGY:
            if kind == "conv":
                out.append((name, kind, (getattr(self, f"{name}_weight"), getattr(self, f"{name}_bias"))))
                out.append((name.replace("conv", "relu"), "activation", ()))
            else:
                out.append((name, kind, ()))
        return out

    def weight(self, name: str) -> Tuple[torch.Tensor, torch.Tensor]:
        return getattr(self, f"{name}_weight"), getattr(self, f"{name}_bias")

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for name in CONV_LAYERS:
            for t in self.weight(name):
                h.update(name.encode())
                h.update(t.detach().to(torch.float32).cpu().numpy().astype("<f4").tobytes())
        h.update(self.mean.to(torch.float32).numpy().astype("<f4").tobytes())
        h.update(self.std.to(torch.float32).numpy().astype("<f4").tobytes())
        return h.hexdigest()[:16]

    def forward(self, x: torch.Tensor) -> Dict[str, torch.Tensor]:
        h = (x - self.mean) / self.std
        out = {}
        for i, (name, kind, _, _) in enumerate(TOPOLOGY):
            if kind == "conv":
                w, b = self.weight(name)
                h = F.relu(F.conv2d(h, w, b, padding=1))
            else:
                h = F.avg_pool2d(h, 2)
            if name in self.tap_points:
                out[name] = h
            if i == self._last:
                break
        return out

    def train(self, mode: bool = True):
        # nothing behaves differently in training; keep the module in eval
        return super().train(False)


def random_weights(seed: int) -> Dict[str, Tuple[np.ndarray, np.ndarray]]:
    """He fan-in scaled normal kernels, zero biases, fully determined by ``seed``."""
    rng = np.random.default_rng(seed)
    weights = {}
    for (wshape, bshape), name in zip(expected_shapes().values(), CONV_LAYERS):
        fan_in = wshape[1] * wshape[2] * wshape[3]
        w = rng.standard_normal(wshape) * np.sqrt(2.0 / fan_in)
        weights[name] = (w.astype(np.float32), np.zeros(bshape, dtype=np.float32))
    return weights


def load_backbone(source=None, tap_points: Iterable[str] = DEFAULT_TAPS) -> Backbone:
    """Build a frozen backbone.

    ``source`` may be a weight-file path, an int seed, a ``{"seed": n}``
    mapping, or the string ``"random:<seed>"``. ``None`` falls back to the
    ``CYCLESTYLE_BACKBONE`` environment variable, then to ``random:0``.
    """
    if source is None:
        source = os.environ.get(ENV_VAR) or "random:0"
        if source == "random:0":
            log.warning("no backbone weights configured; using the fixed-random backbone (seed 0)")
    seed = None
    if isinstance(source, bool):
        raise ValidationError("backbone source cannot be a bool")
    if isinstance(source, int):
        seed = source
    elif isinstance(source, Mapping):
        if "seed" not in source:
            raise ValidationError("random backbone source needs a 'seed' entry")
        seed = int(source["seed"])
    elif isinstance(source, str) and source.startswith("random:"):
        try:
            seed = int(source.split(":", 1)[1])
        except ValueError as exc:
            raise ValidationError(f"bad random backbone source {source!r}") from exc
    if seed is not None:
        bb = Backbone(random_weights(seed), tap_points=tap_points, source=f"random:{seed}")
    else:
        bb = _load_file(source, tap_points)
    bb.requires_grad_(False)
    return bb.eval()


def _load_file(path, tap_points) -> Backbone:
    try:
        manifest, tensors = read_archive(path)
    except LoadError:
        raise
    except CycleStyleError as exc:
        raise LoadError(f"corrupt backbone weight file {path}: {exc}") from exc
    if manifest.get("format") != FORMAT:
        raise LoadError(f"{path} is not a backbone weight file (format={manifest.get('format')!r})")
    layers = manifest.get("layers", {})
    shapes = expected_shapes()
    weights = {}
    problems = []
    for name in CONV_LAYERS:
        entry = layers.get(name)
        if entry is None:
            problems.append(f"{name}: expected {shapes[name][0]}+{shapes[name][1]}, found nothing")
            continue
        pair = []
        for part, want in zip(("weight", "bias"), shapes[name]):
            tname = entry.get(part)
            if tname not in tensors:
                raise LoadError(f"backbone tensor {tname!r} ({name}.{part}) missing from {path}")
            found = tensors[tname].shape
            if tuple(found) != want:
                problems.append(f"{name}.{part}: expected {want}, found {tuple(found)}")
            pair.append(tensors[tname])
        weights[name] = tuple(pair)
    if problems:
        raise SchemaError("backbone layer shapes do not match VGG-19: " + "; ".join(problems))
    norm = manifest.get("normalization", {})
    return Backbone(weights, mean=tuple(norm.get("mean", IMAGENET_MEAN)), std=tuple(norm.get("std", IMAGENET_STD)),
                    tap_points=tap_points, source=str(path))


def save_backbone(backbone: Backbone, path) -> None:
    """Write the backbone's weights in the documented weight-file format."""
    tensors = {}
    layers = {}
    for name in CONV_LAYERS:
        w, b = backbone.weight(name)
        layers[name] = {"weight": f"{name}.weight", "bias": f"{name}.bias"}
        tensors[f"{name}.weight"] = w.detach().to(torch.float32).cpu().numpy()
        tensors[f"{name}.bias"] = b.detach().to(torch.float32).cpu().numpy()
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "layers": layers,
        "normalization": {"mean": backbone.mean.flatten().tolist(), "std": backbone.std.flatten().tolist()},
    }
    write_archive(path, manifest, tensors)


def from_torchvision_state_dict(state_dict: Mapping[str, torch.Tensor], tap_points=DEFAULT_TAPS) -> Backbone:
    """Build a backbone from a torchvision ``vgg19`` state dict (``features.N.*`` keys)."""
    weights = {}
    for name, idx in TORCHVISION_INDEX.items():
        try:
            w = state_dict[f"features.{idx}.weight"]
            b = state_dict[f"features.{idx}.bias"]
        except KeyError as exc:
            raise LoadError(f"state dict lacks {exc.args[0]!r} needed for {name}") from exc
        weights[name] = (np.asarray(w, dtype=np.float32), np.asarray(b, dtype=np.float32))
    shapes = expected_shapes()
    bad = [f"{n}: expected {shapes[n][0]}, found {tuple(w.shape)}" for n, (w, _) in weights.items() if tuple(w.shape) != shapes[n][0]]
    if bad:
        raise SchemaError("; ".join(bad))
    bb = Backbone(weights, tap_points=tap_points, source="torchvision")
    bb.requires_grad_(False)
    return bb.eval()


def extract_features(backbone: Backbone, image) -> FeaturePyramid:
    """Validated feature extraction; ``image`` is any accepted image form."""
    x = to_tensor(image, dtype=backbone.mean.dtype)
    h, w = x.shape[-2:]
    if h < 16 or w < 16:
        raise ValidationError(f"image must be at least 16x16, got {h}x{w}")
    return FeaturePyramid(backbone(x), (int(h), int(w)))
