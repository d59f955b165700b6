"""Checkpoint archives: network parameters, training metadata and photos.

Tensor names follow a stable path scheme::

    trunk/layer/{idx}/{kernel|bias}
    style/{a|b}/region/{label}/layer/{idx}/{scale|shift}
    images/{a|b}, labels/{a|b}          (training photos and label maps)

With per-region trunks the trunk paths become ``trunk/region/{label}/...``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np
import torch

from .archive import read_archive, write_archive
from .errors import IncompatibleVersionError, IntegrityError, ValidationError
from .stylenet import NetConfig, StyleNetworkPair

FORMAT = "cyclestyle-checkpoint"
VERSION = 1


@dataclass
class Checkpoint:
    manifest: Dict[str, Any]
    tensors: Dict[str, np.ndarray]
    # per-step training records; not persisted
    history: list = field(default_factory=list, compare=False, repr=False)

    @property
    def region_labels(self):
        return tuple(self.manifest["region_labels"])

    @property
    def net_config(self) -> NetConfig:
        return NetConfig.from_dict(self.manifest["net_config"])

    def param_tensors(self) -> Dict[str, np.ndarray]:
        return {k: v for k, v in self.tensors.items() if k.startswith(("trunk/", "style/"))}

    def conv_tensors(self) -> Dict[str, np.ndarray]:
        return {k: v for k, v in self.tensors.items() if k.startswith("trunk/")}

    def in_tensors(self) -> Dict[str, np.ndarray]:
        return {k: v for k, v in self.tensors.items() if k.startswith("style/")}

    def has_images(self) -> bool:
        return "images/a" in self.tensors and "images/b" in self.tensors

    def image(self, side: str) -> torch.Tensor:
        key = f"images/{side}"
        if key not in self.tensors:
            raise ValidationError(f"checkpoint does not carry training image {side!r}")
        return torch.from_numpy(self.tensors[key].copy())

    def labels(self, side: str) -> Optional[np.ndarray]:
        key = f"labels/{side}"
        if key not in self.tensors:
            return None
        return self.tensors[key].astype(np.int64)

    def to_pair(self, dtype: torch.dtype = torch.float32) -> StyleNetworkPair:
        """Rebuild the network pair with this checkpoint's parameters."""
        pair = StyleNetworkPair(self.net_config, self.region_labels)
        named = pair.named_tensors()
        missing = sorted(set(named) - set(self.tensors))
        if missing:
            raise IntegrityError(f"checkpoint lacks {len(missing)} parameter tensors, e.g. {missing[0]!r}")
        with torch.no_grad():
            for name, param in named.items():
                src = self.tensors[name]
                if tuple(src.shape) != tuple(param.shape):
                    raise IntegrityError(f"tensor {name!r} has shape {src.shape}, expected {tuple(param.shape)}")
                param.copy_(torch.from_numpy(src))
        return pair.to(dtype)

    @classmethod
    def from_pair(cls, pair: StyleNetworkPair, *, x_a=None, x_b=None, masks=None, **meta) -> "Checkpoint":
        tensors = {k: v.detach().to(torch.float32).cpu().numpy().copy() for k, v in pair.named_tensors().items()}
        if x_a is not None:
            tensors["images/a"] = x_a.detach().to(torch.float32).cpu().numpy().copy()
        if x_b is not None:
            tensors["images/b"] = x_b.detach().to(torch.float32).cpu().numpy().copy()
        if masks is not None:
            tensors["labels/a"] = masks.labels_a.astype(np.float32)
            tensors["labels/b"] = masks.labels_b.astype(np.float32)
        manifest = {
            "format": FORMAT,
            "version": VERSION,
            "net_config": pair.config.to_dict(),
            "region_labels": list(pair.region_labels),
        }
        manifest.update(meta)
        return cls(manifest, tensors)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    manifest = {k: v for k, v in ckpt.manifest.items() if k != "tensors"}
    write_archive(path, manifest, ckpt.tensors)


def load_checkpoint(path, backbone=None) -> Checkpoint:
    """Load and verify a checkpoint archive.

    A backbone whose fingerprint differs from the recorded one only triggers
    a warning.
    """
    manifest, tensors = read_archive(path)
    if manifest.get("format") != FORMAT:
        raise IntegrityError(f"{path} is not a checkpoint (format={manifest.get('format')!r})")
    if manifest.get("version") != VERSION:
        raise IncompatibleVersionError(f"checkpoint version {manifest.get('version')} is not supported (expected {VERSION})")
    manifest.pop("tensors", None)
    for key in ("net_config", "region_labels"):
        if key not in manifest:
            raise IntegrityError(f"checkpoint manifest lacks {key!r}")
    if not any(k.startswith("trunk/") for k in tensors):
        raise IntegrityError("checkpoint has no convolution trunk tensors")
    ckpt = Checkpoint(manifest, tensors)
    if backbone is not None:
        check_fingerprint(ckpt, backbone)
    return ckpt


def check_fingerprint(ckpt: Checkpoint, backbone) -> bool:
    recorded = ckpt.manifest.get("backbone_fingerprint")
    if recorded is not None and recorded != backbone.fingerprint():
        warnings.warn(f"checkpoint was trained with backbone {recorded}, current backbone is {backbone.fingerprint()}",
                      stacklevel=2)
        return False
    return True
