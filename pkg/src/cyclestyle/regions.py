"""Semantic region masks: loading, correspondence, downsampling, compositing."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch

from .errors import CapacityError, CorrespondenceError, LoadError, RegionLookupError, ValidationError
from .images import read_rgb

log = logging.getLogger(__name__)

MAX_REGIONS = 8


@dataclass
class RegionMaskSet:
    """Label maps for both photos plus the labels they share.

    Build instances with :func:`make_mask_set` so that the correspondence and
    coverage invariants hold.
    """

    labels_a: np.ndarray
    labels_b: np.ndarray
    correspondence: Tuple[int, ...]
    names: Dict[int, str] = field(default_factory=dict)

    def labels(self, side: str) -> np.ndarray:
        if side == "a":
            return self.labels_a
        if side == "b":
            return self.labels_b
        raise ValidationError(f"side must be 'a' or 'b', got {side!r}")

    def __len__(self) -> int:
        return len(self.correspondence)


def single_region(shape_a: Tuple[int, int], shape_b: Tuple[int, int], label: int = 0) -> RegionMaskSet:
    """Whole-image region on both sides."""
    return RegionMaskSet(np.full(shape_a, label, dtype=np.int64), np.full(shape_b, label, dtype=np.int64), (label,))


def make_mask_set(labels_a, labels_b, names: Optional[Mapping[int, str]] = None) -> RegionMaskSet:
    """Validate two label maps and resolve their correspondence.

    Labels present on one side only are dropped with a warning; their pixels
    are reassigned to that side's largest corresponding region.
    """
    la = np.asarray(labels_a, dtype=np.int64)
    lb = np.asarray(labels_b, dtype=np.int64)
    if la.ndim != 2 or lb.ndim != 2:
        raise ValidationError("label maps must be two-dimensional")
    set_a, set_b = set(np.unique(la).tolist()), set(np.unique(lb).tolist())
    common = tuple(sorted(set_a & set_b))
    if not common:
        raise CorrespondenceError(f"no common regions; labels_a={sorted(set_a)} labels_b={sorted(set_b)}")
    if len(common) > MAX_REGIONS:
        raise CapacityError(f"regions>{MAX_REGIONS} ({len(common)} corresponding regions)")
    dropped = sorted((set_a | set_b) - set(common))
    if dropped:
        log.warning("dropping non-corresponding region labels %s", dropped)
        la = _reassign(la, common)
        lb = _reassign(lb, common)
    return RegionMaskSet(la, lb, common, dict(names or {}))


def _reassign(labels: np.ndarray, common: Sequence[int]) -> np.ndarray:
    keep = np.isin(labels, common)
    if keep.all():
        return labels
    areas = [(int((labels == c).sum()), -c) for c in common]
    largest = -max(areas)[1]
    out = labels.copy()
    out[~keep] = largest
    return out


def _pack(rgb: np.ndarray) -> np.ndarray:
    if rgb.dtype == np.uint16:
        rgb = (rgb >> 8).astype(np.uint8)
    rgb = rgb.astype(np.int64)
    return (rgb[..., 0] << 16) | (rgb[..., 1] << 8) | rgb[..., 2]


def load_palette(path) -> Dict[int, int]:
    """Read ``{"#RRGGBB": label}`` JSON into a packed-RGB -> label map."""
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise LoadError(f"cannot read palette {path}: {exc}") from exc
    except ValueError as exc:
        raise ValidationError(f"palette {path} is not valid JSON: {exc}") from exc
    return parse_palette(raw)


def parse_palette(raw: Mapping[str, int]) -> Dict[int, int]:
    out = {}
    for color, label in raw.items():
        c = color.lstrip("#")
        if len(c) != 6:
            raise ValidationError(f"bad palette color {color!r}; expected #RRGGBB")
        out[int(c, 16)] = int(label)
    return out


def load_masks(path_a, path_b, palette=None, shape_a=None, shape_b=None) -> RegionMaskSet:
    """Read two mask images and turn colors into corresponding region labels.

    ``palette`` maps colors to labels (a dict as accepted by
    :func:`parse_palette`, or a path to such a JSON file). Without one, the
    distinct colors of both masks are numbered in increasing packed-RGB order.
    ``shape_a``/``shape_b`` are the photos' ``(H, W)``, checked when given.
    """
    packed_a = _pack(read_rgb(path_a))
    packed_b = _pack(read_rgb(path_b))
    for packed, shape, which in ((packed_a, shape_a, "a"), (packed_b, shape_b, "b")):
        if shape is not None and tuple(packed.shape) != tuple(shape):
            raise ValidationError(f"mask_{which} is {packed.shape[0]}x{packed.shape[1]} but photo is {shape[0]}x{shape[1]}")
    names = {}
    if palette is not None:
        table = load_palette(palette) if isinstance(palette, (str, Path)) else parse_palette(palette)
        labels = []
        for packed, which in ((packed_a, "a"), (packed_b, "b")):
            colors = np.unique(packed)
            unknown = [f"#{c:06X}" for c in colors.tolist() if c not in table]
            if unknown:
                raise ValidationError(f"mask_{which} has colors missing from the palette: {unknown}")
            lut_keys = np.array(sorted(table), dtype=np.int64)
            lut_vals = np.array([table[k] for k in lut_keys.tolist()], dtype=np.int64)
            labels.append(lut_vals[np.searchsorted(lut_keys, packed)])
        names = {v: f"#{k:06X}" for k, v in table.items()}
    else:
        colors = np.unique(np.concatenate([packed_a.ravel(), packed_b.ravel()]))
        labels = [np.searchsorted(colors, packed_a), np.searchsorted(colors, packed_b)]
        names = {i: f"#{c:06X}" for i, c in enumerate(colors.tolist())}
    return make_mask_set(labels[0], labels[1], names)


def load_label_map(path, colors: Mapping[int, int], shape=None) -> np.ndarray:
    """Read one mask image using a packed-RGB -> label table."""
    packed = _pack(read_rgb(path))
    if shape is not None and tuple(packed.shape) != tuple(shape):
        raise ValidationError(f"mask is {packed.shape[0]}x{packed.shape[1]} but image is {shape[0]}x{shape[1]}")
    found = np.unique(packed).tolist()
    unknown = [f"#{c:06X}" for c in found if c not in colors]
    if unknown:
        raise RegionLookupError(f"mask colors {unknown} have no region label")
    keys = np.array(sorted(colors), dtype=np.int64)
    vals = np.array([colors[k] for k in keys.tolist()], dtype=np.int64)
    return vals[np.searchsorted(keys, packed)]


def region_mask(masks: RegionMaskSet, side: str, label: int) -> np.ndarray:
    """Binary float32 indicator of ``label`` on one side."""
    if label not in masks.correspondence:
        raise RegionLookupError(f"label {label} not in correspondence {list(masks.correspondence)}")
    return (masks.labels(side) == label).astype(np.float32)


def downsample_labels(labels, size: Tuple[int, int]):
    """Nearest-neighbour resize of an integer label map (numpy or tensor)."""
    h, w = size
    H, W = labels.shape[-2:]
    rows = (np.arange(h) * H) // h
    cols = (np.arange(w) * W) // w
    if isinstance(labels, torch.Tensor):
        return labels[..., torch.as_tensor(rows)[:, None], torch.as_tensor(cols)[None, :]]
    return labels[..., rows[:, None], cols[None, :]]


def layer_masks(labels: np.ndarray, size: Tuple[int, int], regions: Sequence[int], dtype=torch.float32) -> Dict[int, torch.Tensor]:
    """Per-region binary masks at a feature resolution."""
    small = downsample_labels(np.asarray(labels), size)
    return {r: torch.as_tensor(small == r, dtype=dtype) for r in regions}


def composite(outputs: Mapping[int, object], labels) -> object:
    """Assemble one image from per-region outputs by per-pixel selection.

    ``outputs`` values are ``(1, 3, H, W)`` tensors or ``H x W x 3`` arrays;
    ``labels`` is the ``H x W`` label map. The result has the outputs' type.
    """
    labels_np = np.asarray(labels.cpu() if isinstance(labels, torch.Tensor) else labels)
    present = np.unique(labels_np).tolist()
    missing = [lab for lab in present if lab not in outputs]
    if missing:
        raise ValidationError(f"no output for region labels {missing}")
    first = next(iter(outputs.values()))
    is_tensor = isinstance(first, torch.Tensor)
    hw = tuple(labels_np.shape)
    for lab, out in outputs.items():
        spatial = tuple(out.shape[-2:]) if is_tensor else tuple(np.shape(out)[:2])
        if spatial != hw:
            raise ValidationError(f"output for region {lab} has spatial size {spatial}, labels are {hw}")
    if len(present) == 1:
        return outputs[present[0]]
    if is_tensor:
        result = outputs[present[0]]
        for lab in present[1:]:
            sel = torch.as_tensor(labels_np == lab, device=result.device)
            result = torch.where(sel, outputs[lab], result)
        return result
    result = np.array(outputs[present[0]], copy=True)
    for lab in present[1:]:
        sel = labels_np == lab
        result[sel] = np.asarray(outputs[lab])[sel]
    return result
