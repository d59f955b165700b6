"""Image buffers: validation, tensor conversion and PNG I/O.

Images travel through the library as ``(1, 3, H, W)`` tensors with values in
[0, 1]. At the boundaries (files, user code) they are ``H x W x 3`` arrays.
"""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np
import torch

from .errors import LoadError, ValidationError


def to_tensor(image, dtype: torch.dtype | None = None, check_range: bool = True) -> torch.Tensor:
    """Validate ``image`` and return it as a ``(1, 3, H, W)`` tensor.

    Accepts an ``H x W x 3`` array, a ``3 x H x W`` tensor or a batched
    ``1 x 3 x H x W`` tensor.
    """
    if isinstance(image, torch.Tensor):
        t = image
        if t.dim() == 3:
            t = t.unsqueeze(0)
        if t.dim() != 4 or t.shape[0] != 1:
            raise ValidationError(f"expected a (1, 3, H, W) tensor, got shape {tuple(image.shape)}")
    else:
        arr = np.asarray(image)
        if arr.ndim != 3:
            raise ValidationError(f"expected an H x W x 3 array, got shape {arr.shape}")
        t = torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1))).unsqueeze(0)
    if t.shape[1] != 3:
        raise ValidationError(f"expected 3 channels, got {t.shape[1]}")
    if dtype is not None:
        t = t.to(dtype)
    elif not t.is_floating_point():
        t = t.to(torch.float32)
    if not torch.isfinite(t).all():
        raise ValidationError("image contains NaN or infinite pixels")
    if check_range and t.numel() and (t.min() < 0 or t.max() > 1):
        raise ValidationError("pixel values must lie in [0, 1]")
    return t


def to_numpy(t: torch.Tensor) -> np.ndarray:
    """``(1, 3, H, W)`` tensor to an ``H x W x 3`` array (copy, detached)."""
    if t.dim() == 4:
        t = t[0]
    return t.detach().cpu().numpy().transpose(1, 2, 0).copy()


def read_rgb(path) -> np.ndarray:
    """Read an image file as raw RGB integers (uint8 or uint16), alpha dropped."""
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"no such image: {path}")
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise LoadError(f"cannot decode image: {path}")
    if raw.ndim == 2:
        raw = np.repeat(raw[:, :, None], 3, axis=2)
    elif raw.shape[2] == 4:
        raw = raw[:, :, :3]
    return raw[:, :, ::-1].copy()


def load_image(path) -> np.ndarray:
    """Load a PNG (8- or 16-bit) as an ``H x W x 3`` float32 array in [0, 1]."""
    raw = read_rgb(path)
    scale = 65535.0 if raw.dtype == np.uint16 else 255.0
    return (raw.astype(np.float32) / np.float32(scale)).astype(np.float32)


def save_image(path, image, bits: int = 8) -> None:
    """Write an image as PNG, rounding half-to-even at the chosen bit depth."""
    if bits not in (8, 16):
        raise ValidationError(f"bits must be 8 or 16, got {bits}")
    arr = image if isinstance(image, np.ndarray) else to_numpy(image)
    arr = np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0)
    top = 255 if bits == 8 else 65535
    q = np.rint(arr * top).astype(np.uint8 if bits == 8 else np.uint16)
    if not cv2.imwrite(str(path), np.ascontiguousarray(q[:, :, ::-1])):
        raise LoadError(f"cannot write image: {path}")
