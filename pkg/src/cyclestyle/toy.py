"""Procedural 64x64 two-region landscapes used as self-contained fixtures.

Each scene has a sky (label 0) above a ground region (label 1) separated by a
wavy horizon. Pixel values are quantized to 8 bits so the in-memory arrays
match their PNG files exactly.
"""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Tuple

import numpy as np

from .images import save_image
from .regions import RegionMaskSet, make_mask_set

SIZE = 64
SKY, GROUND = 0, 1
# mask colors; sky sorts before ground by packed RGB, matching the labels
MASK_COLORS = {SKY: (0x20, 0x60, 0xE0), GROUND: (0x40, 0xA0, 0x40)}

SCENES: Dict[str, dict] = {
    "day": dict(sky=((0.25, 0.45, 0.85), (0.65, 0.80, 0.95)), ground=((0.30, 0.60, 0.20), (0.15, 0.35, 0.10)),
                horizon=0.42, amp=0.06, freq=1.5, seed=1, sun=None),
    "sunset": dict(sky=((0.55, 0.20, 0.45), (0.98, 0.60, 0.25)), ground=((0.35, 0.20, 0.15), (0.15, 0.08, 0.10)),
                   horizon=0.58, amp=0.04, freq=2.5, seed=2, sun=(0.70, 0.30, 0.09, (1.0, 0.85, 0.55))),
    "snow": dict(sky=((0.70, 0.72, 0.78), (0.88, 0.88, 0.90)), ground=((0.95, 0.95, 0.97), (0.80, 0.82, 0.88)),
                 horizon=0.50, amp=0.08, freq=1.0, seed=3, sun=None),
    "night": dict(sky=((0.02, 0.03, 0.12), (0.10, 0.12, 0.30)), ground=((0.08, 0.10, 0.08), (0.02, 0.03, 0.02)),
                  horizon=0.47, amp=0.05, freq=3.0, seed=4, sun=(0.25, 0.25, 0.05, (0.95, 0.95, 0.85))),
    "dusk": dict(sky=((0.45, 0.25, 0.50), (0.95, 0.65, 0.35)), ground=((0.30, 0.18, 0.12), (0.12, 0.06, 0.08)),
                 horizon=0.50, amp=0.07, freq=2.0, seed=5, sun=(0.35, 0.30, 0.07, (1.0, 0.80, 0.50))),
}

# (style photo a, content photo b) for each fixture pair
PAIRS = {"main": ("day", "sunset"), "retrain": ("snow", "night")}
HELDOUT = "dusk"


def _lerp(c0, c1, t):
    c0, c1 = np.asarray(c0), np.asarray(c1)
    return c0 + (c1 - c0) * t[..., None]


def make_scene(name: str, size: int = SIZE) -> Tuple[np.ndarray, np.ndarray]:
    """Render scene ``name``; returns (``H x W x 3`` float32 image, ``H x W`` labels)."""
    p = SCENES[name]
    rng = np.random.default_rng(p["seed"])
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1.0)
    phase = rng.uniform(0, 2 * np.pi)
    horizon = p["horizon"] + p["amp"] * np.sin(2 * np.pi * p["freq"] * xx + phase)
    ground = yy >= horizon
    labels = np.where(ground, GROUND, SKY).astype(np.int64)

    t_sky = np.clip(yy / np.maximum(horizon, 1e-6), 0, 1)
    t_ground = np.clip((yy - horizon) / np.maximum(1 - horizon, 1e-6), 0, 1)
    img = np.where(ground[..., None], _lerp(*p["ground"], t_ground), _lerp(*p["sky"], t_sky))

    # band-limited texture: a few random plane waves, stronger on the ground
    tex = np.zeros((size, size))
    for _ in range(6):
        kx, ky = rng.uniform(2, 9, size=2)
        tex += np.sin(2 * np.pi * (kx * xx + ky * yy) + rng.uniform(0, 2 * np.pi))
    tex /= 6
    amp = np.where(ground, 0.08, 0.03)
    img = img + (amp * tex)[..., None]

    if p["sun"] is not None:
        cx, cy, r, color = p["sun"]
        d = np.hypot(xx - cx, yy - cy)
        disc = np.clip((r - d) / 0.02 + 0.5, 0, 1) * (~ground)
        img = img * (1 - disc[..., None]) + np.asarray(color) * disc[..., None]

    img = np.clip(img, 0, 1)
    img = (np.rint(img * 255) / 255).astype(np.float32)
    return img, labels


def toy_pair(which: str = "main") -> Tuple[np.ndarray, np.ndarray, RegionMaskSet]:
    a, b = PAIRS[which]
    x_a, l_a = make_scene(a)
    x_b, l_b = make_scene(b)
    return x_a, x_b, make_mask_set(l_a, l_b, {SKY: "sky", GROUND: "ground"})


def toy_heldout() -> Tuple[np.ndarray, np.ndarray]:
    return make_scene(HELDOUT)


def mask_image(labels: np.ndarray) -> np.ndarray:
    out = np.zeros(labels.shape + (3,), dtype=np.float32)
    for lab, rgb in MASK_COLORS.items():
        out[labels == lab] = np.asarray(rgb, dtype=np.float32) / 255.0
    return out


def write_fixtures(directory) -> Dict[str, Path]:
    """Write every scene as ``<name>.png`` plus ``<name>_mask.png``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = {}
    for name in SCENES:
        img, labels = make_scene(name)
        save_image(directory / f"{name}.png", img)
        save_image(directory / f"{name}_mask.png", mask_image(labels))
        written[name] = directory / f"{name}.png"
        written[f"{name}_mask"] = directory / f"{name}_mask.png"
    return written
