import colorsys
import json
import math

import numpy as np
import pytest
import torch

from cyclestyle.errors import ValidationError
from cyclestyle.metrics import IDENTICAL, EvalReport, evaluate, psnr, rgb_to_hsv, saturation_hist_distance, style_gram_distance


def test_psnr_known_values():
    a = np.full((4, 4, 3), 0.5)
    assert psnr(a, np.full_like(a, 0.25)) == pytest.approx(10 * math.log10(16), abs=1e-9)
    assert psnr(a, np.full_like(a, 0.25)) == pytest.approx(12.0412, abs=1e-4)
    assert psnr(np.zeros((2, 2, 3)), np.ones((2, 2, 3))) == 0.0
    assert psnr(a, a) == IDENTICAL


def test_psnr_accepts_tensors():
    x = torch.rand(1, 3, 8, 8)
    assert psnr(x, x.numpy()[0].transpose(1, 2, 0)) == IDENTICAL
    with pytest.raises(ValidationError):
        psnr(x, torch.rand(1, 3, 8, 9))


def test_hsv_against_colorsys(rng):
    pixels = rng.random((500, 3))
    pixels[:20] = pixels[:20, :1]  # grays
    pixels[20] = 0.0
    ours = rgb_to_hsv(pixels)
    ref = np.array([colorsys.rgb_to_hsv(*p) for p in pixels])
    assert np.abs(ours - ref).max() <= 1e-6


def test_saturation_distance_extremes():
    gray = np.full((8, 8, 3), 0.4)
    red = np.zeros((8, 8, 3))
    red[..., 0] = 1.0
    assert saturation_hist_distance(gray, red) == pytest.approx(2.0)
    assert saturation_hist_distance(red, red) == 0.0
    with pytest.raises(ValidationError):
        saturation_hist_distance(gray, red, bins=1)


def test_saturation_distance_symmetric(rng):
    x, y = rng.random((16, 16, 3)), rng.random((16, 16, 3))
    assert saturation_hist_distance(x, y) == saturation_hist_distance(y, x)
    assert 0.0 <= saturation_hist_distance(x, y) <= 2.0


def test_style_gram_distance_zero_on_self(backbone, rng):
    x = rng.random((32, 32, 3))
    assert style_gram_distance(x, x, backbone) == 0.0


def test_report_json_identical():
    rep = EvalReport(IDENTICAL, 30.0, 20.0, 21.0, 0.1, 0.2, 0.3)
    d = json.loads(rep.to_json())
    assert d["self_psnr_a"] == "identical" and d["sat_hist_dist"] == 0.3
    assert len(d) == 7


def test_evaluate_fields(trained, backbone):
    rep = evaluate(trained["ckpt"], backbone).to_dict()
    assert set(rep) == {"self_psnr_a", "self_psnr_b", "cycle_psnr_a", "cycle_psnr_b",
                        "style_gram_dist_to_a", "style_gram_dist_to_b", "sat_hist_dist"}
    assert all(isinstance(v, float) and math.isfinite(v) for v in rep.values())
