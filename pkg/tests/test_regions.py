import json
import logging

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from cyclestyle.errors import CapacityError, CorrespondenceError, RegionLookupError, ValidationError
from cyclestyle.images import save_image
from cyclestyle.regions import (composite, downsample_labels, layer_masks, load_label_map, load_masks, make_mask_set,
                                region_mask)


def _write_mask(path, rgb_map):
    save_image(path, rgb_map.astype(np.float32) / 255.0)


def _solid(h, w, rgb):
    return np.broadcast_to(np.array(rgb), (h, w, 3)).copy()


def test_single_solid_masks(tmp_path):
    _write_mask(tmp_path / "a.png", _solid(8, 8, (10, 20, 30)))
    _write_mask(tmp_path / "b.png", _solid(6, 9, (10, 20, 30)))
    m = load_masks(tmp_path / "a.png", tmp_path / "b.png", shape_a=(8, 8), shape_b=(6, 9))
    assert m.correspondence == (0,)
    assert np.all(region_mask(m, "a", 0) == 1)


def test_color_enumeration_is_sorted_and_joint(tmp_path):
    a = _solid(4, 4, (200, 0, 0))
    a[:2] = (0, 0, 255)
    b = _solid(4, 4, (0, 0, 255))
    b[3] = (200, 0, 0)
    _write_mask(tmp_path / "a.png", a)
    _write_mask(tmp_path / "b.png", b)
    m = load_masks(tmp_path / "a.png", tmp_path / "b.png")
    # 0x0000FF < 0xC80000
    assert m.labels_a[0, 0] == 0 and m.labels_a[3, 0] == 1
    assert m.labels_b[3, 0] == 1 and m.labels_b[0, 0] == 0
    assert m.names == {0: "#0000FF", 1: "#C80000"}


def test_partial_correspondence_drops_and_reassigns(tmp_path, caplog):
    sky, building, lake = (0x80, 0xC0, 0xFF), (0x80, 0x80, 0x80), (0x00, 0x40, 0x80)
    a = _solid(10, 10, sky)
    a[6:, :] = building
    b = _solid(10, 10, sky)
    b[8:, :] = lake
    _write_mask(tmp_path / "a.png", a)
    _write_mask(tmp_path / "b.png", b)
    palette = tmp_path / "pal.json"
    palette.write_text(json.dumps({"#80C0FF": 0, "#808080": 1, "#004080": 2}))
    with caplog.at_level(logging.WARNING):
        m = load_masks(tmp_path / "a.png", tmp_path / "b.png", palette=palette)
    assert m.correspondence == (0,)
    assert "[1, 2]" in caplog.text
    assert set(np.unique(m.labels_a)) == {0} and set(np.unique(m.labels_b)) == {0}


def test_reassignment_goes_to_largest_region():
    la = np.array([[0, 0, 0, 1], [0, 0, 1, 7]])
    lb = np.array([[0, 1], [1, 1]])
    m = make_mask_set(la, lb)
    assert m.correspondence == (0, 1)
    assert m.labels_a[1, 3] == 0  # region 0 is larger in a
    assert m.labels_b.tolist() == [[0, 1], [1, 1]]


def test_nine_common_colors_is_capacity_error(tmp_path):
    row = np.array([(i * 20, 255 - i * 20, 7) for i in range(9)])
    img = np.broadcast_to(row[None], (4, 9, 3))
    _write_mask(tmp_path / "a.png", img)
    _write_mask(tmp_path / "b.png", img)
    with pytest.raises(CapacityError, match="regions>8"):
        load_masks(tmp_path / "a.png", tmp_path / "b.png")


def test_no_common_labels():
    with pytest.raises(CorrespondenceError, match=r"labels_a=\[0\] labels_b=\[1\]"):
        make_mask_set(np.zeros((3, 3), int), np.ones((3, 3), int))


def test_mask_dimension_mismatch(tmp_path):
    _write_mask(tmp_path / "a.png", _solid(8, 8, (1, 2, 3)))
    _write_mask(tmp_path / "b.png", _solid(8, 8, (1, 2, 3)))
    with pytest.raises(ValidationError):
        load_masks(tmp_path / "a.png", tmp_path / "b.png", shape_a=(8, 9))


def test_region_mask_lookup():
    m = make_mask_set(np.zeros((3, 3), int), np.zeros((3, 3), int))
    with pytest.raises(RegionLookupError):
        region_mask(m, "a", 4)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), k=st.integers(1, 8))
def test_indicators_partition(seed, k):
    rng = np.random.default_rng(seed)
    la = rng.integers(0, k, size=(7, 5))
    lb = rng.integers(0, k, size=(6, 6))
    la.flat[:k] = np.arange(k)
    lb.flat[:k] = np.arange(k)
    m = make_mask_set(la, lb)
    for side in "ab":
        total = sum(region_mask(m, side, r) for r in m.correspondence)
        assert np.all(total == 1)
        for size in ((3, 2), (2, 3), (1, 1)):
            masses = layer_masks(m.labels(side), size, m.correspondence)
            assert abs(sum(float(v.sum()) for v in masses.values()) - size[0] * size[1]) <= 1


def test_downsample_nearest():
    labels = np.arange(16).reshape(4, 4)
    assert downsample_labels(labels, (2, 2)).tolist() == [[0, 2], [8, 10]]
    t = torch.as_tensor(labels)
    assert downsample_labels(t, (2, 2)).tolist() == [[0, 2], [8, 10]]


def test_composite_single_region_is_exact():
    out = torch.rand(1, 3, 4, 4)
    assert composite({3: out}, np.full((4, 4), 3)) is out


def test_composite_vertical_split():
    labels = np.zeros((4, 6), dtype=int)
    labels[:, 3:] = 1
    res = composite({0: np.full((4, 6, 3), 0.2), 1: np.full((4, 6, 3), 0.8)}, labels)
    assert np.all(res[:, :3] == 0.2) and np.all(res[:, 3:] == 0.8)
    t = composite({0: torch.full((1, 3, 4, 6), 0.2), 1: torch.full((1, 3, 4, 6), 0.8)}, labels)
    assert torch.all(t[..., :3] == 0.2) and torch.all(t[..., 3:] == 0.8)


def test_composite_idempotent():
    x = torch.rand(1, 3, 5, 5)
    labels = np.random.default_rng(0).integers(0, 3, (5, 5))
    assert torch.equal(composite({0: x, 1: x, 2: x}, labels), x)


def test_composite_errors():
    labels = np.array([[0, 1]])
    with pytest.raises(ValidationError):
        composite({0: torch.zeros(1, 3, 1, 2)}, labels)
    with pytest.raises(ValidationError):
        composite({0: torch.zeros(1, 3, 1, 2), 1: torch.zeros(1, 3, 2, 2)}, labels)


def test_load_label_map_with_color_table(tmp_path):
    img = _solid(3, 3, (0, 0, 255))
    img[0] = (255, 0, 0)
    _write_mask(tmp_path / "m.png", img)
    labels = load_label_map(tmp_path / "m.png", {0x0000FF: 4, 0xFF0000: 9})
    assert labels.tolist() == [[9, 9, 9], [4, 4, 4], [4, 4, 4]]
    with pytest.raises(RegionLookupError):
        load_label_map(tmp_path / "m.png", {0x0000FF: 4})
