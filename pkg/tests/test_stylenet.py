import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from cyclestyle.errors import CapacityError, ValidationError
from cyclestyle.stylenet import NetConfig, build_pair, forward, in_param_view, layer_specs

SMALL = NetConfig(base_channels=4)


def test_default_topology():
    specs = layer_specs(NetConfig())
    assert len(specs) == 16
    assert sum(s.residual for s in specs) == 10
    assert all(s.kernel == 1 for s in specs if s.residual)
    assert [s.stride for s in specs[:3]] == [1, 2, 2]
    assert [s.normalized for s in specs] == [True] * 15 + [False]
    assert [s.out_channels for s in specs[:3]] == [32, 64, 128]
    assert [(s.kernel, s.out_channels) for s in specs[-3:]] == [(3, 64), (3, 32), (9, 3)]


def test_region_capacity():
    with pytest.raises(CapacityError):
        build_pair(SMALL, range(9))
    with pytest.raises(ValidationError):
        build_pair(SMALL, [])
    assert len(build_pair(SMALL, range(8)).region_labels) == 8


def test_same_seed_bit_identical():
    a = build_pair(NetConfig(), (0, 1), seed=11).named_tensors()
    b = build_pair(NetConfig(), (0, 1), seed=11).named_tensors()
    assert a.keys() == b.keys()
    assert all(torch.equal(a[k], b[k]) for k in a)
    c = build_pair(NetConfig(), (0, 1), seed=12).named_tensors()
    assert not torch.equal(a["trunk/layer/0/kernel"], c["trunk/layer/0/kernel"])


def test_in_params_initialized_to_identity_affine():
    pair = build_pair(SMALL, (2, 5))
    for name, t in pair.named_tensors().items():
        if name.endswith("/scale"):
            assert torch.all(t == 1)
        elif name.endswith("/shift"):
            assert torch.all(t == 0)
    # every normalized layer has a set per (style, region), sized to its channels
    for style in "ab":
        for r in (2, 5):
            for s in layer_specs(SMALL):
                if s.normalized:
                    assert pair.in_param(style, r, s.index, "scale").shape == (s.out_channels,)
    assert not any("/layer/15/" in n and n.startswith("style/") for n in pair.named_tensors())


@pytest.mark.parametrize("shape", [(64, 64), (70, 40), (8, 8), (33, 17)])
def test_shape_preserved(shape):
    pair = build_pair(SMALL, (0,))
    img = np.random.default_rng(0).random(shape + (3,)).astype(np.float32)
    out = forward(pair.view("a", 0), img)
    assert out.shape == (1, 3) + shape


def test_padding_trace_70x40():
    # 70 -> padded 72 -> 36 -> 18 -> 36 -> 72 -> cropped 70; 40 is already a multiple of 4
    pair = build_pair(SMALL, (0,))
    seen = []
    handle = pair.trunks["shared"].convs[2].register_forward_hook(lambda m, i, o: seen.append(tuple(o.shape[-2:])))
    out = pair.view("b", 0)(torch.rand(1, 3, 70, 40))
    handle.remove()
    assert seen == [(18, 10)]
    assert out.shape[-2:] == (70, 40)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), h=st.integers(8, 24), w=st.integers(8, 24))
def test_output_in_open_unit_interval(seed, h, w):
    pair = build_pair(SMALL, (0,), seed=seed)
    x = torch.from_numpy(np.random.default_rng(seed).random((1, 3, h, w)).astype(np.float32))
    with torch.no_grad():
        y = pair.forward_regions(x, "a")
    assert y.shape == (1, 3, h, w)
    assert float(y.min()) > 0.0 and float(y.max()) < 1.0


def test_in_param_view_counts():
    regions = (0, 1, 3)
    pair = build_pair(SMALL, regions)
    norm = in_param_view(pair, "instance_norm_only")
    n_norm_layers = sum(s.normalized for s in layer_specs(SMALL))
    # one scale and one shift per (style, region, normalized layer)
    assert len(norm) == 2 * len(regions) * n_norm_layers * 2
    conv_ids = {id(p) for p in pair.conv_parameters()}
    assert not conv_ids & {id(p) for p in norm}
    everything = in_param_view(pair, "all")
    assert {id(p) for p in norm} <= {id(p) for p in everything}
    assert conv_ids <= {id(p) for p in everything}


def test_instance_norm_only_step_leaves_convs_untouched():
    pair = build_pair(SMALL, (0,))
    before = {k: v.detach().clone() for k, v in pair.named_tensors().items() if k.startswith("trunk/")}
    for p in pair.conv_parameters():
        p.requires_grad_(False)
    opt = torch.optim.Adam(in_param_view(pair, "instance_norm_only"), lr=0.1)
    pair.forward_regions(torch.rand(1, 3, 16, 16), "a").sum().backward()
    opt.step()
    after = pair.named_tensors()
    assert all(torch.equal(before[k], after[k]) for k in before)
    assert not torch.equal(pair.in_param("a", 0, 0, "shift"), torch.zeros(4))


def test_style_separation_is_bit_exact():
    pair = build_pair(SMALL, (0, 1), seed=2)
    x = torch.rand(1, 3, 16, 16)
    with torch.no_grad():
        ref = pair.view("a", 0)(x).clone()
        ref_batched = pair.forward_regions(x, "a")[0].clone()
        pair.in_param("b", 0, 4, "shift").add_(1.0)
        pair.in_param("a", 1, 4, "scale").mul_(3.0)
        assert torch.equal(pair.view("a", 0)(x), ref)
        assert torch.equal(pair.forward_regions(x, "a")[0], ref_batched)
        pair.in_param("a", 0, 4, "shift").add_(1.0)
        assert not torch.equal(pair.view("a", 0)(x), ref)


def test_views_share_the_trunk():
    pair = build_pair(SMALL, (0, 1))
    va, vb = pair.view("a", 0), pair.view("b", 1)
    x = torch.rand(1, 3, 16, 16)
    with torch.no_grad():
        before = vb(x).clone()
        va.parameters()[0].mul_(0.5)  # first trunk kernel, reached through view a
        assert va.parameters()[0] is vb.parameters()[0]
        assert not torch.equal(vb(x), before)


def test_per_region_trunks_escape_hatch():
    pair = build_pair(NetConfig(base_channels=4, per_region_trunks=True), (0, 1), seed=1)
    assert pair.trunk_for(0) is not pair.trunk_for(1)
    assert "trunk/region/1/layer/0/kernel" in pair.named_tensors()
    out = pair.forward_regions(torch.rand(1, 3, 16, 16), "b")
    assert out.shape == (2, 3, 16, 16)


def test_apply_composites_regions():
    pair = build_pair(SMALL, (0, 1), seed=3)
    with torch.no_grad():
        pair.in_param("a", 1, 14, "shift").add_(2.0)
    x = torch.rand(1, 3, 16, 16)
    labels = np.zeros((16, 16), dtype=int)
    labels[:, 8:] = 1
    with torch.no_grad():
        both = pair.forward_regions(x, "a")
        out = pair.apply("a", x, labels)
    assert torch.equal(out[..., :8], both[0:1, :, :, :8])
    assert torch.equal(out[..., 8:], both[1:2, :, :, 8:])
    with pytest.raises(ValidationError):
        pair.apply("a", x, None)


def test_gradients_reach_trunk_and_view_params():
    pair = build_pair(SMALL, (0,))
    pair.view("b", 0)(torch.rand(1, 3, 16, 16)).sum().backward()
    assert pair.trunks["shared"].convs[0].weight.grad is not None
    assert pair.in_param("b", 0, 0, "scale").grad is not None
    assert pair.in_param("a", 0, 0, "scale").grad is None
