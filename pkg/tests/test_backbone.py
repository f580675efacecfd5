import pytest
import torch

from fancl.backbone import BackboneConfig, backbone_forward, build_backbone, count_parameters
from fancl.core import one_hot
from fancl.gradcheck import check_gradients, max_rel_err
from fancl.losses import dice_ce


def cfg(**kw):
    base = dict(depth=2, base_channels=8, num_classes=4, in_modalities=2)
    return BackboneConfig(**{**base, **kw})


def test_same_seed_same_parameters():
    a, b = build_backbone(cfg(), seed=3), build_backbone(cfg(), seed=3)
    assert count_parameters(a) == count_parameters(b)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)


def test_depth_zero_rejected():
    with pytest.raises(ValueError):
        BackboneConfig(depth=0)


def test_depth_changes_parameter_count():
    assert count_parameters(build_backbone(cfg(depth=2), 0)) != count_parameters(build_backbone(cfg(depth=3), 0))


def test_output_shapes():
    out = backbone_forward(build_backbone(cfg(), 0), torch.randn(2, 8, 16, 16))
    assert out.logits.shape == (4, 8, 16, 16)
    assert out.first_feature.shape == (8, 8, 16, 16)


def test_indivisible_dims_rejected():
    with pytest.raises(ValueError, match="divisible"):
        build_backbone(cfg(), 0)(torch.randn(1, 2, 8, 16, 10))


def test_zero_head_gives_equal_logits():
    net = build_backbone(cfg(zero_init_head=True), 0)
    logits = net(torch.zeros(1, 2, 8, 16, 16)).logits
    assert torch.equal(logits, torch.zeros_like(logits))


def test_forward_is_pure():
    net = build_backbone(cfg(), 0).eval()
    x = torch.randn(1, 2, 8, 16, 16)
    with torch.no_grad():
        assert torch.equal(net(x).logits, net(x).logits)


def test_softmax_sums_to_one():
    probs = torch.softmax(build_backbone(cfg(), 1)(torch.randn(2, 2, 8, 16, 16)).logits, dim=1)
    assert torch.allclose(probs.sum(1), torch.ones(2, 8, 16, 16), atol=1e-6)


def test_depth_sets_downsampling_stages():
    assert [build_backbone(cfg(depth=d), 0).num_downsamplings for d in (1, 2, 3)] == [1, 2, 3]


def test_dice_ce_gradients_match_finite_differences():
    net = build_backbone(cfg(base_channels=4, num_classes=3), 0, dtype=torch.float64)
    g = torch.Generator().manual_seed(0)
    x = torch.randn(1, 2, 8, 16, 16, generator=g, dtype=torch.float64)
    target = one_hot(torch.randint(0, 3, (1, 8, 16, 16), generator=g), 3)

    def loss():
        d, c = dice_ce(torch.softmax(net(x).logits, 1), target)
        return d + c

    assert max_rel_err(check_gradients(loss, net)) < 1e-4
