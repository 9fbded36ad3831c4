"""Forward contracts and construction determinism for all network builders."""

import numpy as np
import pytest
import torch

from sinusseg.errors import ConfigError
from sinusseg.nets import (
    CBAM,
    BackboneSpec,
    CorrectionNetSpec,
    PatchDiscriminator,
    ResnetGenerator,
    build_backbone,
    build_correction_net,
    build_cyclegan_pair,
    count_parameters,
    register_backbone,
)


def same_params(a, b):
    sa, sb = a.state_dict(), b.state_dict()
    return set(sa) == set(sb) and all(torch.equal(sa[k], sb[k]) for k in sa)


def test_backbone_shape_contract():
    net = build_backbone(BackboneSpec(base_channels=8, depth=4, input_size=128), seed=0)
    net.eval()
    with torch.no_grad():
        out = net(torch.rand(2, 1, 128, 128))
    assert out.shape == (2, 1, 128, 128)


def test_backbone_build_determinism():
    spec = BackboneSpec(base_channels=8, depth=3, input_size=64)
    assert same_params(build_backbone(spec, seed=5), build_backbone(spec, seed=5))
    assert not same_params(build_backbone(spec, seed=5), build_backbone(spec, seed=6))


def test_backbone_default_parameter_budget():
    net = build_backbone(BackboneSpec(), seed=0)
    assert count_parameters(net) < 5_000_000


def test_backbone_config_errors():
    with pytest.raises(ConfigError):
        build_backbone(BackboneSpec(input_size=100, depth=4))
    with pytest.raises(ConfigError, match="unknown backbone"):
        build_backbone(BackboneSpec(name="no_such_model"))


def test_backbone_registry_extension():
    @register_backbone("identity_for_test")
    def _build(spec):
        return torch.nn.Conv2d(1, 1, 1)

    net = build_backbone(BackboneSpec(name="identity_for_test", input_size=32), seed=0)
    assert isinstance(net, torch.nn.Conv2d)


def test_cbam_shape_and_gating():
    torch.manual_seed(0)
    block = CBAM(16)
    x = torch.randn(2, 16, 8, 8)
    out, cw, sw = block(x, return_weights=True)
    assert out.shape == x.shape
    assert ((cw > 0) & (cw < 1)).all()
    assert ((sw > 0) & (sw < 1)).all()
    # purely multiplicative: output is input times both gates
    assert torch.allclose(out, x * cw * sw, atol=1e-6)
    assert (out.abs() <= x.abs() + 1e-6).all()


def test_cbam_zero_input_zero_output():
    torch.manual_seed(1)
    block = CBAM(8)
    out = block(torch.zeros(1, 8, 6, 6))
    assert torch.equal(out, torch.zeros_like(out))


def test_cbam_rejects_single_channel():
    with pytest.raises(ValueError):
        CBAM(1)


def test_correction_net_shape_contract():
    net = build_correction_net(CorrectionNetSpec(base_channels=8), seed=0)
    net.eval()
    with torch.no_grad():
        out = net(torch.rand(1, 1, 128, 128))
    assert out.shape == (1, 1, 128, 128)


def test_correction_net_indivisible_input():
    net = build_correction_net(CorrectionNetSpec(base_channels=8), seed=0)
    with pytest.raises(ConfigError, match="divisible"):
        net(torch.rand(1, 1, 72, 72))


def test_correction_net_cbam_placement():
    full = build_correction_net(CorrectionNetSpec(base_channels=8), seed=0)
    bare = build_correction_net(CorrectionNetSpec(base_channels=8, cbam_stages=()), seed=0)
    n_full = sum(1 for m in full.modules() if isinstance(m, CBAM))
    n_bare = sum(1 for m in bare.modules() if isinstance(m, CBAM))
    # stages 2-4 gated on both the down and the up path, stem and
    # bottleneck never gated
    assert n_full == 6
    assert n_bare == 0
    assert isinstance(full.down_cbam[0], torch.nn.Identity)


def test_correction_net_invalid_cbam_stage():
    with pytest.raises(ConfigError):
        CorrectionNetSpec(cbam_stages={1, 2})


def test_correction_net_skip_connections_are_live():
    torch.manual_seed(2)
    x = torch.rand(1, 1, 32, 32)
    with_skips = build_correction_net(CorrectionNetSpec(base_channels=8), seed=3)
    without = build_correction_net(
        CorrectionNetSpec(base_channels=8, skip_connections=False), seed=3)
    with torch.no_grad():
        a = with_skips(x)
        b = without(x)
    assert a.shape == b.shape
    assert not torch.allclose(a, b)


def test_correction_net_determinism():
    spec = CorrectionNetSpec(base_channels=8)
    a = build_correction_net(spec, seed=7)
    b = build_correction_net(spec, seed=7)
    assert same_params(a, b)
    x = torch.rand(1, 1, 32, 32)
    a.eval()
    b.eval()
    with torch.no_grad():
        assert torch.equal(a(x), b(x))


def test_correction_spec_round_trip():
    spec = CorrectionNetSpec(base_channels=16, cbam_stages={2, 4}, skip_connections=False)
    again = CorrectionNetSpec.from_json(spec.to_json())
    assert again == spec


def test_generator_contract():
    torch.manual_seed(3)
    gen = ResnetGenerator(base_channels=8, n_res_blocks=1)
    gen.eval()
    for size in (64, 128):
        with torch.no_grad():
            out = gen(torch.rand(1, 1, size, size))
        assert out.shape == (1, 1, size, size)
        assert out.min() >= 0.0 and out.max() <= 1.0


def test_discriminator_patch_grid():
    torch.manual_seed(4)
    disc = PatchDiscriminator(base_channels=8)
    with torch.no_grad():
        out = disc(torch.rand(1, 1, 64, 64))
    assert out.shape[:2] == (1, 1)
    assert out.shape[2] >= 1 and out.shape[3] >= 1
    assert out.shape[2] < 64


def test_cycle_composability():
    torch.manual_seed(5)
    g_ab, g_ba, _, _ = build_cyclegan_pair(base_channels=8, n_res_blocks=1,
                                           disc_channels=8, seed=0)
    x = torch.rand(1, 1, 64, 64)
    with torch.no_grad():
        recon = g_ba(g_ab(x))
    assert recon.shape == x.shape


def test_cyclegan_pair_seeded():
    a = build_cyclegan_pair(base_channels=8, n_res_blocks=1, disc_channels=8, seed=11)
    b = build_cyclegan_pair(base_channels=8, n_res_blocks=1, disc_channels=8, seed=11)
    c = build_cyclegan_pair(base_channels=8, n_res_blocks=1, disc_channels=8, seed=12)
    for x, y in zip(a, b):
        assert same_params(x, y)
    assert not same_params(a[0], c[0])


def test_single_step_decreases_loss():
    # gradient flow sanity through residuals, skips and attention gates
    wins = 0
    for seed in range(10):
        torch.manual_seed(100 + seed)
        net = build_correction_net(CorrectionNetSpec(base_channels=8), seed=seed)
        x = torch.rand(1, 1, 32, 32)
        y = (torch.rand(1, 1, 32, 32) < 0.3).float()
        opt = torch.optim.Adam(net.parameters(), lr=1e-5)
        loss_fn = torch.nn.BCEWithLogitsLoss()
        opt.zero_grad()
        before = loss_fn(net(x), y)
        before.backward()
        opt.step()
        with torch.no_grad():
            after = loss_fn(net(x), y)
        if float(after) < float(before.detach()):
            wins += 1
    assert wins >= 9


def test_parameter_count_helper():
    lin = torch.nn.Conv2d(1, 2, 1)  # 1*2 weights + 2 biases
    assert count_parameters(lin) == 4
