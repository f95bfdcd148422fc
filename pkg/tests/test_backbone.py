import pytest
import torch

from unitad.backbone import AuxiliaryCombiner, BaseModule, build_backbone
from unitad.core import ConfigError, ModelConfig


def _zero_biases(m):
    for name, p in m.named_parameters():
        if name.endswith("bias"):
            torch.nn.init.zeros_(p)
    return m


def test_zero_input_zero_output():
    m = _zero_biases(BaseModule(6, 8))
    assert torch.count_nonzero(m(torch.zeros(2, 6, 10))) == 0


def test_output_shape():
    assert BaseModule(64, 256)(torch.randn(1, 64, 100)).shape == (1, 256, 100)
    assert BaseModule(4, 8)(torch.randn(4, 7)).shape == (1, 8, 7)


def test_channel_mismatch_is_config_error():
    with pytest.raises(ConfigError):
        BaseModule(6, 8)(torch.randn(1, 5, 10))


def test_input_gradient_matches_finite_difference():
    m = BaseModule(3, 5).double()
    x = torch.randn(1, 3, 9, dtype=torch.float64, requires_grad=True)
    m(x).sum().backward()
    eps = 1e-6
    for idx in [(0, 0, 0), (0, 1, 4), (0, 2, 8)]:
        xp, xm = x.detach().clone(), x.detach().clone()
        xp[idx] += eps
        xm[idx] -= eps
        fd = (m(xp).sum() - m(xm).sum()).item() / (2 * eps)
        assert x.grad[idx].item() == pytest.approx(fd, rel=1e-4, abs=1e-9)


def test_every_parameter_gets_gradient():
    m = BaseModule(4, 6)
    m(torch.randn(3, 4, 16)).square().sum().backward()
    for name, p in m.named_parameters():
        assert p.grad is not None and torch.count_nonzero(p.grad) > 0, name


def test_auxiliary_identical_streams_tile():
    main = BaseModule(4, 6)
    aux = BaseModule(4, 6)
    aux.load_state_dict(main.state_dict())
    x = torch.randn(2, 4, 10)
    out = AuxiliaryCombiner(main, aux)(x, x)
    single = main(x)
    assert torch.equal(out, torch.cat([single, single], dim=-1))


def test_auxiliary_shapes_and_zero_stream():
    comb = AuxiliaryCombiner(BaseModule(64, 256), _zero_biases(BaseModule(2304, 256)))
    out = comb(torch.randn(1, 64, 100), torch.zeros(1, 2304, 100))
    assert out.shape == (1, 256, 200)
    assert torch.count_nonzero(out[..., 100:]) == 0


def test_auxiliary_hidden_mismatch():
    with pytest.raises(ConfigError):
        AuxiliaryCombiner(BaseModule(4, 6), BaseModule(4, 8))


def test_build_backbone_modes():
    assert isinstance(build_backbone(ModelConfig(in_dim=4, hidden_dim=8)), BaseModule)
    assert isinstance(build_backbone(ModelConfig(in_dim=4, aux_dim=3, hidden_dim=8)), AuxiliaryCombiner)
