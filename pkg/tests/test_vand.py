import math

import pytest
import torch

from vand_rnn.core import compute
from vand_rnn.core.vand import (
    EffectiveParams,
    effective_params,
    sample_mask,
    sample_noise,
    transform_ratio,
    transform_scale,
)
from vand_rnn.models import VandKind, VandMode
from vand_rnn.models.layers import VandLayerParams
from vand_rnn.utils.errors import ConfigError
from vand_rnn.utils.random_stream import RandomStream


def leaf(values):
    return compute.tensor(values, requires_grad=True)


def grad_of_sum(fn, x):
    return compute.backward(fn(x).sum(), {"x": x})["x"]


def test_transform_scale_values_and_identity_gradient():
    assert transform_scale(leaf([0.0])).item() == pytest.approx(math.log(2), abs=1e-15)
    tail = leaf([-20.0])
    assert transform_scale(tail).item() == pytest.approx(2.061153618e-9, rel=1e-6)
    assert grad_of_sum(transform_scale, tail).tolist() == [1.0]
    s = leaf([-3.0, 0.0, 0.5, 12.0])
    assert grad_of_sum(transform_scale, s).tolist() == [1.0] * 4


def exact_softplus(v):
    return v + math.log1p(math.exp(-v)) if v > 0 else math.log1p(math.exp(v))


@pytest.mark.parametrize("raw", [21.0, 30.0, 45.0])
def test_transform_scale_exact_in_upper_tail(raw):
    assert abs(transform_scale(leaf([raw])).item() - exact_softplus(raw)) <= 1e-15
    assert grad_of_sum(transform_scale, leaf([raw])).tolist() == [1.0]


def test_transform_forward_values_match_reference():
    raw = torch.linspace(-40.0, 40.0, 161, dtype=torch.float64)
    expected = torch.tensor([exact_softplus(v) for v in raw.tolist()], dtype=torch.float64)
    assert float((transform_scale(raw) - expected).abs().max()) <= 1e-15
    assert float((transform_ratio(raw) - torch.sigmoid(raw)).abs().max()) <= 1e-15


def test_transform_ratio_values_and_identity_gradient():
    assert transform_ratio(leaf([0.0])).item() == 0.5
    high = leaf([10.0])
    assert transform_ratio(high).item() == pytest.approx(0.9999546, abs=1e-7)
    assert grad_of_sum(transform_ratio, high).tolist() == [1.0]
    b = leaf([-5.0, 0.0, 5.0])
    assert grad_of_sum(transform_ratio, b).tolist() == [1.0] * 3


def test_transform_ranges():
    s = leaf([-30.0, -1.0, 0.0, 3.0])
    assert bool((transform_scale(s) > 0).all())
    b = leaf([-30.0, 0.0, 30.0])
    beta = transform_ratio(b)
    assert bool(((beta > 0) & (beta <= 1)).all())


def test_noise_zero_scale():
    eps = sample_noise(torch.zeros(5, dtype=torch.float64), RandomStream.from_seed(0), batch=3)
    assert eps.shape == (3, 5)
    assert bool((eps == 0).all())


def test_noise_empirical_std():
    n = 100_000
    eps = sample_noise(torch.full((1,), 0.3, dtype=torch.float64), RandomStream.from_seed(11), batch=n)
    assert abs(eps.std().item() - 0.3) < 3 * 0.3 / math.sqrt(2 * n)


def test_noise_reproducible_and_linear_in_scale():
    sigma = torch.tensor([0.1, 0.4, 2.0], dtype=torch.float64)
    first = sample_noise(sigma, RandomStream.from_seed(21), batch=5)
    again = sample_noise(sigma, RandomStream.from_seed(21), batch=5)
    assert torch.equal(first, again)
    scaled = sample_noise(sigma * 4.0, RandomStream.from_seed(21), batch=5)
    assert torch.equal(scaled, first * 4.0)


def test_noise_gradient_with_fixed_draws():
    sigma = leaf([0.2, 0.5, 0.9])

    def energy(s):
        return (sample_noise(s, RandomStream.from_seed(4)) ** 2).sum()

    zeta = RandomStream.from_seed(4).normal((1, 3))[0]
    grads = compute.backward(energy(sigma), {"s": sigma})["s"]
    assert torch.allclose(grads, 2 * sigma.detach() * zeta ** 2, rtol=1e-12, atol=0)
    assert compute.grad_check(energy, sigma.detach()) < 1e-5


def test_mask_degenerate_ratios():
    rng = RandomStream.from_seed(2)
    assert bool((sample_mask(torch.zeros(6, dtype=torch.float64), rng, batch=20) == 0).all())
    assert bool((sample_mask(torch.ones(6, dtype=torch.float64), rng, batch=20) == 1).all())


def test_mask_empirical_mean():
    n = 10_000
    mask = sample_mask(torch.full((1,), 0.25, dtype=torch.float64), RandomStream.from_seed(8), batch=n)
    assert set(mask.unique().tolist()) <= {0.0, 1.0}
    assert abs(mask.mean().item() - 0.25) < 3 * math.sqrt(0.25 * 0.75 / n)


def test_mask_straight_through_gradient():
    beta = leaf([0.1, 0.6, 0.9])
    mask = sample_mask(beta, RandomStream.from_seed(3), batch=4)
    grads = compute.backward(mask.sum(), {"beta": beta})["beta"]
    assert grads.tolist() == [4.0, 4.0, 4.0]


def test_effective_params_vanilla():
    eff = effective_params(VandLayerParams(5), VandMode(VandKind.VANILLA))
    assert bool((eff.sigma == 0).all()) and bool((eff.beta == 0).all())
    assert (eff.learn_sigma, eff.learn_beta) == (False, False)
    assert not eff.has_noise and not eff.has_dropout


def test_effective_params_constant_modes():
    noise = effective_params(VandLayerParams(3), VandMode.parse("const_noise"))
    assert noise.sigma.tolist() == [1e-2] * 3
    assert noise.beta.tolist() == [0.0] * 3
    dropout = effective_params(VandLayerParams(3), VandMode.parse("const_dropout"))
    assert dropout.beta.tolist() == [1e-2] * 3
    assert dropout.sigma.tolist() == [0.0] * 3
    assert not dropout.learn_beta


def test_effective_params_variable_modes_at_init():
    eff = effective_params(VandLayerParams(4), VandMode.parse("vand"))
    assert torch.allclose(eff.sigma, torch.full((4,), math.log(2), dtype=torch.float64))
    assert eff.beta.tolist() == [0.5] * 4
    assert (eff.learn_sigma, eff.learn_beta) == (True, True)

    var_noise = effective_params(VandLayerParams(4), VandMode.parse("var_noise"))
    assert (var_noise.learn_sigma, var_noise.learn_beta) == (True, False)
    assert var_noise.beta.tolist() == [0.0] * 4

    var_dropout = effective_params(VandLayerParams(4), VandMode.parse("var_dropout"))
    assert (var_dropout.learn_sigma, var_dropout.learn_beta) == (False, True)
    assert var_dropout.sigma.tolist() == [0.0] * 4


def test_effective_params_gradients_reach_raw_parameters():
    params = VandLayerParams(3)
    eff = effective_params(params, VandMode.parse("vand"))
    grads = compute.backward((eff.sigma * 2 + eff.beta).sum(), dict(params.named_parameters()))
    assert grads["sigma_real"].tolist() == [2.0] * 3
    assert grads["beta_real"].tolist() == [1.0] * 3


def test_learnable_zero_values_still_count_as_active():
    zeros = torch.zeros(2, dtype=torch.float64)
    eff = EffectiveParams(zeros, zeros, learn_sigma=True, learn_beta=True)
    assert eff.has_noise and eff.has_dropout


def test_mode_parsing():
    assert VandMode.parse("VAND").kind is VandKind.VAND
    with pytest.raises(ConfigError, match="vanilla, const_noise, var_noise, const_dropout, var_dropout, vand"):
        VandMode.parse("dropconnect")
    with pytest.raises(ConfigError):
        VandMode(VandKind.CONST_NOISE, const_value=1.5)
