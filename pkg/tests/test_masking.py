import pytest
import torch

from mcsae import tensor as T
from mcsae.models import RandomMask, mask_gate, sample_mask


def randn(*shape, seed=0):
  return torch.randn(shape, generator=torch.Generator().manual_seed(seed), dtype=T.DTYPE)


def test_sample_mask_extremes():
  assert bool((sample_mask((100,), 0.) == 1).all())
  assert bool((sample_mask((100,), 1.) == 0).all())
  with pytest.raises(ValueError):
    sample_mask((3,), 1.5)


def test_sample_mask_keeps_about_one_minus_p():
  g = torch.Generator().manual_seed(0)
  keep = sample_mask((20000,), 0.3, generator=g)
  assert set(keep.unique().tolist()) <= {0., 1.}
  assert keep.mean().item() == pytest.approx(0.7, abs=0.02)


def test_random_mask_is_identity_in_eval_mode():
  mask = RandomMask(0.9, seed=0).eval()
  x = randn(4, 16)
  assert torch.equal(mask(x), x)


def test_random_mask_disabled_is_identity_in_training():
  mask = RandomMask(0.9, seed=0, enabled=False).train()
  x = randn(4, 16)
  assert torch.equal(mask(x), x)


def test_random_mask_zero_fills_without_rescaling():
  mask = RandomMask(0.5, seed=0).train()
  x = randn(8, 32)
  y = mask(x)
  kept = y != 0
  assert 0 < int(kept.sum()) < x.numel()
  torch.testing.assert_close(y[kept], x[kept], rtol=0, atol=1e-12)


def test_random_mask_is_reproducible_from_its_seed():
  x = randn(8, 32)
  a = RandomMask(0.5, seed=7).train()
  b = RandomMask(0.5, seed=7).train()
  assert torch.equal(a(x), b(x))
  assert torch.equal(a(x), b(x))

  a.reseed(7)
  c = RandomMask(0.5, seed=7).train()
  assert torch.equal(a(x), c(x))


def test_probability_is_clamped_factor():
  mask = RandomMask(0.5)
  with torch.no_grad():
    mask.factor.fill_(1.7)
  assert mask.probability.item() == 1.
  with torch.no_grad():
    mask.factor.fill_(-0.2)
  assert mask.probability.item() == 0.


def test_factor_receives_a_gradient():
  mask = RandomMask(0.25, seed=1).train()
  x = randn(4, 16).abs() + 0.1
  y = mask_gate(x, mask, training=True)
  kept = (y != 0).to(T.DTYPE)
  T.backward(y.sum())
  expected = -(x * kept).sum() / (1 - 0.25)
  assert mask.factor.grad is not None
  assert mask.factor.grad.item() == pytest.approx(expected.item(), rel=1e-9)


def test_factor_grad_is_zero_outside_the_unit_interval():
  mask = RandomMask(1.5, seed=1).train()
  y = mask_gate(randn(4, 16), mask, training=True)
  T.backward(y.sum())
  assert mask.factor.grad.item() == 0.


@pytest.mark.parametrize('sign, bound', [(1., 1.), (-1., 0.)])
def test_clamp_factor_after_an_overshooting_step(sign, bound):
  mask = RandomMask(0.5, seed=1).train()
  optimizer = torch.optim.SGD(mask.parameters(), lr=10.)
  x = randn(4, 16).abs() + 0.1
  T.backward(sign * mask_gate(x, mask, training=True).sum())
  optimizer.step()
  assert not 0. <= mask.factor.item() <= 1.

  mask.clamp_factor_()
  assert mask.factor.item() == bound
  assert mask.factor.requires_grad
