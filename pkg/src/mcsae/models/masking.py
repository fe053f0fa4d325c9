import torch
import torch.nn as nn

from typing import Optional, Sequence


def sample_mask(
  shape: Sequence[int],
  p: float,
  generator: Optional[torch.Generator] = None,
  dtype: torch.dtype = torch.float64,
) -> torch.Tensor:
  """Bernoulli(1 − p) keep map: 1 keeps an entry, 0 masks it."""
  if not 0. <= p <= 1.:
    raise ValueError(f'sample_mask: masking probability must lie in [0, 1], got {p}')
  u = torch.rand(tuple(shape), generator=generator, dtype=dtype)
  return (u >= p).to(dtype)


def mask_gate(x: torch.Tensor, mask: 'RandomMask', training: bool) -> torch.Tensor:
  """Zero-fills a random subset of x in training mode; identity in eval mode.

  The sampled map is a constant. The multiplier (1 − p) / stopgrad(1 − p) is
  exactly 1 in value and carries d/dp, so the factor is learnt with the rest
  of the model.
  """
  if not training:
    return x

  p = mask.probability
  keep = sample_mask(x.shape, p.item(), mask.generator, dtype=x.dtype)
  survival = 1. - p
  surrogate = survival / survival.detach().clamp_min(1e-12)
  return x * keep * surrogate


class RandomMask(nn.Module):
  """Random masking gate with a trainable adaptive scaling factor."""

  def __init__(self, initial_factor: float = 0.5, seed: Optional[int] = None, enabled: bool = True):
    super().__init__()
    self.factor = nn.Parameter(torch.tensor(float(initial_factor), dtype=torch.float64))
    self.enabled = enabled
    self.generator = torch.Generator()
    if seed is not None:
      self.generator.manual_seed(seed)

  @property
  def probability(self) -> torch.Tensor:
    return self.factor.clamp(0., 1.)

  @torch.no_grad()
  def clamp_factor_(self):
    """Projects the factor back onto [0, 1] after an optimizer step."""
    self.factor.clamp_(0., 1.)

  def reseed(self, seed: int):
    self.generator.manual_seed(seed)

  def forward(self, x: torch.Tensor) -> torch.Tensor:
    return mask_gate(x, self, self.training and self.enabled)

  def extra_repr(self) -> str:
    return f'factor={self.factor.item():.4f}, enabled={self.enabled}'
