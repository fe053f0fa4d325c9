import math
import torch
import torch.nn as nn

from .. import tensor as T
from ..errors import DimensionError


def scaled_dot_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
  """softmax(q kᵀ / √d_k) v over the last two axes."""
  if q.shape[-1] != k.shape[-1]:
    raise DimensionError(f'scaled_dot_attention: query {tuple(q.shape)} and key {tuple(k.shape)} differ in depth')
  d_k = k.shape[-1]
  scores = T.matmul(q, k.transpose(-2, -1)) / math.sqrt(d_k)
  return T.matmul(T.softmax(scores, axis=-1), v)


def sap_weights(h: torch.Tensor, u: torch.Tensor) -> torch.Tensor:
  """Normalised importance of every frame: softmax over L of h·u.

  h: B×L×d hidden frames, u: d context vector. Returns B×L.
  """
  if h.shape[-1] != u.shape[-1]:
    raise DimensionError(f'sap_weights: frames {tuple(h.shape)} do not match context vector {tuple(u.shape)}')
  scores = T.matmul(h, u.unsqueeze(-1)).squeeze(-1)
  return T.softmax(scores, axis=-1)


def sap_pool(x: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
  """Weighted sum Σ_l w_l x_l of B×L×d frames, B×L weights → B×d."""
  if x.shape[:-1] != w.shape:
    raise DimensionError(f'sap_pool: frames {tuple(x.shape)} do not match weights {tuple(w.shape)}')
  return T.matmul(w.unsqueeze(-2), x).squeeze(-2)


class SapHead(nn.Module):
  """Self-attentive pooling: h_l = tanh(W x_l + b), w = softmax(h·u)."""

  def __init__(self, dim: int):
    super().__init__()
    self.dim = dim
    self.proj = nn.Linear(dim, dim)
    self.context = nn.Parameter(torch.randn(dim) / math.sqrt(dim))

  def weights(self, x: torch.Tensor) -> torch.Tensor:
    if x.dim() != 3 or x.shape[-1] != self.dim:
      raise DimensionError(f'SapHead: expected B×L×{self.dim} frames, got {tuple(x.shape)}')
    h = torch.tanh(self.proj(x))
    return sap_weights(h, self.context)

  def forward(self, x: torch.Tensor) -> torch.Tensor:
    return sap_pool(x, self.weights(x))


def frame_sequence(feature_map: torch.Tensor) -> torch.Tensor:
  """B×c×h×w map → B×w×c sequence, averaging over the frequency axis."""
  if feature_map.dim() != 4:
    raise DimensionError(f'frame_sequence: expected B×c×h×w, got {tuple(feature_map.shape)}')
  return feature_map.mean(dim=2).transpose(1, 2)
