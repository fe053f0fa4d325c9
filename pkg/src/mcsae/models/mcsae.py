"""Multi-level cross-stage attention.

Each stage pairs the pooled vectors of two consecutive backbone stages. Two
cross branches let every vector attend to the other one, and their outer
product, taken over unit-length columns, is a rank-one segment matrix z_i of
shape d_i×d_{i+1}. Chaining
P1 z1 z2 z3 z4 lands in the space of the last stage.
"""

import math
import torch
import torch.nn as nn
import torch.nn.functional as F

from typing import List, Optional, Sequence, Tuple
from .masking import RandomMask
from .. import tensor as T
from ..errors import DimensionError


def transform_layer(p: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor, slope: float) -> torch.Tensor:
  """LReLU(W·p + b) with scalar W and b."""
  return T.leaky_relu(weight * p + bias, slope)


def cross_branch(query: torch.Tensor, key_value: torch.Tensor) -> torch.Tensor:
  """softmax(qᵀ kv / √d_k) kvᵀ for B×d_q queries and B×d_k keys.

  The score matrix is d_q×d_k per batch item and is normalised along d_k.
  Returns B×d_q×1.
  """
  if query.dim() != 2 or key_value.dim() != 2 or query.shape[0] != key_value.shape[0]:
    raise DimensionError(
      f'cross_branch: expected B×d_q and B×d_k, got {tuple(query.shape)} and {tuple(key_value.shape)}'
    )
  d_k = key_value.shape[-1]
  kv = key_value.unsqueeze(-2)  # B×1×d_k
  scores = T.matmul(query.unsqueeze(-1), kv) / math.sqrt(d_k)  # B×d_q×d_k
  return T.matmul(T.softmax(scores, axis=-1), kv.transpose(-2, -1))


class McsaeStage(nn.Module):
  """Segment matrix of one pair of stages (P_i, P_{i+1})."""

  def __init__(self, dim_in: int, dim_out: int, slope: float, index: int = 1):
    super().__init__()
    self.index = index
    self.dim_in = dim_in
    self.dim_out = dim_out
    self.slope = slope

    # Branch 1 transforms P_i, branch 2 transforms P_{i+1}.
    self.weight1 = nn.Parameter(torch.tensor(1., dtype=T.DTYPE))
    self.bias1 = nn.Parameter(torch.tensor(0., dtype=T.DTYPE))
    self.weight2 = nn.Parameter(torch.tensor(1., dtype=T.DTYPE))
    self.bias2 = nn.Parameter(torch.tensor(0., dtype=T.DTYPE))

  def branches(
    self,
    p_in: torch.Tensor,
    p_out: torch.Tensor,
    masked_in: Optional[torch.Tensor] = None,
    masked_out: Optional[torch.Tensor] = None,
  ) -> Tuple[torch.Tensor, torch.Tensor]:
    """Queries come from the (masked) taps, keys and values from the clean ones."""
    if p_in.shape[-1] != self.dim_in or p_out.shape[-1] != self.dim_out:
      raise DimensionError(
        f'McsaeStage {self.index}: expected pooled vectors of {self.dim_in} and {self.dim_out}, '
        f'got {tuple(p_in.shape)} and {tuple(p_out.shape)}'
      )
    masked_in = p_in if masked_in is None else masked_in
    masked_out = p_out if masked_out is None else masked_out

    q1 = transform_layer(masked_in, self.weight1, self.bias1, self.slope)
    q2 = transform_layer(masked_out, self.weight2, self.bias2, self.slope)
    branch1 = cross_branch(q1, p_out)  # B×d_i×1
    branch2 = cross_branch(q2, p_in)  # B×d_{i+1}×1
    return branch1, branch2

  def forward(self, p_in, p_out, masked_in=None, masked_out=None):
    branch1, branch2 = self.branches(p_in, p_out, masked_in, masked_out)
    # Unit columns make every segment a rank-one map of spectral norm 1, so
    # |Z| <= |P1| however long the chain.
    branch1 = F.normalize(branch1, dim=-2, eps=1e-12)
    branch2 = F.normalize(branch2, dim=-2, eps=1e-12)
    z =T.matmul(branch1, branch2.transpose(-2, -1))
    return z, (branch1, branch2)


def build_attention_matrix(p1: torch.Tensor, segments: Sequence[torch.Tensor]) -> torch.Tensor:
  """Z = P1 z1 z2 … z_n, B×d_1 times a chain of B×d_i×d_{i+1} → B×d_{n+1}."""
  Z = p1.unsqueeze(-2)
  for i, z in enumerate(segments, start=1):
    if Z.shape[-1] != z.shape[-2]:
      raise DimensionError(
        f'build_attention_matrix: link {i} expects {z.shape[-2]} rows, '
        f'but the chain so far is {tuple(Z.shape)}'
      )
    Z = T.matmul(Z, z)
  return Z.squeeze(-2)


def concat_embedding(Z: torch.Tensor, p_last: torch.Tensor) -> torch.Tensor:
  """C = [Z ‖ P_last] along the feature axis."""
  if Z.shape != p_last.shape:
    raise DimensionError(f'concat_embedding: Z {tuple(Z.shape)} does not match P {tuple(p_last.shape)}')
  return torch.cat([Z, p_last], dim=-1)


class Mcsae(nn.Module):
  """All stages of the cross-stage attention, one RandomMask per pooled tap.

  Each tap is masked once per forward pass; the same masked vector feeds the
  two stages that touch it.
  """

  def __init__(self, dims: Sequence[int], slope: float, masks: Sequence[RandomMask]):
    super().__init__()
    if len(masks) != len(dims):
      raise ValueError(f'Mcsae: need one mask per pooled tap, got {len(masks)} for {len(dims)}')
    self.masks = nn.ModuleList(masks)
    self.stages = nn.ModuleList([
      McsaeStage(dims[i], dims[i + 1], slope, index=i + 1)
      for i in range(len(dims) - 1)
    ])

  def forward(self, P: Sequence[torch.Tensor]):
    masked = [mask(p) for mask, p in zip(self.masks, P)]

    segments: List[torch.Tensor] = []
    branches = []
    for i, stage in enumerate(self.stages):
      z, pair = stage(P[i], P[i + 1], masked[i], masked[i + 1])
      segments.append(z)
      branches.append(pair)

    Z = build_attention_matrix(P[0], segments)
    C = concat_embedding(Z, P[-1])
    return C, Z, segments, branches
