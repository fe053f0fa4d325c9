import torch
import torch.nn as nn

from typing import List, Sequence, Tuple
from .. import tensor as T
from ..errors import DimensionError


class ConvBN(nn.Module):
  """k×k convolution (no bias) followed by batch normalisation."""

  def __init__(self, in_channels: int, out_channels: int, kernel_size: int, stride: int = 1):
    super().__init__()
    self.stride = stride
    self.pad = kernel_size // 2
    self.weight = nn.Parameter(torch.empty(out_channels, in_channels, kernel_size, kernel_size, dtype=T.DTYPE))
    self.gamma = nn.Parameter(torch.ones(out_channels, dtype=T.DTYPE))
    self.beta = nn.Parameter(torch.zeros(out_channels, dtype=T.DTYPE))
    self.register_buffer('running_mean', torch.zeros(out_channels, dtype=T.DTYPE))
    self.register_buffer('running_var', torch.ones(out_channels, dtype=T.DTYPE))

  def forward(self, x: torch.Tensor) -> torch.Tensor:
    x = T.conv2d(x, self.weight, stride=self.stride, pad=self.pad)
    return T.batch_norm2d(x, self.gamma, self.beta, self.running_mean, self.running_var, self.training)


class Projection(nn.Module):
  """1×1 strided convolution with bias, used as a downsampling shortcut."""

  def __init__(self, in_channels: int, out_channels: int, stride: int):
    super().__init__()
    self.stride = stride
    self.weight = nn.Parameter(torch.empty(out_channels, in_channels, 1, 1, dtype=T.DTYPE))
    self.bias = nn.Parameter(torch.zeros(out_channels, dtype=T.DTYPE))

  def forward(self, x: torch.Tensor) -> torch.Tensor:
    return T.conv2d(x, self.weight, self.bias, stride=self.stride, pad=0)


class ResidualBlock(nn.Module):
  def __init__(self, in_channels: int, out_channels: int, stride: int, slope: float):
    super().__init__()
    self.slope = slope
    self.conv1 = ConvBN(in_channels, out_channels, 3, stride)
    self.conv2 = ConvBN(out_channels, out_channels, 3, 1)
    if stride != 1 or in_channels != out_channels:
      self.shortcut = Projection(in_channels, out_channels, stride)
    else:
      self.shortcut = None

  def forward(self, x: torch.Tensor) -> torch.Tensor:
    identity = x if self.shortcut is None else self.shortcut(x)
    y = T.leaky_relu(self.conv1(x), self.slope)
    y = self.conv2(y)
    return T.leaky_relu(y + identity, self.slope)


class ResNetStage(nn.Module):
  def __init__(self, in_channels: int, out_channels: int, num_blocks: int, stride: int, slope: float):
    super().__init__()
    self.blocks = nn.ModuleList([
      ResidualBlock(in_channels if i == 0 else out_channels, out_channels, stride if i == 0 else 1, slope)
      for i in range(num_blocks)
    ])

  def forward(self, x: torch.Tensor) -> torch.Tensor:
    for block in self.blocks:
      x = block(x)
    return x


class ResNetBackbone(nn.Module):
  """Stem plus residual stages; every stage after the first halves both axes.

  Input is B×D×L log-mel features. The pooled taps are P1 (stem) and one per
  residual stage, so a 4-stage backbone yields P1..P5.
  """

  def __init__(
    self,
    widths: Sequence[int],
    blocks: Sequence[int],
    slope: float,
    stem_kernel: int = 7,
  ):
    super().__init__()
    if len(widths) != len(blocks):
      raise ValueError(f'ResNetBackbone: widths {list(widths)} and blocks {list(blocks)} differ in length')
    self.widths = list(widths)
    self.slope = slope
    self.stem = ConvBN(1, widths[0], stem_kernel, 1)

    stages = []
    in_channels = widths[0]
    for i, (width, num_blocks) in enumerate(zip(widths, blocks)):
      stages.append(ResNetStage(in_channels, width, num_blocks, 1 if i == 0 else 2, slope))
      in_channels = width
    self.stages = nn.ModuleList(stages)

  @property
  def tap_dims(self) -> List[int]:
    return [self.widths[0]] + self.widths

  def forward(self, x: torch.Tensor) -> Tuple[List[torch.Tensor], List[torch.Tensor]]:
    """Returns (feature maps F0..F_n, pooled taps P1..P_{n+1})."""
    if x.dim() != 3:
      raise DimensionError(f'ResNetBackbone: expected B×D×L features, got {tuple(x.shape)}')
    x = x.unsqueeze(1)

    x = T.leaky_relu(self.stem(x), self.slope)
    feature_maps = [x]
    for stage in self.stages:
      x = stage(x)
      feature_maps.append(x)

    pooled = [T.global_avg_pool(f) for f in feature_maps]
    return feature_maps, pooled


def output_extent(extent: int, num_stages: int) -> int:
  """Size of one spatial axis after every downsampling stage."""
  return extent // 2 ** (num_stages - 1)


def count_parameters(module: nn.Module, only_trainable: bool = True) -> int:
  return sum(p.numel() for p in module.parameters() if p.requires_grad or not only_trainable)
