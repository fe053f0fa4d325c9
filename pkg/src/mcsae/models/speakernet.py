import torch
import torch.nn as nn

from typing import Optional, Union
from omegaconf import DictConfig
from .masking import RandomMask
from .mcsae import Mcsae
from .pooling import SapHead, frame_sequence
from .resnet import ResNetBackbone
from .utils import init_weights
from .. import tensor as T
from ..config import ENCODING_MODES, MaskConfig, ModelConfig
from ..errors import ConfigError, DimensionError
from ..typings import StageOutputs

ModelConfigLike = Union[ModelConfig, DictConfig]


def tap_dims(cfg: ModelConfigLike):
  """Widths of the pooled taps P1..P_{n+1}: the stem, then one per stage."""
  return [cfg.widths[0]] + list(cfg.widths)


def encoding_dim(cfg: ModelConfigLike) -> int:
  if cfg.mode in ('gap', 'sap'):
    return cfg.widths[-1]
  if cfg.mode == 'mla-sap':
    return sum(tap_dims(cfg))
  if cfg.mode == 'mcsae':
    return 2 * cfg.widths[-1]
  raise ConfigError(f'model.mode: unknown encoding mode {cfg.mode!r} (expected one of {ENCODING_MODES})')


class EmbeddingHead(nn.Module):
  """fc-1 → LReLU → fc-2 → LReLU → fc-3; the fc-3 output is the speaker embedding."""

  def __init__(self, in_dim: int, hidden_dim: int, embedding_dim: int, slope: float):
    super().__init__()
    self.slope = slope
    self.fc1 = nn.Linear(in_dim, hidden_dim)
    self.fc2 = nn.Linear(hidden_dim, hidden_dim)
    self.fc3 = nn.Linear(hidden_dim, embedding_dim)

  def forward(self, x: torch.Tensor) -> torch.Tensor:
    if x.shape[-1] != self.fc1.in_features:
      raise DimensionError(f'EmbeddingHead: expected width {self.fc1.in_features}, got {tuple(x.shape)}')
    x = T.leaky_relu(self.fc1(x), self.slope)
    x = T.leaky_relu(self.fc2(x), self.slope)
    return self.fc3(x)


class SpeakerNet(nn.Module):
  def __init__(
    self,
    cfg: ModelConfigLike,
    mask_cfg: Optional[MaskConfig] = None,
    seed: int = 0,
  ):
    super().__init__()
    mask_cfg = mask_cfg or MaskConfig()
    if cfg.mode not in ENCODING_MODES:
      raise ConfigError(f'model.mode: unknown encoding mode {cfg.mode!r} (expected one of {ENCODING_MODES})')
    factor = 2 ** (len(cfg.widths) - 1)
    if cfg.num_mels % factor or cfg.num_frames % factor:
      raise ConfigError(
        f'model.num_mels={cfg.num_mels} and model.num_frames={cfg.num_frames} must be divisible by {factor}'
      )

    self.cfg = cfg
    self.mode = cfg.mode
    self.slope = cfg.slope

    self.backbone = ResNetBackbone(cfg.widths, cfg.blocks, cfg.slope, cfg.stem_kernel)
    dims = tap_dims(cfg)

    self.sap = None
    self.mcsae = None
    if self.mode == 'sap':
      self.sap = nn.ModuleList([SapHead(dims[-1])])
    elif self.mode == 'mla-sap':
      self.sap = nn.ModuleList([SapHead(d) for d in dims])
    elif self.mode == 'mcsae':
      if len(cfg.widths) != 4:
        raise ConfigError(f'model.mode=mcsae needs exactly 4 stages, got {len(cfg.widths)}')
      masks = [
        RandomMask(mask_cfg.initial_factor, seed=seed + k, enabled=mask_cfg.enabled)
        for k in range(len(dims))
      ]
      self.mcsae = Mcsae(dims, cfg.slope, masks)

    self.head = EmbeddingHead(encoding_dim(cfg), cfg.head_dim, cfg.embedding_dim, cfg.slope)
    self.classifier = nn.Linear(cfg.embedding_dim, cfg.num_speakers)

    self.to(T.DTYPE)
    init_weights(self, cfg.slope)

  def encode(self, feature_maps, P) -> dict:
    if self.mode == 'gap':
      return dict(encoding=P[-1])
    if self.mode == 'sap':
      return dict(encoding=self.sap[0](frame_sequence(feature_maps[-1])))
    if self.mode == 'mla-sap':
      pooled = [head(frame_sequence(f)) for head, f in zip(self.sap, feature_maps)]
      return dict(encoding=torch.cat(pooled, dim=-1))

    C, Z, z, branches = self.mcsae(P)
    return dict(encoding=C, C=C, Z=Z, z=z, branches=branches)

  def embedding_head(self, encoding: torch.Tensor) -> torch.Tensor:
    return self.head(encoding)

  def classify(self, embedding: torch.Tensor) -> torch.Tensor:
    return self.classifier(embedding)

  def forward(self, x: torch.Tensor) -> StageOutputs:
    # x: B×D×L log-mel features
    if x.dim() != 3 or x.shape[1] != self.cfg.num_mels:
      raise DimensionError(f'SpeakerNet: expected B×{self.cfg.num_mels}×L features, got {tuple(x.shape)}')

    feature_maps, P = self.backbone(x)
    encoded = self.encode(feature_maps, P)
    embedding = self.embedding_head(encoded['encoding'])
    logits = self.classify(embedding)

    return StageOutputs(
      P=P,
      feature_maps=feature_maps,
      embedding=embedding,
      logits=logits,
      **encoded,
    )


@torch.no_grad()
def extract_embedding(model: SpeakerNet, features: torch.Tensor) -> torch.Tensor:
  """Speaker embedding of one D×L utterance (or a B×D×L batch) in eval mode."""
  features = torch.as_tensor(features, dtype=T.DTYPE)
  unbatched = features.dim() == 2
  if unbatched:
    features = features.unsqueeze(0)
  if features.dim() != 3 or features.shape[1] != model.cfg.num_mels:
    raise DimensionError(
      f'extract_embedding: features {tuple(features.shape)} do not match model.num_mels={model.cfg.num_mels}'
    )

  was_training = model.training
  model.eval()
  try:
    feature_maps, P = model.backbone(features)
    embedding = model.embedding_head(model.encode(feature_maps, P)['encoding'])
  finally:
    model.train(was_training)
  return embedding.squeeze(0) if unbatched else embedding
