import numpy as np

from typing import Union
from numpy.typing import NDArray
from omegaconf import DictConfig
from .config import SpecAugConfig
from .errors import ConfigError
from .typings import FeatureMatrix


def mask_band(values: NDArray, axis: int, start: int, width: int) -> NDArray:
  """Zeroes `width` consecutive rows (axis 0) or columns (axis 1) in place."""
  if width <= 0:
    return values
  index = [slice(None), slice(None)]
  index[axis] = slice(start, start + width)
  values[tuple(index)] = 0.
  return values


def spec_augment(
  f: Union[FeatureMatrix, NDArray],
  cfg: Union[SpecAugConfig, DictConfig],
  rng: np.random.Generator,
) -> Union[FeatureMatrix, NDArray]:
  """Frequency and time masking of a D×L feature matrix.

  mF bands of 0..F mel bins and mT spans of 0..T frames are set to zero; each
  width and offset is drawn from `rng`.
  """
  values = f.values if isinstance(f, FeatureMatrix) else f
  values = np.array(values, dtype=np.float64, copy=True)
  D, L = values.shape
  if cfg.F > D:
    raise ConfigError(f'specaug.F={cfg.F} exceeds the {D} mel bins of the input')
  if cfg.T > L:
    raise ConfigError(f'specaug.T={cfg.T} exceeds the {L} frames of the input')

  for _ in range(cfg.mF):
    width = int(rng.integers(0, cfg.F + 1))
    start = int(rng.integers(0, D - width + 1))
    mask_band(values, 0, start, width)

  for _ in range(cfg.mT):
    width = int(rng.integers(0, cfg.T + 1))
    start = int(rng.integers(0, L - width + 1))
    mask_band(values, 1, start, width)

  return f.with_values(values) if isinstance(f, FeatureMatrix) else values
