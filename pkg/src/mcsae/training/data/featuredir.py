import numpy as np

from pathlib import Path
from typing import List, Tuple
from numpy.typing import NDArray
from .datasetbase import SpeakerDatasetBase
from ...config import Config
from ...errors import InputError
from ...evaluation.trials import utterance_id
from ...spectrogram import FEATURE_SUFFIX, load_features


def scan_feature_dir(feature_dir: Path) -> Tuple[List[Path], List[str]]:
  """Feature files under `feature_dir` and the speaker (first path component) of each."""
  feature_dir = Path(feature_dir)
  if not feature_dir.is_dir():
    raise FileNotFoundError(f'Could not find feature directory {feature_dir}')
  paths = sorted(feature_dir.rglob(f'*{FEATURE_SUFFIX}'))
  if not paths:
    raise InputError(f'No {FEATURE_SUFFIX} files under {feature_dir}')

  speakers = []
  for path in paths:
    parts = path.relative_to(feature_dir).parts
    if len(parts) < 2:
      raise InputError(f'{path}: expected <speaker>/.../<utterance>{FEATURE_SUFFIX} under {feature_dir}')
    speakers.append(parts[0])
  return paths, speakers


class FeatureDirDataset(SpeakerDatasetBase):

  def __init__(self, cfg: Config, split='train'):
    super().__init__(cfg, split)
    self.feature_dir = Path(cfg.data.feature_dir).expanduser()
    self.paths, speakers = scan_feature_dir(self.feature_dir)

    self.speakers = sorted(set(speakers))
    index = {s: i for i, s in enumerate(self.speakers)}
    self._labels = np.array([index[s] for s in speakers], dtype=np.int64)
    self._ids = [utterance_id(p, self.feature_dir) for p in self.paths]

  def load_features(self, idx: int) -> NDArray:
    return load_features(self.paths[idx]).values

  @property
  def utterance_ids(self) -> List[str]:
    return self._ids

  @property
  def labels(self) -> NDArray[np.int64]:
    return self._labels
