import numpy as np
import torch

from abc import ABC, abstractmethod
from typing import List, Literal
from numpy.typing import NDArray
from torch.utils.data import Dataset
from ...augment import spec_augment
from ...config import Config
from ...errors import DimensionError
from ...spectrogram import fix_length


class SpeakerDatasetBase(Dataset, ABC):
  """Labelled utterances cut to the model length.

  Training items get a random crop and SpecAugment; the random stream of each
  item depends only on (seed, epoch, index), so batches do not depend on
  worker scheduling.
  """

  def __init__(
    self,
    cfg: Config,
    split: Literal['train', 'eval'],
  ):
    if split not in ['train', 'eval']:
      raise ValueError(f'Unknown dataset split: {split}')

    self.cfg = cfg
    self.split = split
    self.num_frames = cfg.model.num_frames
    self.epoch = 0

  @abstractmethod
  def load_features(self, idx: int) -> NDArray:
    pass

  @property
  @abstractmethod
  def utterance_ids(self) -> List[str]:
    pass

  @property
  @abstractmethod
  def labels(self) -> NDArray[np.int64]:
    pass

  @property
  def num_speakers(self) -> int:
    return int(self.labels.max()) + 1 if len(self) else 0

  def set_epoch(self, epoch: int):
    self.epoch = epoch

  def __len__(self):
    return len(self.utterance_ids)

  def __getitem__(self, idx):
    utt = self.utterance_ids[idx]
    values = self.load_features(idx)
    if values.shape[0] != self.cfg.model.num_mels:
      raise DimensionError(f'{utt}: {values.shape[0]} mel bins, but model.num_mels={self.cfg.model.num_mels}')

    if self.split == 'train':
      rng = np.random.default_rng([self.cfg.seed, self.epoch, idx])
      values = fix_length(values, self.num_frames, rng)
      if self.cfg.specaug.enabled:
        values = spec_augment(values, self.cfg.specaug, rng)
    else:
      values = fix_length(values, self.num_frames)

    return dict(
      utterance_id=utt,
      features=torch.from_numpy(np.ascontiguousarray(values, dtype=np.float64)),
      label=torch.tensor(int(self.labels[idx]), dtype=torch.long),
    )
