import torch

from typing import Optional
from lightning import LightningDataModule
from torch.utils.data import DataLoader
from .datasetbase import SpeakerDatasetBase
from .featuredir import FeatureDirDataset
from .synthetic import SynthSpec, SyntheticCorpus, SyntheticDataset, gen_synthetic
from ...config import Config
from ...errors import ConfigError


class SpeakerDataModule(LightningDataModule):
  dataset_train: SpeakerDatasetBase
  corpus: Optional[SyntheticCorpus] = None

  def __init__(self, cfg: Config):
    super().__init__()
    self.cfg = cfg

  def setup(self, stage: str):
    if stage != 'fit':
      return

    if self.cfg.data.source == 'synthetic':
      self.corpus = gen_synthetic(SynthSpec.from_config(self.cfg))
      self.dataset_train = SyntheticDataset(self.cfg, self.corpus.features, self.corpus.labels, split='train')
    elif self.cfg.data.source == 'features':
      self.dataset_train = FeatureDirDataset(self.cfg, split='train')
    else:
      raise ConfigError(f'data.source: unknown source {self.cfg.data.source!r}')

    num_speakers = self.dataset_train.num_speakers
    if num_speakers != self.cfg.model.num_speakers:
      raise ConfigError(
        f'model.num_speakers={self.cfg.model.num_speakers}, but the training data has {num_speakers} speakers'
      )

  def set_epoch(self, epoch: int):
    self.dataset_train.set_epoch(epoch)

  def train_dataloader(self):
    batch_size = self.cfg.data.batch_size
    return DataLoader(
      self.dataset_train,
      batch_size=batch_size,
      shuffle=True,
      generator=torch.Generator().manual_seed(self.cfg.seed),
      num_workers=self.cfg.data.num_workers,
      # Batch norm cannot train on a lone trailing item.
      drop_last=len(self.dataset_train) % batch_size == 1,
    )
