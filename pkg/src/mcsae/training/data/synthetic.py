import numpy as np

from pathlib import Path
from typing import List, Tuple
from dataclasses import dataclass
from numpy.typing import NDArray
from .datasetbase import SpeakerDatasetBase
from ...config import Config
from ...errors import ConfigError
from ...spectrogram import FEATURE_SUFFIX, save_features
from ...typings import FeatureMatrix


@dataclass
class SynthSpec:
  num_speakers: int = 8
  num_utterances: int = 20  # per speaker, training
  num_heldout: int = 5  # per speaker, held out
  num_mels: int = 16
  num_frames: int = 64
  template_scale: float = 2.0
  noise_level: float = 0.5
  seed: int = 1234

  @classmethod
  def from_config(cls, cfg: Config) -> 'SynthSpec':
    return cls(
      num_speakers=cfg.model.num_speakers,
      num_utterances=cfg.data.num_utterances,
      num_heldout=cfg.data.num_heldout,
      num_mels=cfg.model.num_mels,
      num_frames=cfg.model.num_frames,
      template_scale=cfg.data.template_scale,
      noise_level=cfg.data.noise_level,
      seed=cfg.seed,
    )


@dataclass
class SyntheticCorpus:
  features: NDArray[np.float64]  # N×D×L
  labels: NDArray[np.int64]
  heldout_features: NDArray[np.float64]
  heldout_labels: NDArray[np.int64]
  templates: NDArray[np.float64]  # speakers×D


def gen_synthetic(spec: SynthSpec) -> SyntheticCorpus:
  """Every speaker owns a random spectral template; an utterance is its
  template repeated over time plus i.i.d. Gaussian noise."""
  if spec.num_speakers < 2:
    raise ConfigError(f'Synthetic corpus needs at least 2 speakers, got {spec.num_speakers}')
  if spec.num_utterances < 1:
    raise ConfigError(f'Synthetic corpus needs at least 1 utterance per speaker, got {spec.num_utterances}')

  rng = np.random.default_rng(spec.seed)
  D, L = spec.num_mels, spec.num_frames
  templates = rng.standard_normal((spec.num_speakers, D)) * spec.template_scale

  def utterances(count: int) -> Tuple[NDArray, NDArray]:
    labels = np.repeat(np.arange(spec.num_speakers), count)
    noise = rng.standard_normal((labels.size, D, L)) * spec.noise_level
    return templates[labels][:, :, None] + noise, labels

  features, labels = utterances(spec.num_utterances)
  heldout_features, heldout_labels = utterances(spec.num_heldout)
  return SyntheticCorpus(
    features=features,
    labels=labels.astype(np.int64),
    heldout_features=heldout_features,
    heldout_labels=heldout_labels.astype(np.int64),
    templates=templates,
  )


def synthetic_ids(labels: NDArray) -> List[str]:
  ids = []
  counts = {}
  for label in labels:
    n = counts.get(int(label), 0)
    counts[int(label)] = n + 1
    ids.append(f'spk{int(label):03d}/utt{n:03d}')
  return ids


def export_heldout(corpus: SyntheticCorpus, out_dir: Path) -> Tuple[List[Path], Path]:
  """Writes held-out utterances as feature files plus an all-pairs trial list."""
  out_dir.mkdir(parents=True, exist_ok=True)
  ids = synthetic_ids(corpus.heldout_labels)

  paths = []
  for utt, values in zip(ids, corpus.heldout_features):
    path = out_dir / f'{utt}{FEATURE_SUFFIX}'
    path.parent.mkdir(parents=True, exist_ok=True)
    save_features(path, FeatureMatrix(values=values))
    paths.append(path)

  trials_path = out_dir / 'trials.txt'
  with open(trials_path, 'w') as f:
    for i in range(len(ids)):
      for j in range(i + 1, len(ids)):
        label = int(corpus.heldout_labels[i] == corpus.heldout_labels[j])
        f.write(f'{label} {ids[i]}{FEATURE_SUFFIX} {ids[j]}{FEATURE_SUFFIX}\n')
  return paths, trials_path


class SyntheticDataset(SpeakerDatasetBase):

  def __init__(self, cfg: Config, features: NDArray, labels: NDArray, split='train'):
    super().__init__(cfg, split)
    self._features = features
    self._labels = np.asarray(labels, dtype=np.int64)
    self._ids = synthetic_ids(self._labels)

  def load_features(self, idx: int) -> NDArray:
    return self._features[idx]

  @property
  def utterance_ids(self) -> List[str]:
    return self._ids

  @property
  def labels(self) -> NDArray[np.int64]:
    return self._labels
