import numpy as np
import torch

from os import PathLike
from typing import List, Optional, Tuple, Union
from dataclasses import dataclass, field, replace
from numpy.typing import NDArray

PathLike = Union[str, PathLike]


@dataclass
class FeatureMatrix:
  """D×L log-mel energies of one utterance."""
  values: NDArray[np.float64]
  sample_rate: int = 16000
  frame_len_ms: float = 25.
  frame_shift_ms: float = 10.

  @property
  def bins(self) -> int:
    return self.values.shape[0]

  @property
  def frames(self) -> int:
    return self.values.shape[1]

  def with_values(self, values: NDArray) -> 'FeatureMatrix':
    return replace(self, values=values)


@dataclass
class StageOutputs:
  """Every intermediate of one forward pass; leading axis is the batch axis.

  P: pooled taps P1..P5, each B×c.
  feature_maps: F0..F4, each B×c×h×w.
  z: segment matrices z1..z4, each B×d_i×d_{i+1} (MCSAE mode only).
  branches: (branch1, branch2) columns per stage, B×d_i×1 and B×d_{i+1}×1.
  Z: attention matrix, B×c_last. C: concatenation [Z ‖ P5], B×2·c_last.
  encoding: the pre-head vector of the active mode.
  """
  P: List[torch.Tensor]
  feature_maps: List[torch.Tensor]
  encoding: torch.Tensor
  embedding: torch.Tensor
  logits: Optional[torch.Tensor] = None
  z: Optional[List[torch.Tensor]] = None
  branches: Optional[List[Tuple[torch.Tensor, torch.Tensor]]] = None
  Z: Optional[torch.Tensor] = None
  C: Optional[torch.Tensor] = None


@dataclass
class Trial:
  label: bool
  enroll: str
  test: str
  lineno: int = 0


@dataclass
class TrialSet:
  trials: List[Trial] = field(default_factory=list)

  def __len__(self):
    return len(self.trials)

  def __iter__(self):
    return iter(self.trials)


@dataclass
class ScoreSet:
  scores: NDArray[np.float64]
  labels: NDArray[np.bool_]

  @property
  def target_scores(self) -> NDArray[np.float64]:
    return self.scores[self.labels]

  @property
  def nontarget_scores(self) -> NDArray[np.float64]:
    return self.scores[~self.labels]


@dataclass
class EpochRecord:
  epoch: int
  lr: float
  loss: float
  accuracy: float


@dataclass
class TrainingReport:
  epochs: List[EpochRecord] = field(default_factory=list)
  checkpoint: Optional[str] = None
  heldout: Optional['VerificationResult'] = None

  def to_text(self) -> str:
    return ''.join(
      f'{r.epoch} {r.lr:.17g} {r.loss:.17g} {r.accuracy:.17g}\n'
      for r in self.epochs
    )

  @property
  def final_loss(self) -> float:
    return self.epochs[-1].loss

  @property
  def final_accuracy(self) -> float:
    return self.epochs[-1].accuracy


@dataclass
class VerificationResult:
  eer: float
  eer_threshold: float
  min_dcf: float
  min_dcf_threshold: float
  num_trials: int = 0

  def to_text(self) -> str:
    return (
      f'eer_percent {100 * self.eer:.2f}\n'
      f'min_dcf {self.min_dcf:.4f}\n'
      f'eer_threshold {self.eer_threshold:.17g}\n'
      f'min_dcf_threshold {self.min_dcf_threshold:.17g}\n'
      f'num_trials {self.num_trials}\n'
    )
