import numpy as np
import torch

from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Tuple, Union
from tqdm import tqdm
from numpy.typing import NDArray
from .. import tensor as T
from ..errors import DimensionError, ParseError, ScoringError
from ..typings import PathLike, ScoreSet, Trial, TrialSet

LABELS = {'1': True, '0': False}

Embedding = Union[NDArray, torch.Tensor]


def utterance_id(path: PathLike, root: Optional[PathLike] = None) -> str:
  """Relative path without its suffix, e.g. `id10270/5r0dWxy17C8/00001`."""
  path = Path(path)
  if root is not None:
    path = path.relative_to(root)
  return path.with_suffix('').as_posix()


def parse_trials(lines: Union[str, Iterable[str]]) -> TrialSet:
  """`label enroll test` per line, label 1 (target) or 0 (nontarget)."""
  if isinstance(lines, str):
    lines = lines.splitlines()

  trials = []
  for lineno, line in enumerate(lines, start=1):
    fields = line.split()
    if not fields:
      continue
    if len(fields) != 3:
      raise ParseError(f'expected `label enroll test`, got {line.strip()!r}', lineno)
    label, enroll, test = fields
    if label not in LABELS:
      raise ParseError(f'unknown label {label!r} (expected 1 or 0)', lineno)
    trials.append(Trial(
      label=LABELS[label],
      enroll=utterance_id(enroll),
      test=utterance_id(test),
      lineno=lineno,
    ))
  return TrialSet(trials)


def load_trials(path: PathLike) -> TrialSet:
  with open(path, 'r') as f:
    return parse_trials(f.read())


def cosine_score(a: Embedding, b: Embedding) -> float:
  a = np.asarray(a, dtype=np.float64).reshape(-1)
  b = np.asarray(b, dtype=np.float64).reshape(-1)
  if a.shape != b.shape:
    raise DimensionError(f'cosine_score: embeddings of length {a.size} and {b.size}')
  norm_a = np.linalg.norm(a)
  norm_b = np.linalg.norm(b)
  if norm_a == 0 or norm_b == 0:
    raise ScoringError('cosine_score: zero-norm embedding')
  return float(np.clip(a @ b / (norm_a * norm_b), -1., 1.))


def score_trials(
  trials: TrialSet,
  store: Mapping[str, Embedding],
  progress: bool = True,
) -> Tuple[ScoreSet, List[Tuple[Trial, float]]]:
  records = []
  for trial in tqdm(trials, total=len(trials), desc='Scoring trials', disable=not progress):
    for utt in (trial.enroll, trial.test):
      if utt not in store:
        raise ScoringError(f'line {trial.lineno}: no embedding stored for {utt!r}')
    try:
      score = cosine_score(store[trial.enroll], store[trial.test])
    except ScoringError as e:
      raise ScoringError(f'line {trial.lineno} ({trial.enroll} vs {trial.test}): {e}') from e
    records.append((trial, score))

  scores = ScoreSet(
    scores=np.array([s for _, s in records], dtype=np.float64),
    labels=np.array([t.label for t, _ in records], dtype=bool),
  )
  return scores, records


def save_scores(path: PathLike, records: Iterable[Tuple[Trial, float]]):
  with open(path, 'w') as f:
    for trial, score in records:
      f.write(f'{int(trial.label)} {score:.17g} {trial.enroll} {trial.test}\n')


def load_scores(path: PathLike) -> ScoreSet:
  scores = []
  labels = []
  with open(path, 'r') as f:
    for lineno, line in enumerate(f, start=1):
      fields = line.split()
      if not fields:
        continue
      if len(fields) != 4:
        raise ParseError(f'{path}: expected `label score enroll test`, got {line.strip()!r}', lineno)
      if fields[0] not in LABELS:
        raise ParseError(f'{path}: unknown label {fields[0]!r} (expected 1 or 0)', lineno)
      try:
        score = float(fields[1])
      except ValueError:
        raise ParseError(f'{path}: score {fields[1]!r} is not a number', lineno) from None
      labels.append(LABELS[fields[0]])
      scores.append(score)
  return ScoreSet(scores=np.array(scores, dtype=np.float64), labels=np.array(labels, dtype=bool))


def save_embeddings(path: PathLike, store: Mapping[str, Embedding]):
  T.save_tensors(path, {k: torch.as_tensor(v, dtype=T.DTYPE) for k, v in store.items()})


def load_embeddings(path: PathLike) -> Dict[str, torch.Tensor]:
  return T.load_tensors(path)
