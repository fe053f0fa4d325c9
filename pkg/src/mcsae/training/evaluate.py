import numpy as np
import torch

from typing import Dict, List, Sequence
from numpy.typing import NDArray
from tqdm import tqdm
from ..evaluation import evaluate_scores, score_trials
from ..models import SpeakerNet, extract_embedding
from ..spectrogram import fix_length
from ..typings import Trial, TrialSet, VerificationResult


def embed_utterances(
  model: SpeakerNet,
  features: Sequence[NDArray],
  batch_size: int = 32,
  progress: bool = False,
) -> NDArray[np.float64]:
  """Eval-mode embeddings of D×L utterances, centre-cropped or padded to the model length."""
  num_frames = model.cfg.num_frames
  fixed = [fix_length(np.asarray(f, dtype=np.float64), num_frames) for f in features]

  embeddings = []
  batches = range(0, len(fixed), batch_size)
  for start in tqdm(batches, desc='Extracting embeddings', disable=not progress):
    batch = torch.from_numpy(np.stack(fixed[start:start + batch_size]))
    embeddings.append(extract_embedding(model, batch).cpu().numpy())
  return np.concatenate(embeddings, axis=0)


def all_pairs_trials(ids: Sequence[str], labels: Sequence[int]) -> TrialSet:
  trials: List[Trial] = []
  for i in range(len(ids)):
    for j in range(i + 1, len(ids)):
      trials.append(Trial(label=bool(labels[i] == labels[j]), enroll=ids[i], test=ids[j], lineno=len(trials) + 1))
  return TrialSet(trials)


def evaluate(
  model: SpeakerNet,
  features: Sequence[NDArray],
  labels: Sequence[int],
) -> VerificationResult:
  """EER and minDCF over every pair of the given held-out utterances."""
  print('=> Evaluating...')
  embeddings = embed_utterances(model, features)
  ids = [f'utt{i:05d}' for i in range(len(embeddings))]
  store: Dict[str, NDArray] = dict(zip(ids, embeddings))
  scores, _ = score_trials(all_pairs_trials(ids, labels), store, progress=False)
  return evaluate_scores(scores)
