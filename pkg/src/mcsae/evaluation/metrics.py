import numpy as np

from typing import Tuple
from pathlib import Path
from numpy.typing import NDArray
from ..errors import ScoringError
from ..typings import PathLike, ScoreSet, VerificationResult

P_TARGET = 0.01
C_MISS = 1.
C_FA = 1.


def _sorted_classes(s: ScoreSet) -> Tuple[NDArray, NDArray]:
  target = np.sort(np.asarray(s.target_scores, dtype=np.float64))
  nontarget = np.sort(np.asarray(s.nontarget_scores, dtype=np.float64))
  if target.size == 0 or nontarget.size == 0:
    raise ScoringError(
      f'Need at least one target and one nontarget trial, got {target.size} and {nontarget.size}'
    )
  return target, nontarget


def compute_sweep(s: ScoreSet) -> Tuple[NDArray, NDArray, NDArray]:
  """(thresholds, FAR, FRR) at every distinct score plus +inf.

  A trial is accepted when its score is ≥ the threshold, so FAR(t) is the
  fraction of nontargets ≥ t and FRR(t) the fraction of targets < t.
  """
  target, nontarget = _sorted_classes(s)
  thresholds = np.append(np.unique(np.concatenate([target, nontarget])), np.inf)
  far = (nontarget.size - np.searchsorted(nontarget, thresholds, side='left')) / nontarget.size
  frr = np.searchsorted(target, thresholds, side='left') / target.size
  return thresholds, far, frr


def compute_eer(s: ScoreSet) -> Tuple[float, float]:
  thresholds, far, frr = compute_sweep(s)
  # argmin returns the first, i.e. lowest, threshold on ties.
  i = int(np.argmin(np.abs(far - frr)))
  return float((far[i] + frr[i]) / 2), float(thresholds[i])


def detection_cost(
  far: NDArray,
  frr: NDArray,
  p_target: float = P_TARGET,
  c_miss: float = C_MISS,
  c_fa: float = C_FA,
) -> NDArray:
  """Normalised DCF; 1 is the cost of always rejecting (or always accepting)."""
  cost = c_miss * frr * p_target + c_fa * far * (1 - p_target)
  return cost / min(c_miss * p_target, c_fa * (1 - p_target))


def compute_min_dcf(
  s: ScoreSet,
  p_target: float = P_TARGET,
  c_miss: float = C_MISS,
  c_fa: float = C_FA,
) -> Tuple[float, float]:
  if not 0. < p_target < 1.:
    raise ScoringError(f'p_target must lie in (0, 1), got {p_target}')
  thresholds, far, frr = compute_sweep(s)
  dcf = detection_cost(far, frr, p_target, c_miss, c_fa)
  i = int(np.argmin(dcf))
  return float(dcf[i]), float(thresholds[i])


def evaluate_scores(s: ScoreSet) -> VerificationResult:
  eer, eer_threshold = compute_eer(s)
  min_dcf, min_dcf_threshold = compute_min_dcf(s)
  return VerificationResult(
    eer=eer,
    eer_threshold=eer_threshold,
    min_dcf=min_dcf,
    min_dcf_threshold=min_dcf_threshold,
    num_trials=len(s.scores),
  )


def write_metrics(path: PathLike, result: VerificationResult):
  Path(path).write_text(result.to_text())


def write_sweep(path: PathLike, s: ScoreSet):
  """Raw DET points, one `threshold far frr` line per candidate threshold."""
  thresholds, far, frr = compute_sweep(s)
  with open(path, 'w') as f:
    for t, a, r in zip(thresholds, far, frr):
      f.write(f'{t:.17g} {a:.17g} {r:.17g}\n')
