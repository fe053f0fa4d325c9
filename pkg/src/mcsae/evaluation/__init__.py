from .metrics import compute_eer, compute_min_dcf, compute_sweep, evaluate_scores, write_metrics, write_sweep
from .trials import (
  cosine_score,
  load_embeddings,
  load_scores,
  load_trials,
  parse_trials,
  save_embeddings,
  save_scores,
  score_trials,
  utterance_id,
)
