import torch

from pathlib import Path
from typing import Dict, List, Optional
from tqdm import tqdm
from omegaconf import DictConfig
from .evaluation import save_embeddings, utterance_id
from .errors import InputError
from .helpers import find_files, require_files
from .models import extract_embedding, load_model
from .spectrogram import FEATURE_SUFFIX, extract_features, fix_length, load_features
from .utils import mkpath
from .typings import PathLike

WAV_SUFFIXES = ('.wav',)


def extract_feature_dir(
  wav_dir: PathLike,
  out_dir: PathLike,
  cfg: DictConfig,
  jobs: int = 1,
) -> List[Path]:
  """Converts every WAV under `wav_dir` into a normalised log-mel feature file.

  Parameters
  ----------
  wav_dir : PathLike
      Root of the audio tree; its layout is mirrored under `out_dir`.
  out_dir : PathLike
      Directory for the `.mcf` feature files. Existing files are kept.
  cfg : DictConfig
      Resolved config; `model.num_mels` and the `data.*` frontend keys are used.
  jobs : int, optional
      Number of worker processes. Default is 1.

  Returns
  -------
  List[Path]
      Feature paths in the sorted order of the WAV files.
  """
  wav_dir = mkpath(wav_dir)
  out_dir = mkpath(out_dir)
  wav_paths = find_files(wav_dir, WAV_SUFFIXES)
  if not wav_paths:
    raise InputError(f'No WAV files under {wav_dir}')

  return extract_features(
    wav_paths,
    wav_root=wav_dir,
    feature_dir=out_dir,
    num_mels=cfg.model.num_mels,
    sample_rate=cfg.data.sample_rate,
    win_ms=cfg.data.win_ms,
    hop_ms=cfg.data.hop_ms,
    n_fft=cfg.data.num_fft,
    cmvn_window=cfg.data.cmvn_window,
    jobs=jobs,
  )


def extract(
  checkpoint: PathLike,
  feature_dir: PathLike,
  out_path: Optional[PathLike] = None,
  device: str = 'cpu',
) -> Dict[str, torch.Tensor]:
  """Speaker embeddings of every feature file under `feature_dir`.

  Utterances are centre-cropped or wrap-padded to the model length. The result
  is keyed by utterance id (path relative to `feature_dir`, without suffix) and,
  given `out_path`, written as a tensor store.
  """
  checkpoint = mkpath(checkpoint)
  feature_dir = mkpath(feature_dir)
  require_files([checkpoint])
  paths = find_files(feature_dir, (FEATURE_SUFFIX,))
  if not paths:
    raise InputError(f'No {FEATURE_SUFFIX} files under {feature_dir}')

  model = load_model(checkpoint, device=device)
  print(f'=> Loaded a {model.cfg.mode} model from {checkpoint}')

  store = {}
  pbar = tqdm(paths, total=len(paths))
  for path in pbar:
    pbar.set_description(f'Embedding {path.name}')
    f = fix_length(load_features(path), model.cfg.num_frames)
    features = torch.from_numpy(f.values).to(device)
    store[utterance_id(path, feature_dir)] = extract_embedding(model, features).cpu()

  if out_path is not None:
    out_path = mkpath(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_embeddings(out_path, store)
    print(f'=> Saved {len(store)} embeddings to {out_path}')

  return store
