import struct
import librosa
import numpy as np

from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union
from tqdm import tqdm
from multiprocessing import Pool
from numpy.typing import NDArray
from .errors import InputError
from .typings import FeatureMatrix, PathLike

FEATURE_MAGIC = b'MCF1'
FEATURE_SUFFIX = '.mcf'
LOG_FLOOR = 1e-10
STD_FLOOR = 1e-8

Features = Union[FeatureMatrix, NDArray]


def mel_filterbank(sample_rate: int = 16000, n_fft: int = 512, num_mels: int = 64) -> NDArray[np.float64]:
  """num_mels × (n_fft/2 + 1) triangular filters on the HTK mel scale over [0, sr/2].

  Filters are not area-normalised, so each peaks at 1 and overlapping
  neighbours sum to at most 1.
  """
  fb = librosa.filters.mel(
    sr=sample_rate,
    n_fft=n_fft,
    n_mels=num_mels,
    fmin=0.,
    fmax=sample_rate / 2,
    htk=True,
    norm=None,
    dtype=np.float64,
  )
  return fb


def log_mel(
  samples: NDArray,
  sample_rate: int = 16000,
  num_mels: int = 64,
  win_ms: float = 25.,
  hop_ms: float = 10.,
  n_fft: int = 512,
) -> FeatureMatrix:
  if sample_rate < 8000:
    raise InputError(f'log_mel: sample rate must be at least 8 kHz, got {sample_rate}')
  samples = np.asarray(samples, dtype=np.float64)
  if samples.ndim != 1:
    raise InputError(f'log_mel: expected mono samples, got shape {samples.shape}')

  win = int(round(sample_rate * win_ms / 1000))
  hop = int(round(sample_rate * hop_ms / 1000))
  if len(samples) < win:
    raise InputError(f'log_mel: {len(samples)} samples are shorter than one {win}-sample window')
  n_fft = max(n_fft, 1 << (win - 1).bit_length())

  frames = librosa.util.frame(samples, frame_length=win, hop_length=hop)  # win × L
  window = librosa.filters.get_window('hann', win, fftbins=True)
  spectrum = np.abs(np.fft.rfft(frames * window[:, None], n=n_fft, axis=0)) ** 2

  energies = mel_filterbank(sample_rate, n_fft, num_mels) @ spectrum
  values = np.log(np.maximum(energies, LOG_FLOOR))
  return FeatureMatrix(values=values, sample_rate=sample_rate, frame_len_ms=win_ms, frame_shift_ms=hop_ms)


def _apply(f: Features, fn: Callable[[NDArray], NDArray]) -> Features:
  if isinstance(f, FeatureMatrix):
    return f.with_values(fn(np.asarray(f.values, dtype=np.float64)))
  return fn(np.asarray(f, dtype=np.float64))


def cmvn_sliding(f: Features, window: int = 300) -> Features:
  """Per-bin mean/variance normalisation over a centred window of frames.

  The window is truncated at the utterance edges, so an utterance shorter
  than the window gets plain per-utterance CMVN.
  """
  if window < 1:
    raise ValueError(f'cmvn_sliding: window must be at least 1 frame, got {window}')

  def normalise(x: NDArray) -> NDArray:
    L = x.shape[1]
    x = x - x.mean(axis=1, keepdims=True)

    t = np.arange(L)
    lo = np.maximum(t - window // 2, 0)
    hi = np.minimum(t - window // 2 + window, L)
    n = (hi - lo).astype(np.float64)

    zero = np.zeros((x.shape[0], 1))
    c1 = np.concatenate([zero, np.cumsum(x, axis=1)], axis=1)
    c2 = np.concatenate([zero, np.cumsum(x * x, axis=1)], axis=1)
    mean = (c1[:, hi] - c1[:, lo]) / n
    var = np.maximum((c2[:, hi] - c2[:, lo]) / n - mean ** 2, 0.)
    return (x - mean) / np.maximum(np.sqrt(var), STD_FLOOR)

  return _apply(f, normalise)


def fix_length(f: Features, target: int = 1200, rng: Optional[np.random.Generator] = None) -> Features:
  """Crops or wrap-pads the frame axis to exactly `target` frames.

  With an rng the crop offset is uniform (training); without one the centre is kept.
  """
  if target < 1:
    raise ValueError(f'fix_length: target must be at least 1 frame, got {target}')

  def fix(x: NDArray) -> NDArray:
    L = x.shape[1]
    if L == target:
      return x.copy()
    if L > target:
      start = int(rng.integers(0, L - target + 1)) if rng is not None else (L - target) // 2
      return x[:, start:start + target].copy()
    return x[:, np.arange(target) % L]

  return _apply(f, fix)


def load_wav(path: PathLike, sample_rate: Optional[int] = None) -> Tuple[NDArray[np.float64], int]:
  """Mono samples in [-1, 1]; resampled when `sample_rate` is given."""
  path = Path(path)
  if not path.is_file():
    raise FileNotFoundError(f'Could not find {path}')
  samples, sr = librosa.load(path, sr=sample_rate, mono=True)
  return samples.astype(np.float64), int(sr)


def save_features(path: PathLike, f: FeatureMatrix):
  values = np.ascontiguousarray(f.values, dtype='<f4')
  D, L = values.shape
  with open(path, 'wb') as fp:
    fp.write(FEATURE_MAGIC)
    fp.write(struct.pack('<III', D, L, f.sample_rate))
    fp.write(values.tobytes())


def load_features(path: PathLike) -> FeatureMatrix:
  with open(path, 'rb') as fp:
    magic = fp.read(4)
    if magic != FEATURE_MAGIC:
      raise InputError(f'{path}: not a feature file (expected magic {FEATURE_MAGIC!r}, got {magic!r})')
    header = fp.read(12)
    if len(header) != 12:
      raise InputError(f'{path}: truncated feature header')
    D, L, sample_rate = struct.unpack('<III', header)
    raw = fp.read(4 * D * L)
  if len(raw) != 4 * D * L:
    raise InputError(f'{path}: expected {D}×{L} values, file is truncated')
  values = np.frombuffer(raw, dtype='<f4').reshape(D, L).astype(np.float64)
  return FeatureMatrix(values=values, sample_rate=sample_rate)


def compute_features(
  samples: NDArray,
  sample_rate: int,
  num_mels: int = 64,
  win_ms: float = 25.,
  hop_ms: float = 10.,
  n_fft: int = 512,
  cmvn_window: int = 300,
) -> FeatureMatrix:
  f = log_mel(samples, sample_rate, num_mels, win_ms, hop_ms, n_fft)
  return cmvn_sliding(f, cmvn_window)


def extract_features(
  wav_paths: Sequence[Path],
  wav_root: Path,
  feature_dir: Path,
  num_mels: int = 64,
  sample_rate: int = 16000,
  win_ms: float = 25.,
  hop_ms: float = 10.,
  n_fft: int = 512,
  cmvn_window: int = 300,
  jobs: int = 1,
) -> List[Path]:
  """log_mel → cmvn_sliding → MCF1 file for each WAV, mirroring paths under `feature_dir`."""
  todos = []
  feature_paths = []
  for src in wav_paths:
    dst = feature_dir / Path(src).relative_to(wav_root).with_suffix(FEATURE_SUFFIX)
    feature_paths.append(dst)
    if dst.is_file():
      continue
    todos.append((src, dst))

  existing = len(feature_paths) - len(todos)
  print(f'=> Found {existing} feature files already extracted, {len(todos)} to extract.')

  if todos:
    params = dict(
      num_mels=num_mels, win_ms=win_ms, hop_ms=hop_ms, n_fft=n_fft, cmvn_window=cmvn_window,
    )
    if jobs > 1:
      pool = Pool(jobs)
      map_fn = pool.imap
    else:
      pool = None
      map_fn = map

    iterator = map_fn(_extract_feature, [
      (src, dst, sample_rate, params)
      for src, dst in todos
    ])
    try:
      for _ in tqdm(iterator, total=len(todos), desc='Extracting features'):
        pass
    finally:
      if pool:
        pool.close()
        pool.join()

  return feature_paths


def _extract_feature(args):
  src, dst, sample_rate, params = args
  dst.parent.mkdir(parents=True, exist_ok=True)
  samples, sr = load_wav(src, sample_rate)
  f = compute_features(samples, sr, **params)
  save_features(dst, f)
