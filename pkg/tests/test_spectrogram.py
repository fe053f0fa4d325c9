import numpy as np
import pytest
import soundfile as sf

from mcsae.errors import InputError
from mcsae.spectrogram import (
  FEATURE_SUFFIX,
  LOG_FLOOR,
  cmvn_sliding,
  compute_features,
  extract_features,
  fix_length,
  load_features,
  load_wav,
  log_mel,
  mel_filterbank,
  save_features,
)
from mcsae.typings import FeatureMatrix

SR = 16000


def noise(seconds=1., seed=0):
  return np.random.default_rng(seed).normal(size=int(SR * seconds)) * 0.1


def test_one_second_gives_98_frames():
  f = log_mel(noise(), SR)
  assert f.values.shape == (64, 98)
  assert np.isfinite(f.values).all()
  assert f.frame_shift_ms == 10. and f.frame_len_ms == 25.


def test_silence_sits_at_the_log_floor():
  f = log_mel(np.zeros(SR), SR, num_mels=40)
  assert f.values.shape == (40, 98)
  assert np.all(f.values == np.log(LOG_FLOOR))


def test_mel_filterbank_shape_and_partition():
  fb = mel_filterbank(SR, 512, 64)
  assert fb.shape == (64, 257)
  assert fb.min() >= 0
  assert fb.sum(axis=0).max() <= 1 + 1e-9


def test_tone_peaks_in_its_mel_band():
  fb = mel_filterbank(SR, 512, 64)
  tone = np.sin(2 * np.pi * 1000 * np.arange(SR) / SR)
  band = int(np.argmax(fb[:, round(1000 * 512 / SR)]))
  assert int(np.argmax(log_mel(tone, SR).values.mean(axis=1))) == band


def test_log_mel_rejects_bad_audio():
  with pytest.raises(InputError, match='8 kHz'):
    log_mel(noise(), 4000)
  with pytest.raises(InputError, match='mono'):
    log_mel(np.zeros((2, SR)), SR)
  with pytest.raises(InputError, match='shorter'):
    log_mel(np.zeros(100), SR)


def test_cmvn_matches_windowed_oracle():
  x = np.random.default_rng(1).normal(size=(3, 30)) * 4 + 2
  window = 5
  y = cmvn_sliding(x, window)
  expected = np.empty_like(x)
  for t in range(30):
    lo, hi = max(t - window // 2, 0), min(t - window // 2 + window, 30)
    seg = x[:, lo:hi]
    expected[:, t] = (x[:, t] - seg.mean(axis=1)) / np.maximum(seg.std(axis=1), 1e-8)
  np.testing.assert_allclose(y, expected, atol=1e-9)


def test_cmvn_short_utterance_is_global_cmvn():
  x = np.random.default_rng(2).normal(size=(4, 50))
  expected = (x - x.mean(axis=1, keepdims=True)) / x.std(axis=1, keepdims=True)
  np.testing.assert_allclose(cmvn_sliding(x, 300), expected, atol=1e-9)
  assert np.all(cmvn_sliding(np.full((2, 20), 3.)) == 0)
  with pytest.raises(ValueError):
    cmvn_sliding(x, 0)


def test_fix_length_crop_and_wrap():
  x = np.arange(20, dtype=np.float64).reshape(2, 10)
  np.testing.assert_array_equal(fix_length(x, 4), x[:, 3:7])
  np.testing.assert_array_equal(fix_length(x, 25)[:, 10:20], x)
  np.testing.assert_array_equal(fix_length(x, 25)[:, 20:], x[:, :5])
  np.testing.assert_array_equal(fix_length(x, 10), x)

  rng = np.random.default_rng(0)
  for _ in range(10):
    crop = fix_length(x, 4, rng)
    start = int(crop[0, 0])
    np.testing.assert_array_equal(crop, x[:, start:start + 4])

  f = fix_length(FeatureMatrix(x), 12)
  assert isinstance(f, FeatureMatrix) and f.frames == 12
  with pytest.raises(ValueError):
    fix_length(x, 0)


def test_feature_file_round_trip(tmp_path):
  f = compute_features(noise(0.5), SR, num_mels=16)
  path = tmp_path / f'a{FEATURE_SUFFIX}'
  save_features(path, f)
  g = load_features(path)
  assert g.values.shape == f.values.shape and g.sample_rate == SR
  np.testing.assert_allclose(g.values, f.values, rtol=1e-6, atol=1e-6)


def test_feature_file_rejects_garbage(tmp_path):
  bad = tmp_path / 'bad.mcf'
  bad.write_bytes(b'RIFF0000')
  with pytest.raises(InputError, match='magic'):
    load_features(bad)

  good = tmp_path / 'good.mcf'
  save_features(good, FeatureMatrix(np.zeros((4, 8))))
  truncated = tmp_path / 'truncated.mcf'
  truncated.write_bytes(good.read_bytes()[:-5])
  with pytest.raises(InputError, match='truncated'):
    load_features(truncated)


def test_load_wav_reads_mono_float(tmp_path):
  path = tmp_path / 'x.wav'
  sf.write(path, noise(0.25), SR, subtype='FLOAT')
  samples, sr = load_wav(path)
  assert sr == SR and samples.dtype == np.float64 and samples.shape == (SR // 4,)
  with pytest.raises(FileNotFoundError):
    load_wav(tmp_path / 'missing.wav')


def test_extract_features_mirrors_tree_and_skips_existing(tmp_path, capsys):
  wav_root = tmp_path / 'wav'
  paths = []
  for i, rel in enumerate(['spk0/a.wav', 'spk1/b.wav']):
    path = wav_root / rel
    path.parent.mkdir(parents=True)
    sf.write(path, noise(0.5, seed=i), SR, subtype='FLOAT')
    paths.append(path)

  feature_dir = tmp_path / 'features'
  out = extract_features(paths, wav_root, feature_dir, num_mels=16)
  assert out == [feature_dir / 'spk0' / 'a.mcf', feature_dir / 'spk1' / 'b.mcf']
  assert all(p.is_file() for p in out)
  assert load_features(out[0]).values.shape == (16, 48)

  extract_features(paths, wav_root, feature_dir, num_mels=16)
  assert '2 feature files already extracted, 0 to extract' in capsys.readouterr().out
