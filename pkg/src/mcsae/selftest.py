"""Property suites behind `mcsae selftest`.

Each suite raises on the first violated property; `run_selftest` reports one
PASS/FAIL line per suite.
"""

import numpy as np
import torch

from typing import Callable, Dict, Iterable, Optional
from torch.func import functional_call
from . import tensor as T
from .config import load_config
from .evaluation import compute_eer, compute_min_dcf
from .models import (
  RandomMask,
  SpeakerNet,
  cross_branch,
  encoding_dim,
  output_extent,
  sample_mask,
  sap_pool,
  sap_weights,
  scaled_dot_attention,
  transform_layer,
)
from .spectrogram import cmvn_sliding, fix_length, log_mel, mel_filterbank, LOG_FLOOR
from .typings import ScoreSet

GRAD_TOL = 1e-4

SUITES: Dict[str, Callable[[], None]] = {}


def suite(name: str):
  def register(fn):
    SUITES[name] = fn
    return fn
  return register


def check(condition: bool, message: str):
  if not condition:
    raise AssertionError(message)


def desk_config(**overrides):
  return load_config(preset='desk', overrides=[f'{k}={v}' for k, v in overrides.items()])


def tiny_config(mode: str = 'mcsae'):
  """Smallest config that keeps every structural invariant."""
  return desk_config(**{
    'model.mode': mode,
    'model.num_mels': 8,
    'model.num_frames': 8,
    'model.widths': '[2,4,8,16]',
    'model.head_dim': 8,
    'model.embedding_dim': 8,
    'model.num_speakers': 3,
  })


def composed_grad_check(
  model: torch.nn.Module,
  x: torch.Tensor,
  y: torch.Tensor,
  num_directions: int = 4,
  step: float = 1e-2,
  seed: int = 0,
  mask_seed: Optional[int] = None,
) -> float:
  """Gradient check of loss(θ, x) along random directions in (θ, x) space.

  f(t) = loss(θ0 + step·Σ t_k U_k, x0 + step·Σ t_k V_k) for t in R^num_directions,
  so a few central differences cover the backward pass of every parameter.
  A train-mode model needs mask_seed: every evaluation then draws the same
  masking maps.
  """
  masks = [m for m in model.modules() if isinstance(m, RandomMask)]
  g = torch.Generator().manual_seed(seed)
  params = {k: p.detach().clone() for k, p in model.named_parameters()}
  U = {k: torch.randn((num_directions, *p.shape), generator=g, dtype=T.DTYPE) for k, p in params.items()}
  V = torch.randn((num_directions, *x.shape), generator=g, dtype=T.DTYPE)

  def f(t: torch.Tensor) -> torch.Tensor:
    if mask_seed is not None:
      for k, mask in enumerate(masks):
        mask.reseed(mask_seed + k)
    theta = {k: params[k] + step * torch.tensordot(t, U[k], dims=1) for k in params}
    xt = x + step * torch.tensordot(t, V, dims=1)
    outputs = functional_call(model, theta, (xt,))
    return T.cross_entropy(outputs.logits, y)

  return T.grad_check(f, torch.zeros(num_directions, dtype=T.DTYPE))


def _weighted(fn: Callable[[torch.Tensor], torch.Tensor], weight: torch.Tensor):
  return lambda x: (fn(x) * weight).sum()


def _off_kinks(x: torch.Tensor, margin: float = 0.1) -> torch.Tensor:
  return x + margin * torch.sign(x)


@suite('shapes')
def check_shapes():
  cfg = load_config(preset='full')
  torch.manual_seed(cfg.seed)
  model = SpeakerNet(cfg.model, cfg.mask, seed=cfg.seed).eval()
  x = torch.randn(1, cfg.model.num_mels, cfg.model.num_frames, dtype=T.DTYPE)
  with torch.no_grad():
    out = model(x)

  check([tuple(p.shape) for p in out.P] == [(1, 32), (1, 32), (1, 64), (1, 128), (1, 256)],
        f'pooled taps {[tuple(p.shape) for p in out.P]}')
  check([tuple(f.shape[1:]) for f in out.feature_maps] == [
    (32, 64, 1200), (32, 64, 1200), (64, 32, 600), (128, 16, 300), (256, 8, 150),
  ], f'feature maps {[tuple(f.shape) for f in out.feature_maps]}')
  last = out.feature_maps[-1].shape[2:]
  check(tuple(last) == (output_extent(64, 4), output_extent(1200, 4)), f'last feature map {tuple(last)}')
  check([tuple(z.shape[1:]) for z in out.z] == [(32, 32), (32, 64), (64, 128), (128, 256)],
        f'segment matrices {[tuple(z.shape) for z in out.z]}')
  check(tuple(out.Z.shape) == (1, 256), f'Z {tuple(out.Z.shape)}')
  check(tuple(out.C.shape) == (1, 512), f'C {tuple(out.C.shape)}')
  check(tuple(out.embedding.shape) == (1, 512), f'SE {tuple(out.embedding.shape)}')
  check(tuple(out.logits.shape) == (1, cfg.model.num_speakers), f'logits {tuple(out.logits.shape)}')


@suite('modes')
def check_modes():
  full = load_config(preset='full')
  for mode, width in [('gap', 256), ('sap', 256), ('mla-sap', 512), ('mcsae', 512)]:
    full.model.mode = mode
    check(encoding_dim(full.model) == width, f'{mode}: full-scale encoding width {encoding_dim(full.model)}')

  x = torch.randn(2, 16, 64, generator=torch.Generator().manual_seed(0), dtype=T.DTYPE)
  for mode in ['gap', 'sap', 'mla-sap', 'mcsae']:
    cfg = desk_config(**{'model.mode': mode})
    model = SpeakerNet(cfg.model, cfg.mask, seed=cfg.seed)
    out = model(x)
    check(out.encoding.shape == (2, encoding_dim(cfg.model)), f'{mode}: encoding {tuple(out.encoding.shape)}')
    check(bool(torch.isfinite(out.logits).all()), f'{mode}: non-finite logits')
    if mode == 'gap':
      check(torch.equal(out.encoding, T.global_avg_pool(out.feature_maps[-1])), 'gap: encoding is not GAP of F4')

  for dim in [64, 128, 256, 512]:
    cfg = desk_config(**{'model.embedding_dim': dim})
    model = SpeakerNet(cfg.model, cfg.mask, seed=cfg.seed).eval()
    out = model(x)
    check(out.embedding.shape == (2, dim), f'embedding_dim={dim}: SE {tuple(out.embedding.shape)}')


@suite('gradients')
def check_gradients():
  g = torch.Generator().manual_seed(0)

  def randn(*shape):
    return torch.randn(shape, generator=g, dtype=T.DTYPE)

  checks = {}
  w34 = randn(3, 4)
  checks['softmax'] = T.grad_check(_weighted(lambda x: T.softmax(x, axis=-1), w34), randn(3, 4))
  b = randn(4, 5)
  checks['matmul'] = T.grad_check(_weighted(lambda a: T.matmul(a, b), randn(3, 5)), randn(3, 4))
  checks['leaky_relu'] = T.grad_check(_weighted(lambda x: T.leaky_relu(x, 0.01), w34), _off_kinks(randn(3, 4)))

  kernel, bias = randn(3, 2, 3, 3), randn(3)
  checks['conv2d(input)'] = T.grad_check(
    _weighted(lambda x: T.conv2d(x, kernel, bias, stride=1, pad=1), randn(3, 5, 5)), randn(2, 5, 5))
  image = randn(2, 6, 6)
  checks['conv2d(kernel)'] = T.grad_check(
    _weighted(lambda k: T.conv2d(image, k, bias, stride=2, pad=1), randn(3, 3, 3)), kernel)

  gamma, beta = randn(3), randn(3)

  def bn(x):
    return T.batch_norm2d(x, gamma, beta, torch.zeros(3, dtype=T.DTYPE), torch.ones(3, dtype=T.DTYPE), True)
  checks['batch_norm2d'] = T.grad_check(_weighted(bn, randn(4, 3, 2, 2)), randn(4, 3, 2, 2))
  checks['global_avg_pool'] = T.grad_check(_weighted(T.global_avg_pool, randn(2, 3)), randn(2, 3, 4, 4))

  labels = torch.tensor([0, 2, 1])
  checks['cross_entropy'] = T.grad_check(lambda z: T.cross_entropy(z, labels), randn(3, 4))

  k, v = randn(5, 4), randn(5, 4)
  checks['scaled_dot_attention'] = T.grad_check(
    _weighted(lambda q: scaled_dot_attention(q, k, v), randn(5, 4)), randn(5, 4))
  u = randn(4)
  checks['sap'] = T.grad_check(
    _weighted(lambda h: sap_pool(h, sap_weights(torch.tanh(h), u)), randn(2, 4)), randn(2, 6, 4))

  kv = randn(2, 6)
  checks['cross_branch(query)'] = T.grad_check(_weighted(lambda q: cross_branch(q, kv), randn(2, 4, 1)), randn(2, 4))
  q = randn(2, 4)
  checks['cross_branch(key)'] = T.grad_check(_weighted(lambda s: cross_branch(q, s), randn(2, 4, 1)), randn(2, 6))
  weight, offset = T.tensor(0.7), T.tensor(0.2)
  checks['transform_layer'] = T.grad_check(
    _weighted(lambda p: transform_layer(p, weight, offset, 0.01), w34), _off_kinks(randn(3, 4)) - 0.2 / 0.7)

  for mode in ['gap', 'sap', 'mla-sap', 'mcsae']:
    cfg = tiny_config(mode)
    torch.manual_seed(cfg.seed)
    model = SpeakerNet(cfg.model, cfg.mask, seed=cfg.seed).eval()
    x = randn(2, cfg.model.num_mels, cfg.model.num_frames)
    y = torch.tensor([0, 2])
    checks[f'model({mode})'] = composed_grad_check(model, x, y)

  # Batch statistics and the masking-factor path only exist in train mode.
  cfg = tiny_config('mcsae')
  x = randn(4, cfg.model.num_mels, cfg.model.num_frames)
  y = torch.tensor([1, 0, 2, 1])
  for enabled in [False, True]:
    torch.manual_seed(cfg.seed)
    model = SpeakerNet(cfg.model, cfg.mask, seed=cfg.seed).train()
    for mask in model.modules():
      if isinstance(mask, RandomMask):
        mask.enabled = enabled
    name = 'masked' if enabled else 'unmasked'
    checks[f'model(mcsae, train, {name})'] = composed_grad_check(model, x, y, mask_seed=cfg.seed)

  failed = {name: err for name, err in checks.items() if not err <= GRAD_TOL}
  check(not failed, ', '.join(f'{name} rel err {err:.3g}' for name, err in failed.items()))


@suite('algebra')
def check_algebra():
  cfg = desk_config()
  model = SpeakerNet(cfg.model, cfg.mask, seed=cfg.seed).eval()
  x = torch.randn(3, 16, 64, generator=torch.Generator().manual_seed(1), dtype=T.DTYPE)
  with torch.no_grad():
    out = model(x)
    again = model(x)

  for i, z in enumerate(out.z, start=1):
    s = torch.linalg.svdvals(z)
    check(bool((s[:, 1] <= 1e-8 * s[:, 0]).all()), f'z{i} is not rank one: {s[:, :2].tolist()}')

  last_branch = out.branches[-1][1].squeeze(-1)
  for b in range(x.shape[0]):
    norm = out.Z[b].norm() * last_branch[b].norm()
    if norm > 0:
      cos = (out.Z[b] @ last_branch[b]).abs() / norm
      check(cos >= 1 - 1e-9, f'Z is not collinear with the last branch (|cos| = {cos.item()})')

  g = torch.Generator().manual_seed(2)
  q = torch.randn(4, 7, generator=g, dtype=T.DTYPE) * 10
  kv = torch.randn(4, 9, generator=g, dtype=T.DTYPE)
  out_b = cross_branch(q, kv).squeeze(-1)
  lo = kv.min(dim=-1, keepdim=True).values
  hi = kv.max(dim=-1, keepdim=True).values
  check(bool(((out_b >= lo - 1e-12) & (out_b <= hi + 1e-12)).all()), 'cross_branch output leaves [min(kv), max(kv)]')

  for name, a, b in [('embedding', out.embedding, again.embedding), ('Z', out.Z, again.Z)]:
    check(torch.equal(a, b), f'eval-mode {name} differs between identical calls')


@suite('masking')
def check_masking():
  g = torch.Generator().manual_seed(0)
  check(bool((sample_mask((100,), 0., g) == 1).all()), 'p=0 masks entries')
  check(bool((sample_mask((100,), 1., g) == 0).all()), 'p=1 keeps entries')
  for p in [0.1, 0.5, 0.9]:
    rate = 1 - sample_mask((100_000,), p, g).mean().item()
    check(abs(rate - p) <= 0.02, f'mask rate {rate:.4f} for p={p}')

  mask = RandomMask(0.5, seed=0)
  x = torch.linspace(-1., 1., 50, dtype=T.DTYPE)
  mask.eval()
  check(torch.equal(mask(x), x), 'eval-mode masking is not the identity')

  mask.train()
  y = mask(x.abs() + 1.)
  y.sum().backward()
  check(mask.factor.grad is not None and mask.factor.grad.item() != 0., 'no gradient reaches the masking factor')
  kept = y.detach() != 0
  check(torch.equal(y.detach()[kept], (x.abs() + 1.)[kept]), 'kept entries are rescaled')


def brute_force_metrics(scores: ScoreSet, p_target: float = 0.01):
  target, nontarget = scores.target_scores, scores.nontarget_scores
  best_gap, eer = None, None
  best_dcf = None
  for t in list(np.unique(scores.scores)) + [np.inf]:
    far = np.mean(nontarget >= t)
    frr = np.mean(target < t)
    if best_gap is None or abs(far - frr) < best_gap:
      best_gap, eer = abs(far - frr), (far + frr) / 2
    dcf = (frr * p_target + far * (1 - p_target)) / min(p_target, 1 - p_target)
    if best_dcf is None or dcf < best_dcf:
      best_dcf = dcf
  return eer, best_dcf


def random_score_sets(count: int, max_trials: int, seed: int = 0) -> Iterable[ScoreSet]:
  rng = np.random.default_rng(seed)
  for _ in range(count):
    n = int(rng.integers(2, max_trials + 1))
    labels = rng.random(n) < 0.3
    labels[:2] = [True, False]
    # Rounded scores produce ties.
    scores = np.round(rng.normal(size=n) + labels * rng.uniform(0, 3), int(rng.integers(1, 4)))
    yield ScoreSet(scores=scores, labels=labels)


@suite('metrics')
def check_metrics(count: int = 50, max_trials: int = 10000):
  for s in random_score_sets(count, max_trials):
    eer, _ = compute_eer(s)
    min_dcf, _ = compute_min_dcf(s)
    oracle_eer, oracle_dcf = brute_force_metrics(s)
    check(abs(eer - oracle_eer) <= 1e-12, f'EER {eer} differs from the oracle {oracle_eer}')
    check(abs(min_dcf - oracle_dcf) <= 1e-12, f'minDCF {min_dcf} differs from the oracle {oracle_dcf}')
    check(0 <= eer <= 1 and 0 <= min_dcf <= 1, f'metrics out of range: EER {eer}, minDCF {min_dcf}')

  separable = ScoreSet(np.array([0.9, 0.8, 0.1, 0.2]), np.array([True, True, False, False]))
  inverted = ScoreSet(np.array([0.1, 0.9]), np.array([True, False]))
  check(compute_eer(separable)[0] == 0., 'separable scores give a nonzero EER')
  check(compute_eer(inverted)[0] == 1., 'inverted scores do not give EER 1')
  check(compute_min_dcf(separable)[0] == 0., 'separable scores give a nonzero minDCF')


@suite('frontend')
def check_frontend():
  sr = 16000
  rng = np.random.default_rng(0)
  f = log_mel(rng.normal(size=sr) * 0.1, sr)
  check(f.values.shape == (64, 98), f'1 s of audio gives {f.values.shape}')
  check(bool(np.isfinite(f.values).all()), 'non-finite log-mel values')

  silence = log_mel(np.zeros(sr), sr)
  check(bool(np.all(silence.values == np.log(LOG_FLOOR))), 'silence is not at the log floor')

  fb = mel_filterbank(sr, 512, 64)
  check(bool(fb.sum(axis=0).max() <= 1 + 1e-9), 'overlapping mel filters sum above 1')
  tone = np.sin(2 * np.pi * 1000 * np.arange(sr) / sr)
  band = int(np.argmax(fb[:, int(round(1000 * 512 / sr))]))
  peak = int(np.argmax(log_mel(tone, sr).values.mean(axis=1)))
  check(peak == band, f'1 kHz tone peaks in band {peak}, expected {band}')

  x = rng.normal(size=(5, 700))
  check(fix_length(x, 1200).shape == (5, 1200), 'fix_length does not pad to target')
  check(np.array_equal(fix_length(x, 1200)[:, 700:], x[:, :500]), 'padding does not wrap around')
  check(fix_length(rng.normal(size=(5, 1500)), 1200, rng).shape == (5, 1200), 'fix_length does not crop to target')

  check(bool(np.all(cmvn_sliding(np.full((3, 40), 7.)) == 0)), 'constant input does not normalise to zero')
  short = rng.normal(size=(3, 40))
  expected = (short - short.mean(axis=1, keepdims=True)) / short.std(axis=1, keepdims=True)
  check(np.allclose(cmvn_sliding(short, 300), expected, atol=1e-9), 'short utterance is not globally normalised')


def run_selftest(names: Optional[Iterable[str]] = None) -> bool:
  names = list(names) if names else list(SUITES)
  ok = True
  for name in names:
    if name not in SUITES:
      print(f'FAIL {name}: unknown suite (expected one of {list(SUITES)})')
      ok = False
      continue
    try:
      SUITES[name]()
      print(f'PASS {name}')
    except Exception as e:
      print(f'FAIL {name}: {type(e).__name__}: {e}')
      ok = False
  return ok
