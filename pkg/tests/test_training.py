import numpy as np
import pytest
import torch

from lightning import Trainer
from torch.nn.utils import parameters_to_vector
from mcsae.config import load_config
from mcsae.errors import ConfigError, InputError, TrainingError
from mcsae.evaluation import load_trials
from mcsae.models import RandomMask, SpeakerNet, load_model, state_fingerprint
from mcsae.spectrogram import load_features, save_features
from mcsae.training import SpeakerTrainer, SynthSpec, fit, gen_synthetic, plateau_step, sgd_step
from mcsae.training.data import (
  FeatureDirDataset,
  SpeakerDataModule,
  SyntheticDataset,
  export_heldout,
  scan_feature_dir,
  synthetic_ids,
)
from mcsae.training.evaluate import all_pairs_trials, embed_utterances
from mcsae.training.trainer import create_optimizer, create_scheduler
from mcsae.training.train import CHECKPOINT_NAME, CONFIG_NAME, REPORT_NAME
from mcsae.typings import FeatureMatrix


def tiny(**overrides):
  overrides = {
    'preset': 'desk',
    'model.num_mels': 8,
    'model.num_frames': 8,
    'model.widths': '[2,4,8,16]',
    'model.head_dim': 8,
    'model.embedding_dim': 8,
    'model.num_speakers': 3,
    'data.num_utterances': 6,
    'data.num_heldout': 2,
    'data.batch_size': 8,
    **overrides,
  }
  return load_config(overrides=[f'{k}={v}' for k, v in overrides.items()])


def single_weight(lr=0.1, momentum=0.9, weight_decay=0.):
  w = torch.nn.Parameter(torch.tensor([1.], dtype=torch.float64))
  cfg = tiny(**{'optim.lr': lr, 'optim.momentum': momentum, 'optim.weight_decay': weight_decay})
  return w, create_optimizer([w], cfg), cfg


def test_sgd_step_analytic_update():
  w, optimizer, _ = single_weight()
  w.grad = torch.tensor([0.5], dtype=torch.float64)
  sgd_step(optimizer)
  assert w.item() == pytest.approx(0.95, abs=1e-15)
  assert optimizer.state[w]['momentum_buffer'].item() == pytest.approx(0.5)


def test_sgd_step_with_zero_lr_is_identity():
  w, optimizer, _ = single_weight(lr=0.)
  for _ in range(3):
    w.grad = torch.tensor([0.7], dtype=torch.float64)
    sgd_step(optimizer)
  assert w.item() == 1.


def test_sgd_step_refuses_non_finite_gradients():
  w, optimizer, _ = single_weight()
  w.grad = torch.tensor([float('nan')], dtype=torch.float64)
  with pytest.raises(TrainingError):
    sgd_step(optimizer)
  assert w.item() == 1.


def test_plateau_step_decays_after_patience():
  w, optimizer, cfg = single_weight(lr=0.1)
  scheduler = create_scheduler(optimizer, cfg)
  lrs = [plateau_step(scheduler, 1.0) for _ in range(13)]
  assert lrs[:6] == [0.1] * 6
  assert lrs[6] == pytest.approx(0.01)
  assert lrs[12] == pytest.approx(0.001)


def test_plateau_step_keeps_lr_while_improving_and_floors_at_min_lr():
  w, optimizer, cfg = single_weight(lr=0.1)
  scheduler = create_scheduler(optimizer, cfg)
  assert [plateau_step(scheduler, 1.0 - 0.01 * i) for i in range(20)] == [0.1] * 20

  for _ in range(100):
    lr = plateau_step(scheduler, 1.0)
  assert lr == pytest.approx(cfg.sched.min_lr)
  with pytest.raises(TrainingError):
    plateau_step(scheduler, float('inf'))


def test_gen_synthetic_is_deterministic():
  spec = SynthSpec(num_speakers=4, num_utterances=3, num_heldout=2, num_mels=6, num_frames=10)
  a, b = gen_synthetic(spec), gen_synthetic(spec)
  assert a.features.shape == (12, 6, 10) and a.heldout_features.shape == (8, 6, 10)
  assert np.array_equal(a.features, b.features)
  assert np.array_equal(a.labels, [0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3])
  assert not np.array_equal(gen_synthetic(SynthSpec(seed=1)).templates, gen_synthetic(SynthSpec(seed=2)).templates)


def test_gen_synthetic_without_noise_repeats_templates():
  corpus = gen_synthetic(SynthSpec(num_speakers=3, num_utterances=4, noise_level=0.))
  for speaker in range(3):
    utterances = corpus.features[corpus.labels == speaker]
    assert all(np.array_equal(u, utterances[0]) for u in utterances)
    assert np.array_equal(utterances[0], np.repeat(corpus.templates[speaker][:, None], 64, axis=1))
  with pytest.raises(ConfigError):
    gen_synthetic(SynthSpec(num_speakers=1))


def test_synthetic_ids_and_heldout_export(tmp_path):
  assert synthetic_ids(np.array([0, 0, 1])) == ['spk000/utt000', 'spk000/utt001', 'spk001/utt000']

  corpus = gen_synthetic(SynthSpec(num_speakers=2, num_heldout=3, num_mels=4, num_frames=8))
  paths, trials_path = export_heldout(corpus, tmp_path / 'heldout')
  assert len(paths) == 6 and paths[0] == tmp_path / 'heldout' / 'spk000' / 'utt000.mcf'
  np.testing.assert_allclose(load_features(paths[4]).values, corpus.heldout_features[4], rtol=1e-6, atol=1e-6)

  trials = load_trials(trials_path)
  assert len(trials) == 15
  assert sum(t.label for t in trials) == 6
  assert trials.trials[0].enroll == 'spk000/utt000'


def test_dataset_items_depend_on_seed_epoch_and_index():
  cfg = tiny()
  corpus = gen_synthetic(SynthSpec.from_config(cfg))
  train = SyntheticDataset(cfg, corpus.features, corpus.labels, split='train')
  assert len(train) == 18 and train.num_speakers == 3

  item = train[4]
  assert item['utterance_id'] == 'spk000/utt004'
  assert item['features'].shape == (8, 8) and item['features'].dtype == torch.float64
  assert item['label'].item() == 0
  assert torch.equal(item['features'], train[4]['features'])

  heldout = SyntheticDataset(cfg, corpus.features, corpus.labels, split='eval')
  assert np.array_equal(heldout[4]['features'].numpy(), corpus.features[4])
  with pytest.raises(ValueError):
    SyntheticDataset(cfg, corpus.features, corpus.labels, split='test')


def test_feature_dir_dataset(tmp_path):
  rng = np.random.default_rng(0)
  for rel in ['bob/x/1.mcf', 'alice/2.mcf', 'alice/3.mcf']:
    path = tmp_path / rel
    path.parent.mkdir(parents=True, exist_ok=True)
    save_features(path, FeatureMatrix(rng.normal(size=(8, 12))))

  paths, speakers = scan_feature_dir(tmp_path)
  assert speakers == ['alice', 'alice', 'bob']

  cfg = tiny(**{'data.source': 'features', 'data.feature_dir': str(tmp_path), 'model.num_speakers': 2})
  dataset = FeatureDirDataset(cfg)
  assert dataset.utterance_ids == ['alice/2', 'alice/3', 'bob/x/1']
  assert list(dataset.labels) == [0, 0, 1]
  assert dataset[2]['features'].shape == (8, 8)

  dm = SpeakerDataModule(cfg)
  dm.setup('fit')
  assert dm.corpus is None and len(dm.dataset_train) == 3

  (tmp_path / 'stray.mcf').write_bytes(b'')
  with pytest.raises(InputError):
    scan_feature_dir(tmp_path)


def test_datamodule_checks_speaker_count(tmp_path):
  (tmp_path / 'a').mkdir()
  save_features(tmp_path / 'a' / 'only.mcf', FeatureMatrix(np.zeros((8, 8))))
  dm = SpeakerDataModule(tiny(**{'data.source': 'features', 'data.feature_dir': str(tmp_path)}))
  with pytest.raises(ConfigError, match='num_speakers'):
    dm.setup('fit')


def test_all_pairs_trials_and_embeddings():
  trials = all_pairs_trials(['a', 'b', 'c'], [0, 0, 1])
  assert [(t.label, t.enroll, t.test) for t in trials] == [(True, 'a', 'b'), (False, 'a', 'c'), (False, 'b', 'c')]

  cfg = tiny()
  model = SpeakerNet(cfg.model, cfg.mask, seed=cfg.seed)
  features = [np.zeros((8, 5)), np.ones((8, 13)), np.full((8, 8), 2.)]
  embeddings = embed_utterances(model, features, batch_size=2)
  assert embeddings.shape == (3, 8)


def test_fit_writes_artifacts_and_is_reproducible(tmp_path):
  cfg = tiny(**{'sched.max_epochs': 2})
  module, report = fit(cfg, output_dir=tmp_path / 'a')
  assert [r.epoch for r in report.epochs] == [1, 2]
  assert all(np.isfinite(r.loss) and 0. <= r.accuracy <= 1. for r in report.epochs)
  assert report.epochs[0].lr == cfg.optim.lr

  out = tmp_path / 'a'
  for name in [CHECKPOINT_NAME, REPORT_NAME, CONFIG_NAME, 'heldout/trials.txt']:
    assert (out / name).is_file(), name
  assert len((out / REPORT_NAME).read_text().splitlines()) == 2
  assert 'model.num_mels=8' in (out / CONFIG_NAME).read_text()

  model = load_model(out / CHECKPOINT_NAME)
  assert torch.equal(state_fingerprint(model), state_fingerprint(module.model))

  _, again = fit(cfg)
  assert [r.loss for r in again.epochs] == [r.loss for r in report.epochs]


def test_plateau_step_accepts_large_finite_losses():
  w, optimizer, cfg = single_weight(lr=0.1)
  scheduler = create_scheduler(optimizer, cfg)
  assert plateau_step(scheduler, 2.1559857018024513e+266) == 0.1
  with pytest.raises(TrainingError):
    plateau_step(scheduler, float('nan'))


def one_step(cfg):
  module = SpeakerTrainer(cfg)
  before = parameters_to_vector(module.model.parameters()).detach().clone()
  trainer = Trainer(
    accelerator='cpu',
    devices=1,
    precision='64-true',
    logger=False,
    enable_checkpointing=False,
    enable_model_summary=False,
    enable_progress_bar=False,
    max_epochs=1,
    limit_train_batches=1,
  )
  trainer.fit(model=module, datamodule=SpeakerDataModule(cfg))
  return before, parameters_to_vector(module.model.parameters()).detach()


def test_training_step_clips_the_gradient_norm():
  cfg = tiny(**{'optim.gradient_clip': 1e-6, 'optim.momentum': 0., 'optim.weight_decay': 0.})
  before, after = one_step(cfg)
  moved = (after - before).norm().item()
  assert 0. < moved <= cfg.optim.lr * 1e-6 * (1 + 1e-9)

  with pytest.raises(ConfigError, match='gradient_clip'):
    tiny(**{'optim.gradient_clip': -1})


def test_mask_factors_stay_in_unit_interval():
  cfg = tiny(**{'sched.max_epochs': 3, 'mask.initial_factor': 0.95})
  module, _ = fit(cfg)
  factors = [m.factor.item() for m in module.model.modules() if isinstance(m, RandomMask)]
  assert len(factors) == 5
  assert all(0. <= f <= 1. for f in factors)


@pytest.mark.slow
def test_desk_preset_learns_and_reproduces():
  cfg = load_config(preset='desk')
  module, report = fit(cfg)
  assert report.final_accuracy == 1.
  assert report.final_loss < 0.1
  assert report.heldout is not None and report.heldout.eer <= 0.05

  again_module, again = fit(cfg)
  assert again.to_text() == report.to_text()
  assert torch.equal(state_fingerprint(again_module.model), state_fingerprint(module.model))
