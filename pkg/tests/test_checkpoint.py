import pytest
import torch

from mcsae import tensor as T
from mcsae.config import load_config
from mcsae.errors import InputError
from mcsae.models import SpeakerNet, extract_embedding, load_model, save_model, state_fingerprint
from mcsae.models.loaders import MODEL_HEADER


def desk_model(mode='mcsae'):
  cfg = load_config(preset='desk', overrides=[f'model.mode={mode}'])
  torch.manual_seed(0)
  return SpeakerNet(cfg.model, cfg.mask, seed=cfg.seed)


@pytest.mark.parametrize('mode', ['gap', 'mla-sap', 'mcsae'])
def test_model_round_trip(tmp_path, mode):
  model = desk_model(mode)
  model.train()
  model(torch.randn(4, 16, 64, dtype=T.DTYPE))  # moves the batch-norm statistics

  path = tmp_path / 'model.mcm'
  save_model(path, model)
  loaded = load_model(path)
  assert not loaded.training
  assert loaded.mode == mode
  assert torch.equal(state_fingerprint(loaded), state_fingerprint(model))

  x = torch.randn(16, 64, generator=torch.Generator().manual_seed(1), dtype=T.DTYPE)
  assert torch.equal(extract_embedding(loaded, x), extract_embedding(model, x))


def test_checkpoint_header_is_readable(tmp_path):
  path = tmp_path / 'model.mcm'
  save_model(path, desk_model())
  head = path.read_bytes().split(b'\n\n', 1)[0].decode()
  lines = head.splitlines()
  assert lines[0] == MODEL_HEADER
  assert 'model.widths=[4,8,16,32]' in lines
  assert all(line.startswith('model.') for line in lines[1:])


def test_load_model_rejects_foreign_files(tmp_path):
  path = tmp_path / 'x.mcm'
  path.write_bytes(b'MCT1garbage')
  with pytest.raises(InputError, match='not a model checkpoint'):
    load_model(path)

  save_model(path, desk_model())
  data = path.read_bytes()
  path.write_bytes(data[:-10])
  with pytest.raises(InputError):
    load_model(path)

  path.write_bytes(data.replace(b'model.embedding_dim=512', b'model.embedding_dim=256'))
  with pytest.raises(InputError, match='does not match'):
    load_model(path)

  path.write_bytes(data.replace(b'model.num_frames=64', b'model.num_frames=63'))
  with pytest.raises(InputError, match='bad checkpoint header'):
    load_model(path)
