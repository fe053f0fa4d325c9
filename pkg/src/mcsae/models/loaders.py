import torch

from omegaconf import OmegaConf
from .speakernet import SpeakerNet
from .. import tensor as T
from ..config import format_flat_config, load_config, parse_flat_config
from ..errors import ConfigError, InputError
from ..typings import PathLike

MODEL_HEADER = 'MCSAE-MODEL'


def save_model(path: PathLike, model: SpeakerNet):
  """Text header with the `model.*` keys, a blank line, then the tensor blob."""
  model_cfg = OmegaConf.structured(model.cfg) if not OmegaConf.is_config(model.cfg) else model.cfg
  header = MODEL_HEADER + '\n' + format_flat_config(model_cfg, prefix='model.') + '\n'
  with open(path, 'wb') as f:
    f.write(header.encode('utf-8'))
    T.write_tensors(f, model.state_dict())


def load_model(path: PathLike, device=None) -> SpeakerNet:
  with open(path, 'rb') as f:
    first = f.readline().decode('utf-8', errors='replace').strip()
    if first != MODEL_HEADER:
      raise InputError(f'{path}: not a model checkpoint (expected header {MODEL_HEADER!r}, got {first!r})')

    lines = []
    while True:
      line = f.readline()
      if not line:
        raise InputError(f'{path}: truncated checkpoint header')
      line = line.decode('utf-8').strip()
      if not line:
        break
      lines.append(line)

    try:
      cfg = load_config(overrides=parse_flat_config('\n'.join(lines), source=str(path)))
    except ConfigError as e:
      raise InputError(f'{path}: bad checkpoint header: {e}') from e

    try:
      state = T.read_tensors(f)
    except ValueError as e:
      raise InputError(f'{path}: {e}') from e

  model = SpeakerNet(cfg.model, cfg.mask, seed=cfg.seed)
  try:
    model.load_state_dict(state, strict=True)
  except RuntimeError as e:
    raise InputError(f'{path}: checkpoint does not match its header: {e}') from e

  model.eval()
  if device is not None:
    model.to(device)
  return model


def state_fingerprint(model: SpeakerNet) -> torch.Tensor:
  """Concatenation of every parameter and buffer, for bit-exact comparisons."""
  return torch.cat([t.detach().reshape(-1).to(T.DTYPE) for t in model.state_dict().values()])
