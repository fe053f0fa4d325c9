from typing import Any, Dict, List, Optional, Sequence
from dataclasses import dataclass, field
from hydra.core.config_store import ConfigStore
from omegaconf import DictConfig, OmegaConf
from omegaconf.errors import OmegaConfBaseException

from .errors import ConfigError
from .typings import PathLike

ENCODING_MODES = ['gap', 'sap', 'mla-sap', 'mcsae']


@dataclass
class ModelConfig:
  num_mels: int = 64  # D
  num_frames: int = 1200  # L, 12 s at 10 ms shift
  widths: List[int] = field(default_factory=lambda: [32, 64, 128, 256])
  blocks: List[int] = field(default_factory=lambda: [3, 4, 6, 3])
  mode: str = 'mcsae'
  head_dim: int = 512
  embedding_dim: int = 512
  num_speakers: int = 5994
  slope: float = 0.01  # λ of every LReLU
  stem_kernel: int = 7


@dataclass
class OptimConfig:
  lr: float = 0.1
  momentum: float = 0.9
  weight_decay: float = 1e-4
  gradient_clip: float = 5.0  # global grad norm, 0 disables


@dataclass
class SchedConfig:
  factor: float = 0.1
  patience: int = 5
  min_delta: float = 1e-3
  min_lr: float = 1e-6
  max_epochs: int = 200
  early_stop_patience: int = 20


@dataclass
class DataConfig:
  source: str = 'synthetic'  # synthetic | features
  feature_dir: str = ''
  batch_size: int = 96
  num_workers: int = 0

  # Frontend.
  sample_rate: int = 16000
  num_fft: int = 512
  win_ms: float = 25.
  hop_ms: float = 10.
  cmvn_window: int = 300

  # Synthetic corpus.
  num_utterances: int = 20
  num_heldout: int = 5
  template_scale: float = 2.0
  noise_level: float = 0.5


@dataclass
class MaskConfig:
  enabled: bool = True
  initial_factor: float = 0.5


@dataclass
class SpecAugConfig:
  enabled: bool = True
  F: int = 8
  T: int = 100
  mF: int = 1
  mT: int = 1


@dataclass
class Config:
  seed: int = 1234
  preset: str = 'full'  # full | desk

  model: ModelConfig = field(default_factory=ModelConfig)
  optim: OptimConfig = field(default_factory=OptimConfig)
  sched: SchedConfig = field(default_factory=SchedConfig)
  data: DataConfig = field(default_factory=DataConfig)
  mask: MaskConfig = field(default_factory=MaskConfig)
  specaug: SpecAugConfig = field(default_factory=SpecAugConfig)


PRESETS: Dict[str, Dict[str, Any]] = {
  'full': {},
  'desk': {
    'model.num_mels': 16,
    'model.num_frames': 64,
    'model.widths': [4, 8, 16, 32],
    'model.blocks': [1, 1, 1, 1],
    'model.num_speakers': 8,
    'data.batch_size': 16,
    'data.num_utterances': 20,
    # 0.1 at batch 96, scaled down for batch 16.
    'optim.lr': 0.01,
    'specaug.F': 2,
    'specaug.T': 8,
  },
}


cs = ConfigStore.instance()
cs.store(name='config', node=Config)


def parse_flat_config(text: str, source: str = '<config>') -> List[str]:
  """Turns `key = value` lines into an OmegaConf dot-list."""
  dotlist = []
  for lineno, line in enumerate(text.splitlines(), start=1):
    line = line.split('#', 1)[0].strip()
    if not line:
      continue
    if '=' not in line:
      raise ConfigError(f'{source}:{lineno}: expected `key = value`, got {line!r}')
    key, value = (s.strip() for s in line.split('=', 1))
    if not key:
      raise ConfigError(f'{source}:{lineno}: empty key')
    dotlist.append(f'{key}={value}')
  return dotlist


def format_flat_config(cfg: DictConfig, prefix: str = '') -> str:
  container = OmegaConf.to_container(cfg, resolve=True)
  lines = []
  for key, value in _flatten(container, prefix):
    if isinstance(value, list):
      value = '[' + ','.join(str(v) for v in value) + ']'
    elif value == '':
      value = "''"
    lines.append(f'{key}={value}')
  return '\n'.join(lines) + '\n'


def _flatten(d: Dict, prefix: str):
  for key, value in d.items():
    name = f'{prefix}{key}'
    if isinstance(value, dict):
      yield from _flatten(value, name + '.')
    else:
      yield name, value


def _merge_dotlist(cfg: DictConfig, dotlist: Sequence[str], source: str) -> DictConfig:
  for item in dotlist:
    key = item.split('=', 1)[0]
    try:
      cfg = OmegaConf.merge(cfg, OmegaConf.from_dotlist([item]))
    except OmegaConfBaseException as e:
      raise ConfigError(f'{source}: invalid setting {key!r}: {e}') from e
  return cfg


def _preset_dotlist(name: str) -> List[str]:
  if name not in PRESETS:
    raise ConfigError(f'Unknown preset {name!r} (expected one of {list(PRESETS)})')
  return [f'{k}={v}' for k, v in PRESETS[name].items()]


def load_config(
  path: Optional[PathLike] = None,
  overrides: Sequence[str] = (),
  preset: Optional[str] = None,
) -> DictConfig:
  """Defaults < preset < config file < overrides. Unknown keys raise ConfigError."""
  file_items = []
  if path is not None:
    try:
      with open(path, 'r') as f:
        text = f.read()
    except OSError as e:
      raise ConfigError(f'Cannot read config file {path}: {e}') from e
    file_items = parse_flat_config(text, source=str(path))

  # Resolve the preset first; it may come from any layer.
  layered = _merge_dotlist(OmegaConf.structured(Config), file_items, str(path))
  layered = _merge_dotlist(layered, overrides, 'override')
  preset = preset or layered.preset

  cfg = OmegaConf.structured(Config)
  cfg = _merge_dotlist(cfg, _preset_dotlist(preset), f'preset {preset}')
  cfg = _merge_dotlist(cfg, file_items, str(path))
  cfg = _merge_dotlist(cfg, overrides, 'override')
  cfg.preset = preset
  validate_config(cfg)
  return cfg


def validate_config(cfg: DictConfig):
  m = cfg.model
  if m.mode not in ENCODING_MODES:
    raise ConfigError(f'model.mode: unknown encoding mode {m.mode!r} (expected one of {ENCODING_MODES})')
  if len(m.widths) != len(m.blocks):
    raise ConfigError(f'model.widths {list(m.widths)} and model.blocks {list(m.blocks)} differ in length')
  if any(b < 1 for b in m.blocks):
    raise ConfigError(f'model.blocks must be positive, got {list(m.blocks)}')
  if any(w2 != 2 * w1 for w1, w2 in zip(m.widths, m.widths[1:])):
    raise ConfigError(f'model.widths must double from stage to stage, got {list(m.widths)}')
  if m.mode == 'mcsae' and len(m.widths) != 4:
    raise ConfigError(f'model.mode=mcsae needs exactly 4 stages, got {len(m.widths)}')
  factor = 2 ** (len(m.widths) - 1)
  if m.num_mels % factor or m.num_frames % factor:
    raise ConfigError(
      f'model.num_mels={m.num_mels} and model.num_frames={m.num_frames} must be divisible by {factor}'
    )
  if not 0. < m.slope < 1.:
    raise ConfigError(f'model.slope must lie in (0, 1), got {m.slope}')
  if m.num_speakers < 2:
    raise ConfigError(f'model.num_speakers must be at least 2, got {m.num_speakers}')
  if m.stem_kernel % 2 == 0:
    raise ConfigError(f'model.stem_kernel must be odd, got {m.stem_kernel}')
  if cfg.data.source not in ('synthetic', 'features'):
    raise ConfigError(f'data.source: unknown source {cfg.data.source!r}')
  if cfg.optim.gradient_clip < 0:
    raise ConfigError(f'optim.gradient_clip must be non-negative, got {cfg.optim.gradient_clip}')
  if not 0. <= cfg.mask.initial_factor <= 1.:
    raise ConfigError(f'mask.initial_factor must lie in [0, 1], got {cfg.mask.initial_factor}')
