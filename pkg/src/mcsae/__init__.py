from .__about__ import __version__
from .config import Config, load_config
from .errors import (
  ConfigError,
  ContractError,
  DimensionError,
  InputError,
  LabelIndexError,
  McsaeError,
  NumericError,
  ParseError,
  ScoringError,
  TrainingError,
)
from .extract import extract, extract_feature_dir
from .models import SpeakerNet, extract_embedding, load_model, save_model
from .typings import FeatureMatrix, StageOutputs, TrainingReport, VerificationResult
