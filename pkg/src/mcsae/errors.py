from typing import Optional


class McsaeError(Exception):
  """Base class for every failure raised by this package."""


class DimensionError(McsaeError, ValueError):
  pass


class NumericError(McsaeError, ArithmeticError):
  pass


class ContractError(McsaeError, RuntimeError):
  pass


class ConfigError(McsaeError, ValueError):
  pass


class InputError(McsaeError, ValueError):
  pass


class ScoringError(McsaeError, ValueError):
  pass


class TrainingError(McsaeError, RuntimeError):
  pass


class LabelIndexError(McsaeError, IndexError):
  pass


class ParseError(McsaeError, ValueError):
  def __init__(self, message: str, lineno: Optional[int] = None):
    if lineno is not None:
      message = f'line {lineno}: {message}'
    super().__init__(message)
    self.lineno = lineno
