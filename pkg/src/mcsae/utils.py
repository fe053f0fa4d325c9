from pathlib import Path
from .typings import PathLike


def mkpath(path: PathLike):
  return Path(path).expanduser().resolve()
