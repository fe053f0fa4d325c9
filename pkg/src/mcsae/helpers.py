from pathlib import Path
from typing import List, Sequence
from .typings import PathLike


def find_files(root: PathLike, suffixes: Sequence[str]) -> List[Path]:
  """Every file under `root` whose suffix is one of `suffixes` (case-insensitive), sorted."""
  root = Path(root)
  if not root.is_dir():
    raise FileNotFoundError(f'Could not find directory {root}')
  suffixes = {s.lower() for s in suffixes}
  return sorted(p for p in root.rglob('*') if p.is_file() and p.suffix.lower() in suffixes)


def require_files(paths: Sequence[Path]):
  missing = [str(p) for p in paths if not Path(p).is_file()]
  if missing:
    raise FileNotFoundError(f'Missing input files: {missing}')
