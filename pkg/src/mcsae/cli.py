import argparse
import sys

from pathlib import Path
from typing import List, Optional
from omegaconf import DictConfig
from .config import load_config
from .errors import ConfigError, McsaeError
from .evaluation import (
  evaluate_scores,
  load_embeddings,
  load_scores,
  load_trials,
  save_scores,
  score_trials,
  write_metrics,
  write_sweep,
)
from .extract import extract, extract_feature_dir
from .selftest import SUITES, run_selftest
from .training import fit
from .utils import mkpath

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2


def make_parser():
  common = argparse.ArgumentParser(add_help=False)
  common.add_argument('--config', type=Path, default=None,
                      help='Flat `key = value` config file')
  common.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                      help='Override one config key; repeatable, applied after --config')
  common.add_argument('--seed', type=int, default=None,
                      help='Random seed (same as --set seed=N)')
  common.add_argument('--jobs', type=int, default=1,
                      help='Number of worker processes for feature extraction (default: 1)')

  parser = argparse.ArgumentParser(prog='mcsae', description='Speaker embeddings with multi-level cross-stage attention.')
  verbs = parser.add_subparsers(dest='command', required=True)

  p = verbs.add_parser('features', parents=[common], help='WAV directory → log-mel feature files')
  p.add_argument('wav_dir', type=Path, help='Directory of mono WAV files')
  p.add_argument('-o', '--out-dir', type=Path, required=True, help='Directory for the feature files')

  p = verbs.add_parser('train', parents=[common], help='Train a model and write its checkpoint and report')
  p.add_argument('-o', '--out-dir', type=Path, required=True, help='Directory for the checkpoint and report')

  p = verbs.add_parser('extract', parents=[common], help='Checkpoint + feature files → embedding store')
  p.add_argument('checkpoint', type=Path, help='Model checkpoint written by `train`')
  p.add_argument('feature_dir', type=Path, help='Directory of feature files')
  p.add_argument('-o', '--out', type=Path, required=True, help='Embedding store to write')

  p = verbs.add_parser('score', parents=[common], help='Embedding store + trial list → score file')
  p.add_argument('store', type=Path, help='Embedding store written by `extract`')
  p.add_argument('trials', type=Path, help='Trial list: `label enroll test` per line')
  p.add_argument('-o', '--out', type=Path, required=True, help='Score file to write')

  p = verbs.add_parser('eval', parents=[common], help='Score file → EER/minDCF report')
  p.add_argument('scores', type=Path, help='Score file written by `score`')
  p.add_argument('-o', '--out', type=Path, required=True, help='Metrics report to write')
  p.add_argument('--sweep-out', type=Path, default=None, help='Also write the raw threshold sweep (DET points)')

  p = verbs.add_parser('selftest', parents=[common], help='Run the property suites')
  p.add_argument('suites', nargs='*', default=[], help=f'Suites to run (default: all of {list(SUITES)})')

  return parser


def cmd_features(args, cfg: DictConfig) -> int:
  paths = extract_feature_dir(args.wav_dir, args.out_dir, cfg, jobs=args.jobs)
  print(f'=> {len(paths)} feature files are in {mkpath(args.out_dir)}')
  return EXIT_OK


def cmd_train(args, cfg: DictConfig) -> int:
  _, report = fit(cfg, output_dir=mkpath(args.out_dir))
  print(f'=> Final loss {report.final_loss:.6f}, accuracy {report.final_accuracy:.4f}')
  return EXIT_OK


def cmd_extract(args, cfg: DictConfig) -> int:
  extract(args.checkpoint, args.feature_dir, out_path=args.out)
  return EXIT_OK


def cmd_score(args, cfg: DictConfig) -> int:
  store = load_embeddings(mkpath(args.store))
  trials = load_trials(mkpath(args.trials))
  _, records = score_trials(trials, store)
  save_scores(mkpath(args.out), records)
  print(f'=> Scored {len(records)} trials into {mkpath(args.out)}')
  return EXIT_OK


def cmd_eval(args, cfg: DictConfig) -> int:
  scores = load_scores(mkpath(args.scores))
  result = evaluate_scores(scores)
  write_metrics(mkpath(args.out), result)
  if args.sweep_out is not None:
    write_sweep(mkpath(args.sweep_out), scores)
  print(result.to_text(), end='')
  return EXIT_OK


def cmd_selftest(args, cfg: DictConfig) -> int:
  return EXIT_OK if run_selftest(args.suites) else EXIT_FAILURE


COMMANDS = {
  'features': cmd_features,
  'train': cmd_train,
  'extract': cmd_extract,
  'score': cmd_score,
  'eval': cmd_eval,
  'selftest': cmd_selftest,
}


def run(argv: Optional[List[str]] = None) -> int:
  parser = make_parser()
  try:
    args = parser.parse_args(argv)
  except SystemExit as e:
    # argparse exits with 2 on usage errors.
    return EXIT_OK if e.code in (0, None) else EXIT_USAGE

  if args.jobs < 1:
    print(f'error: --jobs must be at least 1, got {args.jobs}', file=sys.stderr)
    return EXIT_USAGE

  overrides = list(args.overrides)
  if args.seed is not None:
    overrides.append(f'seed={args.seed}')

  try:
    cfg = load_config(args.config, overrides)
    return COMMANDS[args.command](args, cfg)
  except ConfigError as e:
    print(f'error: {e}', file=sys.stderr)
    return EXIT_USAGE
  except (McsaeError, OSError) as e:
    print(f'error: {e}', file=sys.stderr)
    return EXIT_FAILURE


def main():
  sys.exit(run())


if __name__ == '__main__':
  main()
