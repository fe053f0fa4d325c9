import hydra
import lightning

from pathlib import Path
from typing import Optional, Tuple
from hydra.core.hydra_config import HydraConfig
from lightning import Trainer
from lightning.pytorch.callbacks import EarlyStopping
from omegaconf import DictConfig, OmegaConf

from .data import SpeakerDataModule, export_heldout
from .evaluate import evaluate
from .trainer import SpeakerTrainer
from ..config import format_flat_config, load_config
from ..models import count_parameters, save_model
from ..typings import PathLike, TrainingReport

CHECKPOINT_NAME = 'model.mcm'
REPORT_NAME = 'report.txt'
CONFIG_NAME = 'config.txt'


def fit(
  cfg: DictConfig,
  output_dir: Optional[PathLike] = None,
  progress: bool = False,
) -> Tuple[SpeakerTrainer, TrainingReport]:
  """Trains a SpeakerNet and, given an output directory, writes its checkpoint,
  training report, resolved config and (synthetic source) held-out trials."""
  lightning.seed_everything(cfg.seed, workers=True)

  dm = SpeakerDataModule(cfg)
  module = SpeakerTrainer(cfg)
  print(f'=> Built a {cfg.model.mode} model with {count_parameters(module.model):,} trainable parameters')

  callbacks = [
    EarlyStopping(
      monitor='train/loss',
      mode='min',
      patience=cfg.sched.early_stop_patience,
      min_delta=cfg.sched.min_delta,
      check_on_train_epoch_end=True,
    ),
  ]
  trainer = Trainer(
    accelerator='cpu',
    devices=1,
    precision='64-true',
    deterministic=True,
    logger=False,
    enable_checkpointing=False,
    enable_model_summary=False,
    enable_progress_bar=progress,
    callbacks=callbacks,
    max_epochs=cfg.sched.max_epochs,
    num_sanity_val_steps=0,
  )

  trainer.fit(model=module, datamodule=dm)
  print(f'=> Finished training after {len(module.history)} epochs.')

  report = TrainingReport(epochs=list(module.history))
  if output_dir is not None:
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)

    checkpoint = output_dir / CHECKPOINT_NAME
    save_model(checkpoint, module.model)
    report.checkpoint = str(checkpoint)
    (output_dir / REPORT_NAME).write_text(report.to_text())
    (output_dir / CONFIG_NAME).write_text(format_flat_config(cfg))
    print(f'=> Saved the checkpoint to {checkpoint}')

    if dm.corpus is not None:
      _, trials_path = export_heldout(dm.corpus, output_dir / 'heldout')
      print(f'=> Wrote held-out features and trials to {trials_path.parent}')

  if dm.corpus is not None:
    report.heldout = evaluate(module.model, dm.corpus.heldout_features, dm.corpus.heldout_labels)
    print(f'=> Held-out EER {100 * report.heldout.eer:.2f}%, minDCF {report.heldout.min_dcf:.4f}')

  return module, report


@hydra.main(version_base=None, config_name='config')
def main(cfg: DictConfig):
  # Re-resolve so presets sit beneath the command-line overrides.
  cfg = load_config(overrides=list(HydraConfig.get().overrides.task))

  print('=' * 80)
  print('Config')
  print('=' * 80)
  print(OmegaConf.to_yaml(cfg))
  print('=' * 80)

  fit(cfg, output_dir=HydraConfig.get().runtime.output_dir, progress=True)


if __name__ == '__main__':
  main()
