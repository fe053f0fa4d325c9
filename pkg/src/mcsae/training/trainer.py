import math
import torch

from typing import List
from lightning import LightningModule
from torch.optim import Optimizer, SGD
from torch.optim.lr_scheduler import ReduceLROnPlateau

from .. import tensor as T
from ..config import Config
from ..errors import TrainingError
from ..models import RandomMask, SpeakerNet
from ..typings import EpochRecord, StageOutputs


def sgd_step(optimizer: Optimizer):
  """One momentum-SGD update: v ← μ·v + g + wd·w, w ← w − lr·v.

  Raises TrainingError, leaving every parameter untouched, if any gradient is
  not finite.
  """
  for group in optimizer.param_groups:
    for p in group['params']:
      if p.grad is not None and not torch.isfinite(p.grad).all():
        raise TrainingError(f'Non-finite gradient for a parameter of shape {tuple(p.shape)}; step aborted')
  optimizer.step()


def plateau_step(scheduler: ReduceLROnPlateau, metric: float) -> float:
  """Feeds one epoch metric to the plateau scheduler and returns the new lr."""
  if not math.isfinite(metric):
    raise TrainingError(f'Plateau metric must be finite, got {metric}')
  scheduler.step(metric)
  return scheduler.optimizer.param_groups[0]['lr']


def clamp_mask_factors(model: torch.nn.Module):
  for module in model.modules():
    if isinstance(module, RandomMask):
      module.clamp_factor_()


def create_optimizer(params, cfg: Config) -> SGD:
  return SGD(
    params,
    lr=cfg.optim.lr,
    momentum=cfg.optim.momentum,
    weight_decay=cfg.optim.weight_decay,
  )


def create_scheduler(optimizer: Optimizer, cfg: Config) -> ReduceLROnPlateau:
  return ReduceLROnPlateau(
    optimizer,
    mode='min',
    factor=cfg.sched.factor,
    patience=cfg.sched.patience,
    threshold=cfg.sched.min_delta,
    threshold_mode='abs',
    min_lr=cfg.sched.min_lr,
  )


class SpeakerTrainer(LightningModule):
  scheduler: ReduceLROnPlateau

  def __init__(self, cfg: Config):
    super().__init__()
    self.cfg = cfg
    self.automatic_optimization = False

    self.model = SpeakerNet(cfg.model, cfg.mask, seed=cfg.seed)
    self.history: List[EpochRecord] = []
    self._reset_epoch_stats()

  def forward(self, x) -> StageOutputs:
    return self.model(x)

  def configure_optimizers(self):
    optimizer = create_optimizer(self.parameters(), self.cfg)
    # Stepped by hand once per epoch in on_train_epoch_end.
    self.scheduler = create_scheduler(optimizer, self.cfg)
    return optimizer

  def _reset_epoch_stats(self):
    self._loss_sum = 0.
    self._correct = 0
    self._count = 0

  def on_train_epoch_start(self):
    self._reset_epoch_stats()
    datamodule = getattr(self.trainer, 'datamodule', None)
    if datamodule is not None:
      datamodule.set_epoch(self.current_epoch)

  def training_step(self, batch, batch_idx):
    optimizer = self.optimizers()
    x, y = batch['features'], batch['label']
    batch_size = x.shape[0]

    outputs: StageOutputs = self(x)
    loss = T.cross_entropy(outputs.logits, y)
    if not torch.isfinite(loss):
      raise TrainingError(f'Loss became {loss.item()} at epoch {self.current_epoch + 1}, batch {batch_idx}')

    optimizer.zero_grad()
    self.manual_backward(loss)
    if self.cfg.optim.gradient_clip > 0:
      self.clip_gradients(optimizer, gradient_clip_val=self.cfg.optim.gradient_clip, gradient_clip_algorithm='norm')
    sgd_step(optimizer)
    clamp_mask_factors(self.model)

    correct = (outputs.logits.detach().argmax(dim=-1) == y).sum().item()
    self._loss_sum += loss.item() * batch_size
    self._correct += correct
    self._count += batch_size
    self.log('train/step_loss', loss.detach(), prog_bar=True, batch_size=batch_size)
    return loss

  def on_train_epoch_end(self):
    if self._count == 0:
      return
    loss = self._loss_sum / self._count
    accuracy = self._correct / self._count
    lr = self.scheduler.optimizer.param_groups[0]['lr']
    self.history.append(EpochRecord(epoch=self.current_epoch + 1, lr=lr, loss=loss, accuracy=accuracy))

    # Consumed by EarlyStopping, which runs after this hook.
    self.log('train/loss', loss, on_epoch=True)
    self.log('train/acc', accuracy, on_epoch=True)
    self.log('train/lr', lr, on_epoch=True)

    plateau_step(self.scheduler, loss)
