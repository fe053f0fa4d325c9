from .data import SpeakerDataModule, SynthSpec, gen_synthetic
from .evaluate import evaluate
from .train import fit
from .trainer import SpeakerTrainer, plateau_step, sgd_step
