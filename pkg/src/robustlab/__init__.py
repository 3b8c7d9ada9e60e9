"""Desk-scale adversarial training lab: PGD/FGSM training, schedules, regularizers,
early stopping and robust-overfitting measurements on small datasets."""
from .attacks import AttackSpec, PerturbationModel, attack, fgsm_attack, pgd_attack, project
from .nets import Model, ModelSpec, build, forward, penalizable_params
from .schedules import ScheduleSpec, lr_at
from .tensor import Tape, Tensor, backward
from .trainer import TrainConfig, TrainData, evaluate, gap_report, select_early_stop, train

__version__ = "0.1.0"
