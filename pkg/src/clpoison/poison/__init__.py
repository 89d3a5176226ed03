"""Attack engines: PGD core, noise gradients, AP/EMP attacks and baselines."""

from .attacks import (
    ATTACK_SCHEDULES,
    ATTACK_TYPES,
    AttackSchedule,
    ClassifierConfig,
    attack_ap_cl,
    attack_ap_supervised,
    attack_emp_cl_class,
    attack_emp_cl_sample,
    attack_emp_supervised,
    default_schedule,
    train_classifier,
)
from .gradients import classwise_noise_gradient, noise_gradient, noise_loss
from .pgd import EPSILON_DEFAULT, PgdConfig, pgd_step, project_ball

__all__ = [
    "ATTACK_SCHEDULES",
    "ATTACK_TYPES",
    "AttackSchedule",
    "ClassifierConfig",
    "EPSILON_DEFAULT",
    "PgdConfig",
    "attack_ap_cl",
    "attack_ap_supervised",
    "attack_emp_cl_class",
    "attack_emp_cl_sample",
    "attack_emp_supervised",
    "classwise_noise_gradient",
    "default_schedule",
    "noise_gradient",
    "noise_loss",
    "pgd_step",
    "project_ball",
    "train_classifier",
]
