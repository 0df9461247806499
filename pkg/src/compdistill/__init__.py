"""Competitive distillation: cohort training where the best network of each mini-batch teaches the rest."""
from .cohort import (Cohort, CohortStep, RunReport, competitive_step, dml_step, elect_teacher,
                     independent_step, make_cohort, train)
from .config import RunConfig, StrategySpec, load_config, load_datasets
from .data import Dataset, batches, load_cifar_bin, load_idx, make_blobs
from .errors import (CompDistillError, ConfigError, DimensionError, FormatError, GradcheckError,
                     TrainingDivergedError)
from .losses import LossWeights, cross_entropy, feature_l2, kl_distill, student_loss, teacher_loss
from .nn import ArchSpec, NetworkState, OptimConfig, backward, forward, init_network, sgd_step
from .perturb import PerturbConfig, PerturbEvent, select_mutation_target, stochastic_perturb

__version__ = "0.1.0"
