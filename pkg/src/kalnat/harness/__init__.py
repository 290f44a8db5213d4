"""Synthetic few-shot task, training runs, sweeps and checkpoints."""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, load_config
from .data import corrupt_batch, gen_synthetic_pairs, retrieval_accuracy
from .experiment import run_experiment, sgd_baseline_step, sweep

__all__ = [
    "load_checkpoint",
    "save_checkpoint",
    "ExperimentConfig",
    "load_config",
    "corrupt_batch",
    "gen_synthetic_pairs",
    "retrieval_accuracy",
    "run_experiment",
    "sgd_baseline_step",
    "sweep",
]
