"""Federated training loop, synthetic tasks and convergence-bound evaluation."""

from .tasks import FederatedTask, LossModel, generate_synthetic_task
from .training import (HeterogeneityProfile, LinkConfig, RoundRecord, TrainingAborted,
                       TrainingConfig, TrainingRun, aggregate_round,
                       assign_heterogeneous_batches, ideal_orthogonal_aggregate, local_sgd,
                       run_federated_training)

__all__ = [
    "FederatedTask", "LossModel", "generate_synthetic_task", "HeterogeneityProfile",
    "LinkConfig", "RoundRecord", "TrainingAborted", "TrainingConfig", "TrainingRun",
    "aggregate_round", "assign_heterogeneous_batches", "ideal_orthogonal_aggregate",
    "local_sgd", "run_federated_training",
]
