"""Convergence comparison of centralized, distributed and federated training."""

from .data import (Dataset, PartitionPlan, generate_synthetic, load_cifar10, load_mnist,
                   partition_iid, partition_shards, subset)
from .errors import ConfigError, DataFormatError, FedBenchError, InvalidInputError
from .metrics import ConvergenceCurve, best_accuracy, cumulative_bytes, export_csv
from .models import ModelConfig, evaluate, gradient, init_params, loss, train_local
from .trainers import (RoundResult, TrainerConfig, run_centralized, run_distributed,
                       run_federated, sample_clients, weighted_average)

__version__ = "0.1.0"
