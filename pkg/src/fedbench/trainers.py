"""Centralized, distributed and federated training loops.

All three paradigms share one round loop: start from a seeded global model,
do some work per round, evaluate on the test split and account for the bytes
that crossed the network. They differ only in who does the work:

* federated: a sampled fraction of participants trains locally, the server
  averages their models weighted by local example counts;
* distributed: same, but every participant takes part in every round;
* centralized: participants upload raw examples under a per-round byte
  budget and the server trains on the pool it has received so far.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import models
from .data import Dataset, PartitionPlan, subsample, subset
from .errors import ConfigError, InvalidInputError

PARADIGMS = ("centralized", "distributed", "federated")
BYTES_PER_FLOAT = 8
EVAL_TRAIN_SAMPLES = 1000
EVAL_SEED = 0

# stream tags keep the sampling and training RNG streams disjoint
_SAMPLE_STREAM = 1
_TRAIN_STREAM = 2


@dataclass(frozen=True)
class TrainerConfig:
    paradigm: str
    participants: int
    participation_ratio: float = 1.0
    rounds: int = 1
    local_epochs: int = 1
    batch_size: int = models.DEFAULT_BATCH_SIZE
    lr: float = models.DEFAULT_LR
    seed: int = 0
    upload_budget_bytes: int = 0

    def __post_init__(self):
        if self.paradigm not in PARADIGMS:
            raise ConfigError(f"unknown paradigm {self.paradigm!r}; expected one of {PARADIGMS}")
        if self.participants < 1:
            raise ConfigError(f"participants must be >= 1, got {self.participants}")
        if not 0.0 < self.participation_ratio <= 1.0:
            raise ConfigError(f"participation ratio must be in (0, 1], got {self.participation_ratio}")
        if self.rounds < 1 or self.local_epochs < 1 or self.batch_size < 1:
            raise ConfigError("rounds, local_epochs and batch_size must all be >= 1")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")

    @property
    def clients_per_round(self) -> int:
        return num_sampled(self.participants, self.participation_ratio)


@dataclass(eq=False)
class RoundResult:
    round: int
    global_params: np.ndarray
    train_loss: float
    test_accuracy: float
    bytes_up: int
    bytes_down: int
    active_clients: list[int]
    wall_ms: float = field(default=0.0)


def num_sampled(p: int, ratio: float) -> int:
    # round first so that e.g. 0.2 * 60 = 12.000000000000002 still gives 12
    return max(1, math.ceil(round(ratio * p, 9)))


def sample_clients(p: int, ratio: float, seed: int, round: int) -> list[int]:
    """Draw ceil(ratio * p) distinct participants for ``round``, sorted ascending."""
    m = num_sampled(p, ratio)
    if m >= p:
        return list(range(p))
    rng = np.random.default_rng([seed, _SAMPLE_STREAM, round])
    return sorted(int(k) for k in rng.choice(p, size=m, replace=False))


def client_seed(seed: int, round: int, client: int) -> int:
    """Seed for one participant's local training in one round."""
    state = np.random.SeedSequence([seed, _TRAIN_STREAM, round, client]).generate_state(1)
    return int(state[0])


def weighted_average(updates) -> np.ndarray:
    """Example-count weighted mean of parameter vectors.

    ``updates`` is a sequence of ``(params, n)`` pairs, consumed in the given
    order so results are bit-reproducible.
    """
    updates = list(updates)
    if not updates:
        raise InvalidInputError("cannot average an empty list of updates")
    vectors = [np.asarray(v, dtype=np.float64) for v, _ in updates]
    counts = [int(n) for _, n in updates]
    shape = vectors[0].shape
    if any(v.shape != shape for v in vectors):
        raise InvalidInputError("updates have mismatched parameter layouts")
    if any(n < 1 for n in counts):
        raise InvalidInputError("example counts must be positive")
    total = sum(counts)
    out = np.zeros(shape)
    for v, n in zip(vectors, counts):
        out += (n / total) * v
    # rounding in the weights can land a coordinate an ulp outside the inputs' range
    stacked = np.stack(vectors)
    return np.clip(out, stacked.min(axis=0), stacked.max(axis=0))


def evaluate_round(global_params, model_config: models.ModelConfig,
                   full_train: Dataset, test: Dataset) -> tuple[float, float]:
    """Train loss on a fixed 1000-example subsample, accuracy on the test split."""
    probe = subsample(full_train, EVAL_TRAIN_SAMPLES, EVAL_SEED)
    train_loss = models.loss(global_params, model_config, probe)
    accuracy, _ = models.evaluate(global_params, model_config, test)
    return train_loss, accuracy


def _check(config: TrainerConfig, expected: str, partition: PartitionPlan):
    if config.paradigm != expected:
        raise ConfigError(f"run_{expected} called with paradigm {config.paradigm!r}")
    if partition.num_participants != config.participants:
        raise ConfigError(
            f"partition has {partition.num_participants} participants, "
            f"config expects {config.participants}"
        )


def _averaging_loop(config, model_config, partition, full_train, test, choose, workers):
    client_data = [subset(full_train, idx) for idx in partition.assignments]
    payload = model_config.num_params * BYTES_PER_FLOAT
    theta = models.init_params(model_config, config.seed)
    results = []
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for r in range(1, config.rounds + 1):
            start = time.perf_counter()
            active = choose(r)
            start_params = theta

            def local(k, r=r, start_params=start_params):
                return models.train_local(
                    start_params, model_config, client_data[k], config.local_epochs,
                    config.batch_size, config.lr, client_seed(config.seed, r, k),
                )

            trained = list(pool.map(local, active)) if pool else [local(k) for k in active]
            theta = weighted_average(
                (params, len(client_data[k])) for k, params in zip(active, trained)
            )
            train_loss, accuracy = evaluate_round(theta, model_config, full_train, test)
            results.append(RoundResult(
                round=r, global_params=theta, train_loss=train_loss, test_accuracy=accuracy,
                bytes_up=len(active) * payload, bytes_down=len(active) * payload,
                active_clients=list(active),
                wall_ms=(time.perf_counter() - start) * 1000.0,
            ))
    finally:
        if pool:
            pool.shutdown()
    return results


def run_federated(config: TrainerConfig, model_config: models.ModelConfig,
                  train_partition: PartitionPlan, full_train: Dataset, test: Dataset,
                  workers: int = 1) -> list[RoundResult]:
    """FedAvg over sampled participants.

    ``workers > 1`` trains the selected clients on a thread pool; results are
    still aggregated in ascending client order, so the curve does not change.
    """
    _check(config, "federated", train_partition)
    p, ratio, seed = config.participants, config.participation_ratio, config.seed
    return _averaging_loop(config, model_config, train_partition, full_train, test,
                           lambda r: sample_clients(p, ratio, seed, r), workers)


def run_distributed(config: TrainerConfig, model_config: models.ModelConfig,
                    train_partition: PartitionPlan, full_train: Dataset, test: Dataset,
                    workers: int = 1) -> list[RoundResult]:
    """Synchronous weight averaging with every participant active each round."""
    _check(config, "distributed", train_partition)
    everyone = list(range(config.participants))
    return _averaging_loop(config, model_config, train_partition, full_train, test,
                           lambda r: everyone, workers)


def bytes_per_example(dim: int) -> int:
    """Raw upload size of one example: d float64 features plus a float64 label."""
    return BYTES_PER_FLOAT * dim + BYTES_PER_FLOAT


def run_centralized(config: TrainerConfig, model_config: models.ModelConfig,
                    train_partition: PartitionPlan, full_train: Dataset, test: Dataset,
                    workers: int = 1) -> list[RoundResult]:
    """Server-side training on data uploaded under a per-participant byte budget.

    Each round every participant uploads its next ``budget // bytes_per_example``
    examples, in the order of its partition list. The server then runs
    ``local_epochs`` epochs of SGD on everything received so far.
    """
    _check(config, "centralized", train_partition)
    per_example = bytes_per_example(full_train.dim)
    quota = config.upload_budget_bytes // per_example
    if quota < 1:
        raise ConfigError(
            f"upload budget of {config.upload_budget_bytes} bytes is smaller than one "
            f"example ({per_example} bytes)"
        )
    cursors = [0] * config.participants
    pooled: list[np.ndarray] = []
    pool_data = None
    theta = models.init_params(model_config, config.seed)
    results = []
    for r in range(1, config.rounds + 1):
        start = time.perf_counter()
        uploaded, active = 0, []
        for k, idx in enumerate(train_partition.assignments):
            chunk = idx[cursors[k]:cursors[k] + quota]
            if len(chunk):
                pooled.append(chunk)
                cursors[k] += len(chunk)
                uploaded += len(chunk)
                active.append(k)
        if uploaded or pool_data is None:
            if not pooled:
                raise InvalidInputError("no participant holds any training data")
            pool_data = subset(full_train, np.concatenate(pooled))
        theta = models.train_local(theta, model_config, pool_data, config.local_epochs,
                                   config.batch_size, config.lr,
                                   client_seed(config.seed, r, 0))
        train_loss, accuracy = evaluate_round(theta, model_config, full_train, test)
        results.append(RoundResult(
            round=r, global_params=theta, train_loss=train_loss, test_accuracy=accuracy,
            bytes_up=uploaded * per_example, bytes_down=0, active_clients=active,
            wall_ms=(time.perf_counter() - start) * 1000.0,
        ))
    return results


RUNNERS = {
    "centralized": run_centralized,
    "distributed": run_distributed,
    "federated": run_federated,
}


def run(config: TrainerConfig, model_config, train_partition, full_train, test, workers=1):
    return RUNNERS[config.paradigm](config, model_config, train_partition, full_train, test,
                                    workers=workers)
