"""Scenario registry and the experiment pipeline.

An experiment is load -> partition -> train -> test: the dataset is loaded
(and subsampled at desk scale), split across participants, handed to the
configured trainer, and the resulting curve is written as CSV.
"""

from __future__ import annotations

import dataclasses
import functools
import logging
import os
from dataclasses import dataclass
from pathlib import Path

from . import data as datamod
from . import metrics, models, trainers
from .errors import ConfigError

log = logging.getLogger(__name__)

DATASETS = ("mnist", "cifar10", "synthetic")
SCALES = ("paper", "desk")
PARTITION_SCHEMES = ("iid", "shards")

DATASET_SHAPES = {  # input_dim, num_classes, in_channels
    "mnist": (784, 10, 1),
    "cifar10": (3072, 10, 3),
    "synthetic": (64, 10, 1),
}
SYNTHETIC_SEPARATION = 3.0

DESK_TRAIN = 6000
DESK_TEST = 1000
PAPER_SYNTHETIC = (60000, 10000)

# participants, participation ratio, rounds
SCENARIOS = {
    1: [(50, 0.2, 100)],
    2: [(50, 0.2, 200)],
    3: [(p, 0.2, 100) for p in (20, 40, 60, 80, 100)],
}
LOCAL_EPOCHS = 10
CENTRALIZED_EPOCHS = 1
BUDGET_EXAMPLES = 25
DEFAULT_SHARDS_PER_CLIENT = 2


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str
    model: models.ModelConfig
    trainer: trainers.TrainerConfig
    partition_scheme: str = "shards"
    shards_per_client: int = DEFAULT_SHARDS_PER_CLIENT
    scale: str = "desk"
    out_dir: Path = Path("results")
    scenario: int | None = None
    data_dir: Path | None = None

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ConfigError(f"unknown dataset {self.dataset!r}; expected one of {DATASETS}")
        if self.scale not in SCALES:
            raise ConfigError(f"unknown scale {self.scale!r}; expected one of {SCALES}")
        if self.partition_scheme not in PARTITION_SCHEMES:
            raise ConfigError(f"unknown partition scheme {self.partition_scheme!r}")
        dim, classes, _ = DATASET_SHAPES[self.dataset]
        if (self.model.input_dim, self.model.num_classes) != (dim, classes):
            raise ConfigError(
                f"model expects {self.model.input_dim} features / {self.model.num_classes} "
                f"classes but {self.dataset} has {dim} / {classes}"
            )
        if self.trainer.paradigm == "centralized":
            need = trainers.bytes_per_example(dim)
            if self.trainer.upload_budget_bytes < need:
                raise ConfigError(
                    f"centralized upload budget {self.trainer.upload_budget_bytes} is below "
                    f"one example ({need} bytes)"
                )

    @property
    def run_id(self) -> str:
        tag = f"s{self.scenario}" if self.scenario is not None else "custom"
        t = self.trainer
        return f"{tag}_{self.dataset}_{t.paradigm}_p{t.participants}_{self.scale}_seed{t.seed}"

    @property
    def csv_path(self) -> Path:
        return Path(self.out_dir) / f"{self.run_id}.csv"

    def echo(self) -> dict:
        out = {"dataset": self.dataset, "scale": self.scale, "scenario": self.scenario,
               "partition_scheme": self.partition_scheme,
               "shards_per_client": self.shards_per_client}
        out.update({f"model.{k}": v for k, v in dataclasses.asdict(self.model).items()})
        out.update(dataclasses.asdict(self.trainer))
        return out


def default_data_dir() -> Path:
    return Path(os.environ.get("FEDBENCH_DATA_DIR", "data"))


def default_budget(dataset: str) -> int:
    """Centralized per-participant, per-round upload budget: 25 examples' worth."""
    return BUDGET_EXAMPLES * trainers.bytes_per_example(DATASET_SHAPES[dataset][0])


def model_for(dataset: str, kind: str, hidden_dim: int = 64, conv_channels: int = 8):
    dim, classes, channels = DATASET_SHAPES[dataset]
    return models.ModelConfig(kind, dim, classes, hidden_dim=hidden_dim,
                              conv_channels=conv_channels, in_channels=channels)


def make_config(dataset: str, paradigm: str, scale: str = "desk", *,
                participants: int = 50, ratio: float = 0.2, rounds: int = 100,
                local_epochs: int | None = None, batch_size: int = models.DEFAULT_BATCH_SIZE,
                lr: float = models.DEFAULT_LR, seed: int = 0, budget_bytes: int | None = None,
                model: str | None = None, partition: str = "shards",
                shards_per_client: int = DEFAULT_SHARDS_PER_CLIENT,
                scenario: int | None = None, out_dir="results", data_dir=None,
                ) -> ExperimentConfig:
    """Build one experiment, filling paradigm- and scale-dependent defaults."""
    if dataset not in DATASETS:
        raise ConfigError(f"unknown dataset {dataset!r}; expected one of {DATASETS}")
    if local_epochs is None:
        local_epochs = CENTRALIZED_EPOCHS if paradigm == "centralized" else LOCAL_EPOCHS
    if budget_bytes is None:
        budget_bytes = default_budget(dataset) if paradigm == "centralized" else 0
    if model is None:
        model = "mlp" if scale == "desk" else "cnn-small"
    trainer = trainers.TrainerConfig(
        paradigm=paradigm, participants=participants, participation_ratio=ratio,
        rounds=rounds, local_epochs=local_epochs, batch_size=batch_size, lr=lr,
        seed=seed, upload_budget_bytes=budget_bytes,
    )
    return ExperimentConfig(
        dataset=dataset, model=model_for(dataset, model), trainer=trainer,
        partition_scheme=partition, shards_per_client=shards_per_client, scale=scale,
        out_dir=Path(out_dir), scenario=scenario,
        data_dir=Path(data_dir) if data_dir is not None else None,
    )


def scenario(scenario_id: int, dataset: str, paradigm: str, scale: str = "paper",
             **overrides) -> list[ExperimentConfig]:
    """Configurations for one of the three comparison scenarios.

    Desk scale halves the number of rounds (and ``run_experiment`` swaps in
    6000/1000-example subsamples).
    """
    if scenario_id not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario_id!r}; expected 1, 2 or 3")
    if scale not in SCALES:
        raise ConfigError(f"unknown scale {scale!r}; expected one of {SCALES}")
    configs = []
    for p, ratio, rounds in SCENARIOS[scenario_id]:
        if scale == "desk":
            rounds //= 2
        params = {"participants": p, "ratio": ratio, "rounds": rounds}
        params.update({k: v for k, v in overrides.items() if v is not None})
        configs.append(make_config(dataset, paradigm, scale, scenario=scenario_id, **params))
    return configs


@functools.lru_cache(maxsize=4)
def _load_full(dataset: str, data_dir: str, scale: str):
    root = Path(data_dir)
    if dataset == "mnist":
        return datamod.load_mnist(root)
    if dataset == "cifar10":
        return datamod.load_cifar10(root)
    n_train, n_test = (DESK_TRAIN, DESK_TEST) if scale == "desk" else PAPER_SYNTHETIC
    dim, classes, _ = DATASET_SHAPES["synthetic"]
    blob = datamod.generate_synthetic(n_train + n_test, dim, classes, SYNTHETIC_SEPARATION, 0)
    return (datamod.subset(blob, range(n_train)),
            datamod.subset(blob, range(n_train, n_train + n_test)))


def load_datasets(config: ExperimentConfig) -> tuple[datamod.Dataset, datamod.Dataset]:
    data_dir = config.data_dir if config.data_dir is not None else default_data_dir()
    train, test = _load_full(config.dataset, str(data_dir), config.scale)
    if config.scale == "desk":
        seed = config.trainer.seed
        train = datamod.subsample(train, DESK_TRAIN, seed)
        test = datamod.subsample(test, DESK_TEST, seed)
    return train, test


def make_partition(config: ExperimentConfig, train: datamod.Dataset) -> datamod.PartitionPlan:
    p, seed = config.trainer.participants, config.trainer.seed
    if config.partition_scheme == "iid":
        return datamod.partition_iid(train, p, seed)
    return datamod.partition_shards(train, p, config.shards_per_client, seed)


def run_experiment(config: ExperimentConfig, workers: int = 1, write: bool = True) -> dict:
    """Run one experiment end to end and write its curve CSV.

    Returns a summary with final/best accuracy and total bytes moved.
    """
    train, test = load_datasets(config)
    plan = make_partition(config, train)
    log.info("running %s (%d train / %d test examples)", config.run_id, len(train), len(test))
    results = trainers.run(config.trainer, config.model, plan, train, test, workers=workers)
    curve = metrics.ConvergenceCurve.from_results(config.run_id, results, config.echo())
    best_round, best = metrics.best_accuracy(curve)
    up, down = metrics.cumulative_bytes(curve)
    summary = {
        "run_id": config.run_id,
        "paradigm": config.trainer.paradigm,
        "participants": config.trainer.participants,
        "rounds": len(curve),
        "final_accuracy": curve.final_accuracy,
        "best_round": best_round,
        "best_accuracy": best,
        "bytes_up": up,
        "bytes_down": down,
        "curve": curve,
        "params": results[-1].global_params,
    }
    if write:
        summary["csv"] = metrics.export_csv(curve, config.csv_path)
    return summary


def parse_config_file(path) -> dict[str, str]:
    """Read ``key = value`` lines; ``#`` starts a comment. Keys use CLI flag names."""
    entries = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        entries[key.strip().lstrip("-").replace("_", "-")] = value.strip()
    return entries
