"""Command-line entry point: ``fedbench run`` and ``fedbench compare``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import harness, models, trainers
from .errors import ConfigError, DataFormatError, InvalidInputError

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 1, 2

# flag name -> (argparse type, make_config keyword)
_OPTIONS = {
    "scenario": (int, None),
    "dataset": (str, "dataset"),
    "paradigm": (str, "paradigm"),
    "participants": (int, "participants"),
    "ratio": (float, "ratio"),
    "rounds": (int, "rounds"),
    "local-epochs": (int, "local_epochs"),
    "batch-size": (int, "batch_size"),
    "lr": (float, "lr"),
    "model": (str, "model"),
    "partition": (str, "partition"),
    "scale": (str, "scale"),
    "seed": (int, "seed"),
    "budget-bytes": (int, "budget_bytes"),
    "data-dir": (str, "data_dir"),
    "out": (str, "out_dir"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fedbench",
                     description="Centralized vs distributed vs federated convergence runs.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("run", "run one paradigm (a scenario or a single experiment)"),
                       ("compare", "run all three paradigms and print a summary table")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--scenario", type=int, choices=sorted(harness.SCENARIOS))
        p.add_argument("--dataset", choices=harness.DATASETS)
        if name == "run":
            p.add_argument("--paradigm", choices=trainers.PARADIGMS)
        p.add_argument("--participants", type=int)
        p.add_argument("--ratio", type=float)
        p.add_argument("--rounds", type=int)
        p.add_argument("--local-epochs", type=int)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--model", choices=models.KINDS)
        p.add_argument("--partition", choices=harness.PARTITION_SCHEMES)
        p.add_argument("--scale", choices=harness.SCALES)
        p.add_argument("--seed", type=int)
        p.add_argument("--budget-bytes", type=int)
        p.add_argument("--data-dir", help="defaults to $FEDBENCH_DATA_DIR, then ./data")
        p.add_argument("--out", help="output directory for curve CSVs (default: results)")
        p.add_argument("--config", help="key=value file; command-line flags take precedence")
        p.add_argument("--workers", type=int, default=1,
                       help="threads for per-client training within a round")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _settings(args) -> dict:
    """Merge config-file values under explicit command-line flags."""
    merged = {}
    if args.config:
        for key, raw in harness.parse_config_file(args.config).items():
            if key not in _OPTIONS:
                raise ConfigError(f"{args.config}: unknown key {key!r}")
            kind = _OPTIONS[key][0]
            try:
                merged[key] = kind(raw)
            except ValueError as exc:
                raise ConfigError(f"{args.config}: bad value for {key}: {raw!r}") from exc
    for key in _OPTIONS:
        value = getattr(args, key.replace("-", "_"), None)
        if value is not None:
            merged[key] = value
    return merged


def _configs(settings: dict, paradigm: str) -> list[harness.ExperimentConfig]:
    if "dataset" not in settings:
        raise ConfigError("--dataset is required")
    kwargs = {_OPTIONS[k][1]: v for k, v in settings.items()
              if _OPTIONS[k][1] not in (None, "dataset", "paradigm", "scale")}
    dataset = settings["dataset"]
    scale = settings.get("scale", "desk")
    if "scenario" in settings:
        return harness.scenario(settings["scenario"], dataset, paradigm, scale, **kwargs)
    return [harness.make_config(dataset, paradigm, scale, **kwargs)]


def _print_table(rows: list[dict]) -> None:
    header = f"{'run':<46} {'final_acc':>9} {'best_acc':>8} {'best_rnd':>8} {'MB_up':>10} {'MB_down':>10}"
    print(header)
    print("-" * len(header))
    for r in rows:
        print(f"{r['run_id']:<46} {r['final_accuracy']:>9.4f} {r['best_accuracy']:>8.4f} "
              f"{r['best_round']:>8d} {r['bytes_up'] / 1e6:>10.2f} {r['bytes_down'] / 1e6:>10.2f}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = _settings(args)
        if args.command == "run":
            paradigm = settings.get("paradigm", "federated")
            if paradigm not in trainers.PARADIGMS:
                raise ConfigError(f"unknown paradigm {paradigm!r}")
            configs = _configs(settings, paradigm)
        else:
            configs = [c for paradigm in trainers.PARADIGMS for c in _configs(settings, paradigm)]
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        rows = []
        for config in configs:
            summary = harness.run_experiment(config, workers=args.workers)
            rows.append(summary)
        _print_table(rows)
        for r in rows:
            print(f"wrote {r['csv']}")
    except (ConfigError, InvalidInputError) as exc:
        parser.print_usage(sys.stderr)
        print(f"fedbench: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, OSError) as exc:
        print(f"fedbench: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
