"""Convergence curves, communication totals and CSV export."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

CSV_COLUMNS = ("round", "train_loss", "test_accuracy", "bytes_up", "bytes_down", "wall_ms")


class RoundRecord(NamedTuple):
    round: int
    train_loss: float
    test_accuracy: float
    bytes_up: int
    bytes_down: int
    wall_ms: float = 0.0


@dataclass(frozen=True)
class ConvergenceCurve:
    run_id: str
    records: tuple[RoundRecord, ...]
    config_echo: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        rounds = [rec.round for rec in self.records]
        if rounds != list(range(1, len(rounds) + 1)):
            raise ValueError(f"curve {self.run_id!r}: rounds must run 1..R, got {rounds[:5]}...")

    @classmethod
    def from_results(cls, run_id: str, results, config_echo=None) -> ConvergenceCurve:
        records = tuple(
            RoundRecord(r.round, float(r.train_loss), float(r.test_accuracy),
                        int(r.bytes_up), int(r.bytes_down), float(r.wall_ms))
            for r in results
        )
        return cls(run_id, records, dict(config_echo or {}))

    def __len__(self):
        return len(self.records)

    @property
    def final_accuracy(self) -> float:
        return self.records[-1].test_accuracy

    def concat(self, other: ConvergenceCurve) -> ConvergenceCurve:
        """Append ``other`` as later rounds of this curve."""
        offset = len(self.records)
        shifted = tuple(rec._replace(round=rec.round + offset) for rec in other.records)
        return dataclasses.replace(self, records=self.records + shifted)


def cumulative_bytes(curve: ConvergenceCurve) -> tuple[int, int]:
    up = sum(rec.bytes_up for rec in curve.records)
    down = sum(rec.bytes_down for rec in curve.records)
    return up, down


def best_accuracy(curve: ConvergenceCurve) -> tuple[int, float]:
    """Earliest round reaching the highest test accuracy."""
    if not curve.records:
        raise ValueError("best_accuracy needs a non-empty curve")
    best = curve.records[0]
    for rec in curve.records[1:]:
        if rec.test_accuracy > best.test_accuracy:
            best = rec
    return best.round, best.test_accuracy


def _fmt(value: float) -> str:
    return f"{value:.6g}"


def format_rows(curve: ConvergenceCurve, include_wall: bool = True) -> list[str]:
    lines = [",".join(CSV_COLUMNS if include_wall else CSV_COLUMNS[:-1])]
    for rec in curve.records:
        cells = [str(rec.round), _fmt(rec.train_loss), _fmt(rec.test_accuracy),
                 str(rec.bytes_up), str(rec.bytes_down)]
        if include_wall:
            cells.append(_fmt(rec.wall_ms))
        lines.append(",".join(cells))
    return lines


def export_csv(curve: ConvergenceCurve, path) -> Path:
    path = Path(path)
    text = "\n".join(format_rows(curve)) + "\n"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"could not write curve to {path}: {exc}") from exc
    return path
