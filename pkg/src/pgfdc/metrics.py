"""Per-iteration learning-curve rows and their CSV encoding."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

CSV_COLUMNS = (
    "iteration",
    "env_steps",
    "mean_return",
    "mean_r_d",
    "mean_r_c",
    "ppo_policy_loss",
    "ppo_value_loss",
    "entropy",
    "disc_objective",
    "l_ei",
    "l_f",
)

NAN = float("nan")


@dataclass
class MetricsRow:
    iteration: int
    env_steps: int
    mean_return: float
    mean_r_d: float = 0.0
    mean_r_c: float = 0.0
    ppo_policy_loss: float = NAN
    ppo_value_loss: float = NAN
    entropy: float = NAN
    disc_objective: float = NAN
    l_ei: float = NAN
    l_f: float = NAN
    episodes: int = 0
    wall_clock: float = 0.0

    def csv_values(self) -> list[str]:
        return [_fmt(getattr(self, c)) for c in CSV_COLUMNS]

    def same_values(self, other: "MetricsRow") -> bool:
        """Equality over the CSV columns, treating NaN as equal to NaN."""
        for c in CSV_COLUMNS:
            a, b = getattr(self, c), getattr(other, c)
            if isinstance(a, float) and math.isnan(a):
                if not (isinstance(b, float) and math.isnan(b)):
                    return False
            elif a != b:
                return False
        return True


def _fmt(v) -> str:
    if isinstance(v, int):
        return str(v)
    return format(float(v), ".17g")


def write_metrics_csv(rows, path: str | Path) -> None:
    """Header plus one line per iteration; floats carry 17 significant digits.

    Wall-clock time is deliberately excluded so reruns compare byte-for-byte.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(CSV_COLUMNS)
        for row in rows:
            w.writerow(row.csv_values())


def read_metrics_csv(path: str | Path) -> list[MetricsRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        rows = []
        for rec in reader:
            kw = {c: float(rec[c]) for c in CSV_COLUMNS}
            kw["iteration"] = int(rec["iteration"])
            kw["env_steps"] = int(rec["env_steps"])
            rows.append(MetricsRow(**kw))
    return rows


def write_timing_csv(rows, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(("iteration", "episodes", "wall_clock"))
        for r in rows:
            w.writerow((r.iteration, r.episodes, f"{r.wall_clock:.6f}"))


__all__ = ["CSV_COLUMNS", "MetricsRow", "read_metrics_csv", "write_metrics_csv", "write_timing_csv"]
