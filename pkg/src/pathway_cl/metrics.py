"""Stability, plasticity and forgetting measurements."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

from .errors import ConfigError, DegenerateNormalizationError


@dataclass(frozen=True)
class LossTriple:
    loss_current: float  # task-i loss after training through task t
    loss_snapshot: float  # task-i loss right after training task i
    loss_random: float  # task-i loss of randomly initialized networks

    @property
    def degenerate(self) -> bool:
        """Random baseline is not worse than the snapshot; normalization is meaningless."""
        return not self.loss_random > self.loss_snapshot


class Stability(NamedTuple):
    value: float  # clamped to [0, 1]
    raw: float


def stability_ratio(triple: LossTriple) -> Stability:
    denom = triple.loss_random - triple.loss_snapshot
    if denom == 0:
        raise DegenerateNormalizationError("random-baseline loss equals snapshot loss")
    raw = 1.0 - (triple.loss_current - triple.loss_snapshot) / denom
    return Stability(min(1.0, max(0.0, raw)), raw)


def average_stability(values: Sequence[float]) -> float:
    """Mean of ``S_{i,t}`` over the ``t-1`` earlier tasks."""
    values = list(values)
    if not values:
        raise ConfigError("stability is undefined before the second task")
    return math.fsum(values) / len(values)


def plasticity_ratio(loss_random: float, loss_after: float, loss_before: float) -> float:
    """Fraction of the random-to-warm-start gap realized on the new task; reported raw."""
    denom = loss_random - loss_before
    if denom == 0:
        raise DegenerateNormalizationError("random-baseline loss equals pre-training loss")
    return (loss_random - loss_after) / denom


def forgetting(loss_after_t: float, loss_at_snapshot: float) -> float:
    return loss_after_t - loss_at_snapshot


def pareto_dominates(points_a, points_b) -> bool:
    """True when every point of ``points_b`` is weakly dominated by some point of ``points_a``."""
    return all(any(sa >= sb and pa >= pb for sa, pa in points_a) for sb, pb in points_b)


METRIC_COLUMNS = ("run", "method", "i", "t", "metric", "value")


@dataclass
class MetricsReport:
    """Long-format metric rows ``(i, t, metric, value)``; ``i`` is -1 for per-t metrics."""

    rows: list = field(default_factory=list)

    def add(self, i: int, t: int, metric: str, value: float) -> None:
        self.rows.append((int(i), int(t), metric, float(value)))

    def get(self, metric: str, t: int, i: int = -1):
        for ri, rt, m, v in self.rows:
            if m == metric and rt == t and ri == i:
                return v
        return None

    def series(self, metric: str, i: int = -1):
        """``[(t, value)]`` for one metric, ordered by t."""
        return sorted((rt, v) for ri, rt, m, v in self.rows if m == metric and ri == i)

    def to_csv(self, run: str, method: str) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for i, t, m, v in self.rows:
            w.writerow([run, method, i, t, m, repr(v)])
        return buf.getvalue()

    def to_list(self) -> list:
        return [list(r) for r in self.rows]

    @classmethod
    def from_list(cls, rows) -> "MetricsReport":
        return cls([(int(i), int(t), str(m), float(v)) for i, t, m, v in rows])
