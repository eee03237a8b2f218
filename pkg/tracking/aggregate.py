"""Seed-run aggregation: per-step mean, min, max and std across seeds."""

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from simulation.curves import LearningCurve
from simulation.errors import AlignmentError

logger = logging.getLogger(__name__)

STATISTICS = ("mean", "min", "max", "std")
SEED_COUNT = "seed_count"


@dataclass(frozen=True)
class AggregatePoint:
    step_index: int
    labeled_count: int
    seed_count: int
    values: Dict[str, Dict[str, float]]

    def stat(self, metric: str, statistic: str = "mean") -> float:
        return self.values[metric][statistic]


@dataclass(frozen=True)
class AggregatedCurve:
    seeds: Tuple[int, ...]
    points: Tuple[AggregatePoint, ...]

    def __len__(self) -> int:
        return len(self.points)

    def labeled_counts(self) -> List[int]:
        return [point.labeled_count for point in self.points]

    def series(self, metric: str, statistic: str = "mean") -> np.ndarray:
        return np.array([point.stat(metric, statistic) for point in self.points], dtype=np.float64)

    def rows(self) -> Iterable[Tuple[int, int, str, float]]:
        for point in self.points:
            yield point.step_index, point.labeled_count, SEED_COUNT, float(point.seed_count)
            for metric, stats in point.values.items():
                for statistic in STATISTICS:
                    yield point.step_index, point.labeled_count, f"{metric}_{statistic}", stats[statistic]


def _check_grid(step_index: int, counts: Dict[int, int]) -> int:
    tally = Counter(counts.values())
    if len(tally) == 1:
        return next(iter(tally))
    expected = tally.most_common(1)[0][0]
    offending = [seed for seed, count in counts.items() if count != expected]
    raise AlignmentError(f"labeled counts disagree at step {step_index}", offending)


def aggregate_seed_runs(curves: Sequence[LearningCurve]) -> AggregatedCurve:
    if not curves:
        raise AlignmentError("no seed runs to aggregate")
    curves = sorted(curves, key=lambda curve: curve.seed)

    by_step: Dict[int, List[Tuple[int, int, Dict[str, float]]]] = {}
    for curve in curves:
        for point in curve.points:
            by_step.setdefault(point.step_index, []).append((curve.seed, point.labeled_count, point.metrics()))

    points = []
    for step_index in sorted(by_step):
        entries = by_step[step_index]
        labeled_count = _check_grid(step_index, {seed: count for seed, count, _ in entries})
        values = {}
        for metric in entries[0][2]:
            column = np.array([m[metric] for _, _, m in entries], dtype=np.float64)
            values[metric] = {
                "mean": float(np.mean(column)),
                "min": float(np.min(column)),
                "max": float(np.max(column)),
                "std": float(np.std(column)),
            }
        points.append(AggregatePoint(step_index, labeled_count, len(entries), values))

    logger.debug("aggregated %d seed runs over %d steps", len(curves), len(points))
    return AggregatedCurve(tuple(curve.seed for curve in curves), tuple(points))
