from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

from simulation.trainer import EvaluationReport

LABELED_COUNT = "labeled_count"
RUNNING, FINISHED, FAILED = "running", "finished", "failed"


@dataclass(frozen=True)
class CurvePoint:
    step_index: int
    labeled_count: int
    dev_report: EvaluationReport
    test_report: EvaluationReport

    def metrics(self) -> Dict[str, float]:
        return {**self.dev_report.metrics(), **self.test_report.metrics()}


@dataclass
class LearningCurve:
    seed: int
    points: List[CurvePoint] = field(default_factory=list)
    status: str = RUNNING

    def __len__(self) -> int:
        return len(self.points)

    def labeled_counts(self) -> List[int]:
        return [point.labeled_count for point in self.points]

    def series(self, metric: str) -> List[float]:
        return [point.metrics()[metric] for point in self.points]

    def rows(self) -> Iterable[Tuple[int, int, str, float]]:
        for point in self.points:
            for name, value in point.metrics().items():
                yield point.step_index, point.labeled_count, name, value

    def same_as(self, other: "LearningCurve") -> bool:
        return self.seed == other.seed and list(self.rows()) == list(other.rows())


def curve_from_rows(
    seed: int, rows: Iterable[Tuple[int, str, float]], label_names: Sequence[str], status: str = FINISHED
) -> LearningCurve:
    """Rebuild a curve from stored ``(step_index, name, value)`` metric rows."""
    by_step: "OrderedDict[int, Dict[str, float]]" = OrderedDict()
    for step_index, name, value in rows:
        by_step.setdefault(step_index, {})[name] = value

    points = []
    for step_index, values in sorted(by_step.items()):
        labeled_count = int(values[LABELED_COUNT])
        points.append(CurvePoint(
            step_index=step_index,
            labeled_count=labeled_count,
            dev_report=EvaluationReport.from_metrics("dev", labeled_count, label_names, values),
            test_report=EvaluationReport.from_metrics("test", labeled_count, label_names, values),
        ))
    return LearningCurve(seed, points, status)
