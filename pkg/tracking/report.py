"""CSV export of learning curves and the SVG strategy comparison."""

import io
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import matplotlib
import pandas as pd
from matplotlib.figure import Figure

from simulation.curves import LearningCurve
from simulation.errors import StoreError
from tracking.aggregate import SEED_COUNT, STATISTICS, AggregatedCurve, AggregatePoint
from tracking.store import RunStore

logger = logging.getLogger(__name__)

COLUMNS = ["step_index", "labeled_count", "metric", "value"]
AGGREGATE_STEP = "aggregate"
AGGREGATE_CSV = "aggregate.csv"
COMPARISON_SVG = "comparison.svg"
THRESHOLDS_CSV = "thresholds.csv"
DEFAULT_METRIC = "test_macro_f1"

_SVG_RC = {"svg.hashsalt": "learning-curves", "svg.fonttype": "none"}

Curve = Union[LearningCurve, AggregatedCurve]


def curve_frame(curve: Curve) -> pd.DataFrame:
    return pd.DataFrame(list(curve.rows()), columns=COLUMNS)


def _csv_bytes(frame: pd.DataFrame) -> bytes:
    return frame.to_csv(index=False, float_format="%.17g", lineterminator="\n").encode("utf-8")


def curve_to_csv(curve: LearningCurve) -> bytes:
    return _csv_bytes(curve_frame(curve))


def aggregate_to_csv(aggregate: AggregatedCurve) -> bytes:
    return _csv_bytes(curve_frame(aggregate))


def write_curve_csv(curve: Curve, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(_csv_bytes(curve_frame(curve)))
    return path


def read_curve_csv(source: Union[str, Path, bytes]) -> pd.DataFrame:
    if isinstance(source, bytes):
        source = io.BytesIO(source)
    frame = pd.read_csv(source, float_precision="round_trip")
    missing = [c for c in COLUMNS if c not in frame.columns]
    if missing:
        raise StoreError(f"curve csv lacks columns {missing}")
    return frame


def aggregate_from_csv(source: Union[str, Path, bytes], seeds: Sequence[int] = ()) -> AggregatedCurve:
    """Rebuild an aggregate; files without per-step seed counts fall back to ``len(seeds)``."""
    frame = read_curve_csv(source)
    points = []
    for (step_index, labeled_count), group in frame.groupby(["step_index", "labeled_count"], sort=True):
        values = {}
        seed_count = len(seeds)
        for name, value in zip(group["metric"], group["value"]):
            if name == SEED_COUNT:
                seed_count = int(value)
                continue
            metric, statistic = name.rsplit("_", 1)
            values.setdefault(metric, {})[statistic] = float(value)
        incomplete = [m for m, stats in values.items() if set(stats) != set(STATISTICS)]
        if incomplete:
            raise StoreError(f"aggregate csv lacks statistics for {incomplete[:3]} at step {step_index}")
        points.append(AggregatePoint(int(step_index), int(labeled_count), seed_count, values))
    return AggregatedCurve(tuple(seeds), tuple(points))


def threshold_crossings(aggregate: AggregatedCurve, metric: str, threshold: float) -> Optional[int]:
    """First labeled count at which the mean curve reaches ``threshold``."""
    for point in aggregate.points:
        if point.stat(metric, "mean") >= threshold:
            return point.labeled_count
    return None


def plot_comparison_svg(entries: Sequence[Tuple[str, AggregatedCurve]], metric: str = DEFAULT_METRIC) -> bytes:
    with matplotlib.rc_context(_SVG_RC):
        fig = Figure(figsize=(7.0, 4.5))
        ax = fig.add_subplot()
        for label, aggregate in entries:
            x = aggregate.labeled_counts()
            (line,) = ax.plot(x, aggregate.series(metric, "mean"), label=label, linewidth=1.5)
            ax.fill_between(
                x, aggregate.series(metric, "min"), aggregate.series(metric, "max"),
                color=line.get_color(), alpha=0.2, linewidth=0,
            )
        ax.set_xlabel("labeled documents")
        ax.set_ylabel(metric)
        ax.grid(alpha=0.3)
        if entries:
            ax.legend(loc="lower right")
        buffer = io.BytesIO()
        fig.savefig(buffer, format="svg", metadata={"Date": None})
    return buffer.getvalue()


def plot_comparison(
    entries: Sequence[Tuple[str, AggregatedCurve]], out: Union[str, Path], metric: str = DEFAULT_METRIC
) -> Path:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(plot_comparison_svg(entries, metric))
    return out


def load_aggregate(store: RunStore, run_id: str) -> Tuple[str, AggregatedCurve]:
    record = store.get_run(run_id)
    if record.step_name != AGGREGATE_STEP:
        raise StoreError(f"run {run_id} is a {record.step_name} run, not an aggregate")
    if not record.succeeded:
        raise StoreError(f"run {run_id} has status {record.status}")
    seeds = record.params.get("experiment", {}).get("seeds", ())
    aggregate = aggregate_from_csv(store.require_artifact(run_id, AGGREGATE_CSV), seeds)
    return record.params.get("teacher", {}).get("strategy", run_id), aggregate


def _blank(value):
    return "" if value is None else value


def write_report(
    store: RunStore,
    run_ids: Sequence[str],
    out_dir: Union[str, Path],
    threshold: Optional[float] = None,
    metric: str = DEFAULT_METRIC,
) -> List[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    loaded = [(run_id, *load_aggregate(store, run_id)) for run_id in run_ids]

    strategies = [strategy for _, strategy, _ in loaded]
    written = []
    entries = []
    for run_id, strategy, aggregate in loaded:
        label = strategy if strategies.count(strategy) == 1 else f"{strategy} ({run_id})"
        entries.append((label, aggregate))
        written.append(write_curve_csv(aggregate, out_dir / f"{run_id}.csv"))
    written.append(plot_comparison(entries, out_dir / COMPARISON_SVG, metric))

    if threshold is not None:
        rows = [
            (run_id, strategy, metric, threshold, _blank(threshold_crossings(aggregate, metric, threshold)))
            for run_id, strategy, aggregate in loaded
        ]
        frame = pd.DataFrame(rows, columns=["run_id", "strategy", "metric", "threshold", "labeled_count"])
        path = out_dir / THRESHOLDS_CSV
        frame.to_csv(path, index=False, lineterminator="\n")
        written.append(path)
        for run_id, strategy, _, _, count in rows:
            logger.info("%s (%s) reaches %s >= %s at %s labeled", run_id, strategy, metric, threshold, count)

    logger.info("wrote %d report files to %s", len(written), out_dir)
    return written
