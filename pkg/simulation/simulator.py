"""Seed runs of the simulated annotation cycle and their orchestration.

One seed run: the initial strategy picks the cold-start set, the oracle
labels it, the trainer fits and is evaluated (curve point 0). Then each
propose step clamps step size and budget to the remaining pool, asks the
teacher for ids, labels them, retrains on everything labeled so far and
evaluates again.

With a store attached every step is persisted in the order proposals,
checkpoint, metrics. The metrics line is the commit marker a resume reads.
"""

import hashlib
import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from scipy import sparse

from simulation.config import FINGERPRINT_SECTIONS, ExperimentConfig, scoped_fingerprint
from simulation.corpus import AnnotationState, DatasetSplit, Oracle, mark_labeled, require_classification
from simulation.curves import FAILED, FINISHED, LABELED_COUNT, RUNNING, CurvePoint, LearningCurve, curve_from_rows
from simulation.errors import (
    CorruptArtifactError,
    ExperimentFailed,
    FingerprintMismatchError,
    Interrupted,
    ProposalError,
    SeedRunFailed,
    UnknownStrategyError,
)
from simulation.featurize import Vocabulary, corpus_matrix, fit_vocabulary
from simulation.settings import MIN_STEP_SIZE
from simulation.teachers import TEACHERS, BaseTeacher, CorpusView, check_proposal, clamp_context, create_teacher
from simulation.trainer import TRAINERS, BaseTrainer, create_trainer
from tracking.aggregate import AggregatedCurve, aggregate_seed_runs
from tracking.report import (
    AGGREGATE_CSV,
    AGGREGATE_STEP,
    aggregate_from_csv,
    aggregate_to_csv,
    curve_to_csv,
    plot_comparison_svg,
)
from tracking.store import FAILED as RUN_FAILED
from tracking.store import RUNNING as RUN_RUNNING
from tracking.store import SUCCESS as RUN_SUCCESS
from tracking.store import ArtifactRef, RunStore

logger = logging.getLogger(__name__)

CHECKPOINT_DIR = "checkpoints"
CURVE_CSV = "curve.csv"
AGGREGATE_SVG = "learning_curve.svg"

# stopping rules and the seed list never change what a given seed computes
_RNG_EXCLUDE = ("experiment.seeds", "experiment.max_steps", "experiment.stop_threshold")
_SEED_RUN_EXCLUDE = ("experiment.seeds",)


def simulation_fingerprint(cfg: ExperimentConfig) -> str:
    return scoped_fingerprint(cfg, FINGERPRINT_SECTIONS, exclude=_RNG_EXCLUDE)


def seed_run_fingerprint(cfg: ExperimentConfig, seed: int, corpus_digest: str) -> str:
    return scoped_fingerprint(
        cfg, FINGERPRINT_SECTIONS, exclude=_SEED_RUN_EXCLUDE, extra={"corpus": corpus_digest, "seed": seed}
    )


def aggregate_fingerprint(cfg: ExperimentConfig, corpus_digest: str) -> str:
    return scoped_fingerprint(cfg, FINGERPRINT_SECTIONS, extra={"corpus": corpus_digest})


def seed_step_name(seed: int) -> str:
    return f"seed_run({seed})"


def derive_rng(fingerprint: str, seed: int, tag: str, *extra) -> np.random.Generator:
    material = "|".join([fingerprint, str(seed), tag, *(str(e) for e in extra)])
    entropy = int.from_bytes(hashlib.sha256(material.encode("utf-8")).digest()[:16], "little")
    return np.random.default_rng(entropy)


def check_registries(cfg: ExperimentConfig) -> None:
    for key, name in (("strategy", cfg.teacher.strategy), ("initial_strategy", cfg.teacher.initial_strategy)):
        if name not in TEACHERS:
            known = ", ".join(sorted(TEACHERS))
            raise UnknownStrategyError(f"teacher.{key}: unknown strategy '{name}' (known: {known})")
    if cfg.trainer.name not in TRAINERS:
        raise UnknownStrategyError(f"trainer.name: unknown trainer '{cfg.trainer.name}'")


def checkpoint_name(step_index: int) -> str:
    return f"{CHECKPOINT_DIR}/{step_index:05d}.bin"


def initial_size(cfg: ExperimentConfig, pool_size: int) -> int:
    # rounding first keeps 0.05 * 100 at 5 instead of 6
    return min(pool_size, math.ceil(round(cfg.experiment.initial_ratio * pool_size, 9)))


def resolve_step_size(cfg: ExperimentConfig, pool_size: int) -> int:
    """``experiment.step_ratio``, when set, is taken relative to the train split."""
    exp = cfg.experiment
    if exp.step_ratio is None:
        return exp.step_size
    return max(MIN_STEP_SIZE, math.ceil(round(exp.step_ratio * pool_size, 9)))


@dataclass(frozen=True, eq=False)
class PreparedCorpus:
    """Converted split plus the id-indexed feature matrix fitted on train."""

    split: DatasetSplit
    vocabulary: Vocabulary
    features: sparse.csr_matrix
    digest: str = ""
    gold_labels: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.gold_labels is None:
            labels = np.zeros(self.features.shape[0], dtype=np.int64)
            for doc in self.split.documents():
                labels[doc.id] = doc.gold_label
            object.__setattr__(self, "gold_labels", labels)

    @property
    def label_names(self):
        return self.split.label_names

    def train_ids(self) -> List[int]:
        return self.split.train_ids()


def prepare_corpus(
    split: DatasetSplit, cfg: ExperimentConfig, vocabulary: Optional[Vocabulary] = None, digest: str = ""
) -> PreparedCorpus:
    if vocabulary is None:
        vocabulary = fit_vocabulary(split.train, cfg)
    return PreparedCorpus(split, vocabulary, corpus_matrix(split.documents(), vocabulary), digest)


def oracle_annotate(oracle: Oracle, ids: Sequence[int]) -> List[int]:
    return oracle.annotate(ids)


@dataclass
class SeedRunState:
    seed: int
    annotation: AnnotationState
    checkpoint: Optional[ArtifactRef]
    curve: LearningCurve
    status: str


class SeedRun:
    def __init__(
        self,
        cfg: ExperimentConfig,
        corpus: PreparedCorpus,
        seed: int,
        store: Optional[RunStore] = None,
        run_id: Optional[str] = None,
        stop_event: Optional[threading.Event] = None,
    ):
        self.cfg = cfg
        self.corpus = corpus
        self.seed = seed
        self.store = store
        self.run_id = run_id
        self.stop_event = stop_event
        self.fingerprint = simulation_fingerprint(cfg)
        self.step_size = resolve_step_size(cfg, len(corpus.split.train))
        self.initial_teacher: Optional[BaseTeacher] = None
        self.teacher: Optional[BaseTeacher] = None
        self.state: Optional[SeedRunState] = None
        self.oracle = Oracle(corpus.split)

    def _rng(self, tag: str, *extra) -> np.random.Generator:
        return derive_rng(self.fingerprint, self.seed, tag, *extra)

    def _build_teachers(self) -> None:
        cfg = self.cfg
        view = CorpusView(tuple(self.corpus.train_ids()), self.corpus.features, len(self.corpus.label_names))
        self.initial_teacher = create_teacher(
            cfg.teacher.initial_strategy, cfg, view, view.label_count, self._rng("initial-teacher")
        )
        self.teacher = create_teacher(cfg.teacher.strategy, cfg, view, view.label_count, self._rng("teacher"))

    def _reset(self) -> None:
        split = self.corpus.split
        self.trainer: BaseTrainer = create_trainer(
            self.cfg.trainer.name,
            self.cfg.trainer,
            self.corpus.features,
            self.corpus.gold_labels,
            {"dev": [doc.id for doc in split.dev], "test": [doc.id for doc in split.test]},
            split.label_names,
        )
        self.state = SeedRunState(
            seed=self.seed,
            annotation=AnnotationState(self.corpus.train_ids()),
            checkpoint=None,
            curve=LearningCurve(self.seed),
            status=RUNNING,
        )
        self.labels: Dict[int, int] = {}

    def restore(self) -> bool:
        """Reload the last committed step from the store; False means start at step 0."""
        if self.store is None or self.run_id is None:
            return False
        try:
            rows = self.store.metrics(self.run_id)
            if not rows:
                return False
            try:
                curve = curve_from_rows(self.seed, rows, self.corpus.label_names, status=RUNNING)
            except KeyError as e:
                raise CorruptArtifactError(f"metrics lack {e}") from None
            last = curve.points[-1].step_index
            batches = [(step, ids) for step, ids in self.store.proposals(self.run_id) if step <= last]
            ref = self.store.artifact_ref(self.run_id, checkpoint_name(last))
            if [p.step_index for p in curve.points] != list(range(last + 1)):
                raise CorruptArtifactError("metrics are not contiguous")
            if [step for step, _ in batches] != list(range(last + 1)):
                raise CorruptArtifactError("proposal log does not match the committed steps")
            if ref is None:
                raise CorruptArtifactError("no checkpoint")
            rng_state = self.trainer.restore(self.store, ref)
            if not rng_state or rng_state.get("step_index") != last:
                raise CorruptArtifactError("checkpoint is not from the last committed step")
        except CorruptArtifactError as e:
            logger.warning("seed %d: cannot resume %s (%s); restarting from scratch", self.seed, self.run_id, e)
            self._restart()
            return False

        labeled = [doc_id for _, ids in batches for doc_id in ids]
        self.labels = dict(zip(labeled, self.oracle.annotate(labeled)))
        self.state = SeedRunState(
            seed=self.seed,
            annotation=AnnotationState(self.corpus.train_ids(), labeled),
            checkpoint=ref,
            curve=curve,
            status=RUNNING,
        )
        logger.info("seed %d: resumed %s after step %d (%d labeled)", self.seed, self.run_id, last, len(labeled))
        return True

    def _restart(self) -> None:
        old = self.store.get_run(self.run_id)
        self.store.set_status(old.run_id, RUN_FAILED)
        record = self.store.create_run(old.step_name, old.fingerprint, old.revision, old.params)
        self.run_id = record.run_id
        self._reset()

    def run(self) -> LearningCurve:
        try:
            self._reset()
            self._build_teachers()
            point = self.state.curve.points[-1] if self.restore() else self._step(0)
            while not self._should_stop(point):
                if self.stop_event is not None and self.stop_event.is_set():
                    raise Interrupted(f"seed {self.seed} interrupted after step {point.step_index}")
                point = self._step(point.step_index + 1)
            return self._finish()
        except Exception as e:
            if self.state is not None:
                self.state.status = FAILED
                self.state.curve.status = FAILED
            if self.store is not None and self.run_id is not None:
                self.store.set_status(self.run_id, RUN_FAILED)
            if not isinstance(e, Interrupted):
                logger.error("seed %d failed: %s", self.seed, e)
            raise SeedRunFailed(self.seed, self.run_id or "-", e) from e

    def _step(self, step_index: int) -> CurvePoint:
        exp = self.cfg.experiment
        annotation = self.state.annotation
        remaining = annotation.sorted_unlabeled()
        if step_index == 0:
            teacher = self.initial_teacher
            step_size = initial_size(self.cfg, len(remaining))
        else:
            teacher = self.teacher
            step_size = self.step_size

        ctx = clamp_context(remaining, step_size, exp.budget, self.trainer.predictor(), self._rng("strategy", step_index))
        proposal = [int(doc_id) for doc_id in teacher.propose(ctx)]
        ok, message = check_proposal(ctx, proposal)
        if not ok:
            raise ProposalError(f"{type(teacher).__name__} at step {step_index}: {message}")

        self.labels.update(zip(proposal, oracle_annotate(self.oracle, proposal)))
        annotation = mark_labeled(annotation, proposal)
        self.state.annotation = annotation
        if self.store is not None:
            self.store.append_proposal(self.run_id, step_index, proposal)

        labeled = annotation.labeled_ids
        if labeled:
            self.trainer.train(labeled, [self.labels[doc_id] for doc_id in labeled], self._rng("trainer", step_index))
            if self.store is not None:
                self.store.log_event(self.run_id, "train", f"seed {self.seed} step {step_index}")

        count = len(labeled)
        point = CurvePoint(step_index, count, self.trainer.evaluate("dev", count), self.trainer.evaluate("test", count))
        if step_index == 0:
            teacher.after_initial_train(ctx, point.dev_report)
        else:
            teacher.after_train(ctx, point.dev_report)
        self.state.curve.points.append(point)

        if self.store is not None:
            # per-step files; the committed step keeps its checkpoint until the next metrics line lands
            self.state.checkpoint = self.trainer.store(
                self.store, self.run_id, {"seed": self.seed, "step_index": step_index}, checkpoint_name(step_index)
            )
            self.store.log_metrics(self.run_id, step_index, {LABELED_COUNT: count, **point.metrics()})

        logger.info(
            "seed %d step %d: %d labeled, test %s %.4f",
            self.seed, step_index, count, exp.tracking_metric, point.test_report.macro_f1,
        )
        return point

    def _should_stop(self, point: CurvePoint) -> bool:
        exp = self.cfg.experiment
        if self.state.annotation.is_exhausted:
            return True
        if exp.max_steps is not None and point.step_index >= exp.max_steps:
            return True
        if exp.stop_threshold is not None:
            return point.test_report.metrics()[f"test_{exp.tracking_metric}"] >= exp.stop_threshold
        return False

    def _finish(self) -> LearningCurve:
        curve = self.state.curve
        curve.status = FINISHED
        self.state.status = FINISHED
        if self.store is not None:
            self.store.log_artifact(self.run_id, CURVE_CSV, curve_to_csv(curve))
            self.store.set_status(self.run_id, RUN_SUCCESS)
        return curve


def _as_prepared(corpus: Union[PreparedCorpus, DatasetSplit], cfg: ExperimentConfig) -> PreparedCorpus:
    return corpus if isinstance(corpus, PreparedCorpus) else prepare_corpus(corpus, cfg)


def run_seed(
    cfg: ExperimentConfig,
    corpus: Union[PreparedCorpus, DatasetSplit],
    seed: int,
    store: Optional[RunStore] = None,
    run_id: Optional[str] = None,
    stop_event: Optional[threading.Event] = None,
) -> LearningCurve:
    prepared = _as_prepared(corpus, cfg)
    require_classification(prepared.split)
    return SeedRun(cfg, prepared, seed, store, run_id, stop_event).run()


def load_curve(store: RunStore, run_id: str, seed: int, label_names: Sequence[str]) -> LearningCurve:
    return curve_from_rows(seed, store.metrics(run_id), label_names, status=FINISHED)


def resume_seed_run(
    cfg: ExperimentConfig,
    corpus: PreparedCorpus,
    store: RunStore,
    run_id: str,
    stop_event: Optional[threading.Event] = None,
) -> LearningCurve:
    record = store.get_run(run_id)
    seed = int(record.params["seed"])
    if record.fingerprint != seed_run_fingerprint(cfg, seed, corpus.digest):
        raise FingerprintMismatchError(f"run {run_id} was recorded with a different configuration or corpus")
    if record.succeeded:
        logger.info("seed %d: run %s already finished, skipped", seed, run_id)
        return load_curve(store, run_id, seed, corpus.label_names)
    store.set_status(run_id, RUN_RUNNING)
    return run_seed(cfg, corpus, seed, store, run_id, stop_event)


@dataclass
class ExperimentResult:
    curves: List[LearningCurve]
    aggregate: AggregatedCurve
    run_ids: Dict[int, str] = field(default_factory=dict)
    aggregate_run_id: Optional[str] = None


def _run_all(
    cfg: ExperimentConfig,
    corpus: PreparedCorpus,
    jobs: Dict[int, Optional[str]],
    store: Optional[RunStore],
    stop_event: Optional[threading.Event],
) -> Dict[int, LearningCurve]:
    curves: Dict[int, LearningCurve] = {}
    failures: Dict[int, SeedRunFailed] = {}
    if not jobs:
        return curves
    with ThreadPoolExecutor(max_workers=cfg.tracking.worker_count, thread_name_prefix="seed-run") as pool:
        futures = {
            pool.submit(run_seed, cfg, corpus, seed, store, run_id, stop_event): seed
            for seed, run_id in jobs.items()
        }
        for future in as_completed(futures):
            seed = futures[future]
            try:
                curves[seed] = future.result()
            except SeedRunFailed as e:
                failures[seed] = e
            except Exception as e:
                logger.error("seed %d failed outside its run: %s", seed, e)
                if store is not None and jobs[seed] is not None:
                    store.set_status(jobs[seed], RUN_FAILED)
                failures[seed] = SeedRunFailed(seed, jobs[seed] or "-", e)

    if failures:
        if any(isinstance(e.cause, Interrupted) for e in failures.values()):
            raise Interrupted(f"interrupted; seed runs {sorted(failures)} can be resumed with --resume")
        raise ExperimentFailed(failures)
    return curves


def run_experiment(
    cfg: ExperimentConfig,
    corpus: Union[PreparedCorpus, DatasetSplit],
    store: Optional[RunStore] = None,
    resume: bool = False,
    stop_event: Optional[threading.Event] = None,
) -> ExperimentResult:
    """Run every configured seed on at most ``tracking.worker_count`` threads, then aggregate."""
    check_registries(cfg)
    corpus = _as_prepared(corpus, cfg)
    require_classification(corpus.split)
    seeds = list(cfg.experiment.seeds)
    revision = cfg.tracking.revision
    curves: Dict[int, LearningCurve] = {}
    run_ids: Dict[int, str] = {}
    jobs: Dict[int, Optional[str]] = {}

    # records are opened here, in seed order, so run ids never depend on scheduling
    for seed in seeds:
        if store is None:
            jobs[seed] = None
            continue
        params = {"seed": seed, "config": cfg.to_dict()}
        record, cached = store.begin_step(
            seed_step_name(seed), seed_run_fingerprint(cfg, seed, corpus.digest), revision, params, resume
        )
        run_ids[seed] = record.run_id
        if cached:
            curves[seed] = load_curve(store, record.run_id, seed, corpus.label_names)
        else:
            jobs[seed] = record.run_id

    curves.update(_run_all(cfg, corpus, jobs, store, stop_event))
    ordered = [curves[seed] for seed in seeds]
    if store is not None:
        for seed, curve in zip(seeds, ordered):
            # a restart from scratch moves the seed onto a new record
            match = store.find_matching_run(
                seed_step_name(seed), seed_run_fingerprint(cfg, seed, corpus.digest), revision
            )
            if match is not None:
                run_ids[seed] = match.run_id

    if store is None:
        return ExperimentResult(ordered, aggregate_seed_runs(ordered))

    record, cached = store.begin_step(
        AGGREGATE_STEP, aggregate_fingerprint(cfg, corpus.digest), revision, cfg.to_dict(), resume
    )
    if cached:
        aggregate = aggregate_from_csv(store.require_artifact(record.run_id, AGGREGATE_CSV), seeds)
    else:
        try:
            aggregate = aggregate_seed_runs(ordered)
            store.log_artifact(record.run_id, AGGREGATE_CSV, aggregate_to_csv(aggregate))
            for seed, curve in zip(seeds, ordered):
                store.log_artifact(record.run_id, f"curves/{seed}.csv", curve_to_csv(curve))
            store.log_artifact(
                record.run_id,
                AGGREGATE_SVG,
                plot_comparison_svg([(cfg.teacher.strategy, aggregate)], f"test_{cfg.experiment.tracking_metric}"),
            )
        except Exception:
            store.set_status(record.run_id, RUN_FAILED)
            raise
        store.set_status(record.run_id, RUN_SUCCESS)
        logger.info("aggregated %d seed runs into %s", len(ordered), record.run_id)
    return ExperimentResult(ordered, aggregate, run_ids, record.run_id)
