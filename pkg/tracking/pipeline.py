"""Pipeline executor.

Steps: load_raw, convert, load_converted, one seed run per seed, aggregate.
Every step first looks for a matching successful run and reuses its
artifacts. Raw-file digests are part of every downstream fingerprint.
"""

import hashlib
import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from simulation.config import ExperimentConfig, scoped_fingerprint
from simulation.corpus import (
    SPLITS,
    DatasetSplit,
    convert_raw,
    decode_documents,
    decode_labels,
    encode_documents,
    encode_labels,
)
from simulation.featurize import Vocabulary, fit_vocabulary
from simulation.simulator import ExperimentResult, PreparedCorpus, check_registries, prepare_corpus, run_experiment
from tracking.store import FAILED, SUCCESS, RunStore

logger = logging.getLogger(__name__)

RAW_PREFIX = "raw"
LABELS = "labels.txt"
VOCABULARY = "vocabulary.tsv"


def raw_digests(cfg: ExperimentConfig) -> Dict[str, str]:
    source = Path(cfg.data.source_path)
    return {
        split: hashlib.sha256((source / filename).read_bytes()).hexdigest()
        for split, filename in cfg.data.split_files().items()
    }


@dataclass
class PipelineResult:
    steps: Dict[str, str] = field(default_factory=dict)
    skipped: List[str] = field(default_factory=list)
    corpus: Optional[PreparedCorpus] = None
    experiment: Optional[ExperimentResult] = None


class Pipeline:
    def __init__(
        self,
        cfg: ExperimentConfig,
        store: RunStore,
        resume: bool = False,
        stop_event: Optional[threading.Event] = None,
    ):
        self.cfg = cfg
        self.store = store
        self.resume = resume
        self.stop_event = stop_event
        self.result = PipelineResult()
        self.digests: Dict[str, str] = {}

    def _step(self, name: str, fingerprint: str, params: Dict[str, Any], body: Callable[[str], None]) -> str:
        record, cached = self.store.begin_step(name, fingerprint, self.cfg.tracking.revision, params, self.resume)
        self.result.steps[name] = record.run_id
        if cached:
            self.result.skipped.append(name)
            return record.run_id
        try:
            body(record.run_id)
        except BaseException:
            self.store.set_status(record.run_id, FAILED)
            raise
        self.store.set_status(record.run_id, SUCCESS)
        logger.info("%s: finished run %s", name, record.run_id)
        return record.run_id

    def _data_fingerprint(self, **extra) -> str:
        return scoped_fingerprint(self.cfg, ("data",), extra={"raw": self.digests, **extra})

    def load_raw(self) -> str:
        self.digests = raw_digests(self.cfg)
        source = Path(self.cfg.data.source_path)

        def body(run_id: str) -> None:
            for filename in self.cfg.data.split_files().values():
                self.store.log_artifact(run_id, f"{RAW_PREFIX}/{filename}", (source / filename).read_bytes())

        params = {"data": self.cfg.to_dict()["data"], "digests": self.digests}
        return self._step("load_raw", self._data_fingerprint(), params, body)

    def convert(self, raw_run: str) -> str:
        def body(run_id: str) -> None:
            for filename in self.cfg.data.split_files().values():
                # verifies the copied bytes before conversion reads them
                self.store.require_artifact(raw_run, f"{RAW_PREFIX}/{filename}")
            split = convert_raw(self.store.run_dir(raw_run) / "artifacts" / RAW_PREFIX, self.cfg)
            for name in SPLITS:
                self.store.log_artifact(run_id, f"corpus/{name}.bin", encode_documents(split.split(name)))
            self.store.log_artifact(run_id, LABELS, encode_labels(split.label_names))

        params = {"data": self.cfg.to_dict()["data"], "raw_run": raw_run}
        return self._step("convert", self._data_fingerprint(), params, body)

    def _read_converted(self, convert_run: str) -> DatasetSplit:
        splits = {
            name: decode_documents(self.store.require_artifact(convert_run, f"corpus/{name}.bin")) for name in SPLITS
        }
        return DatasetSplit(label_names=decode_labels(self.store.require_artifact(convert_run, LABELS)), **splits)

    def load_converted(self, convert_run: str) -> PreparedCorpus:
        trainer = self.cfg.trainer
        fingerprint = self._data_fingerprint(ngram_order=trainer.ngram_order, vocabulary_cap=trainer.vocabulary_cap)
        split = self._read_converted(convert_run)
        fitted: Dict[str, Vocabulary] = {}

        def body(run_id: str) -> None:
            fitted["vocabulary"] = fit_vocabulary(split.train, self.cfg)
            self.store.log_artifact(run_id, VOCABULARY, fitted["vocabulary"].encode())

        params = {"convert_run": convert_run, "ngram_order": trainer.ngram_order, "vocabulary_cap": trainer.vocabulary_cap}
        run_id = self._step("load_converted", fingerprint, params, body)
        if "vocabulary" in fitted:
            vocabulary = fitted["vocabulary"]
        else:
            vocabulary = Vocabulary.decode(self.store.require_artifact(run_id, VOCABULARY))
        corpus = prepare_corpus(split, self.cfg, vocabulary, digest=fingerprint)
        logger.info("corpus ready: %d train documents, %d features", len(split.train), len(vocabulary))
        return corpus

    def convert_only(self) -> PipelineResult:
        self.convert(self.load_raw())
        return self.result

    def run(self) -> PipelineResult:
        check_registries(self.cfg)
        convert_run = self.convert(self.load_raw())
        corpus = self.load_converted(convert_run)
        self.result.corpus = corpus
        experiment = run_experiment(self.cfg, corpus, self.store, self.resume, self.stop_event)
        self.result.experiment = experiment
        for seed, run_id in experiment.run_ids.items():
            self.result.steps[f"seed_run({seed})"] = run_id
        if experiment.aggregate_run_id is not None:
            self.result.steps["aggregate"] = experiment.aggregate_run_id
        return self.result


def run_pipeline(
    cfg: ExperimentConfig,
    store: RunStore,
    resume: bool = False,
    stop_event: Optional[threading.Event] = None,
    convert_only: bool = False,
) -> PipelineResult:
    pipeline = Pipeline(cfg, store, resume, stop_event)
    return pipeline.convert_only() if convert_only else pipeline.run()
