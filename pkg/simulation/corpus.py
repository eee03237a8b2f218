"""Raw JSONL ingestion, converted corpus format and annotation bookkeeping.

Ids are global across splits: train documents come first, then dev, then
test, so ``0..len(train)-1`` is always the simulated pool.
"""

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

from simulation.config import DataConfig, ExperimentConfig
from simulation.errors import AnnotationError, CorpusError, CorruptArtifactError, UnsupportedTaskError

logger = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")
# gold label of span-schema documents, which have no document-level class
NO_DOCUMENT_LABEL = -1

_CORPUS_MAGIC = b"ALSD"
_CORPUS_VERSION = 1
_HEADER = struct.Struct("<4sHI")
_RECORD_HEAD = struct.Struct("<I")
_RECORD_FIXED = struct.Struct("<Qi")


@dataclass(frozen=True)
class RawDocument:
    text: str
    label: Optional[str] = None
    spans: Optional[Tuple[Tuple[int, int, str], ...]] = None
    id: Optional[int] = None

    @property
    def is_span_record(self) -> bool:
        return self.spans is not None


@dataclass(frozen=True)
class AnnotatedDocument:
    id: int
    text: str
    gold_label: int


@dataclass(frozen=True)
class DatasetSplit:
    train: Tuple[AnnotatedDocument, ...]
    dev: Tuple[AnnotatedDocument, ...]
    test: Tuple[AnnotatedDocument, ...]
    label_names: Tuple[str, ...]

    @property
    def label_count(self) -> int:
        return len(self.label_names)

    def split(self, name: str) -> Tuple[AnnotatedDocument, ...]:
        return getattr(self, name)

    def documents(self) -> List[AnnotatedDocument]:
        return [*self.train, *self.dev, *self.test]

    def train_ids(self) -> List[int]:
        return [doc.id for doc in self.train]

    @property
    def is_span_task(self) -> bool:
        return any(doc.gold_label == NO_DOCUMENT_LABEL for doc in self.documents())


def _parse_spans(raw, text: str, path: str, line: int) -> Tuple[Tuple[int, int, str], ...]:
    if not isinstance(raw, list):
        raise CorpusError("span field must be a list of [start, end, label]", path, line)
    spans = []
    for item in raw:
        if not isinstance(item, (list, tuple)) or len(item) != 3:
            raise CorpusError(f"malformed span {item!r}", path, line)
        start, end, label = item
        if isinstance(start, bool) or isinstance(end, bool) or not isinstance(start, int) or not isinstance(end, int):
            raise CorpusError(f"span offsets must be integers: {item!r}", path, line)
        if not isinstance(label, str) or not label:
            raise CorpusError(f"span label must be a non-empty string: {item!r}", path, line)
        if label.splitlines() != [label]:
            raise CorpusError(f"span label must not contain line breaks: {item!r}", path, line)
        if not 0 <= start < end <= len(text):
            raise CorpusError(f"span offsets {start}..{end} outside text of length {len(text)}", path, line)
        spans.append((start, end, label))
    return tuple(spans)


def parse_raw_line(line: str, data: DataConfig, path: str = "<memory>", line_number: int = 1) -> RawDocument:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as e:
        raise CorpusError(f"malformed JSON: {e.msg}", path, line_number) from e
    if not isinstance(record, dict):
        raise CorpusError("record must be a JSON object", path, line_number)

    text = record.get(data.text_field)
    if not isinstance(text, str) or not text:
        raise CorpusError(f"field '{data.text_field}' must be a non-empty string", path, line_number)

    doc_id = record.get("id")
    if doc_id is not None and (isinstance(doc_id, bool) or not isinstance(doc_id, int) or doc_id < 0):
        raise CorpusError(f"id must be a non-negative integer, got {doc_id!r}", path, line_number)

    if data.label_field in record:
        label = record[data.label_field]
        if isinstance(label, list):
            raise CorpusError("multi-label records are not supported", path, line_number)
        if not isinstance(label, str) or not label:
            raise CorpusError(f"field '{data.label_field}' must be a non-empty string", path, line_number)
        if label.splitlines() != [label]:
            raise CorpusError(f"field '{data.label_field}' must not contain line breaks", path, line_number)
        return RawDocument(text=text, label=label, id=doc_id)
    if data.spans_field in record:
        spans = _parse_spans(record[data.spans_field], text, path, line_number)
        return RawDocument(text=text, spans=spans, id=doc_id)
    raise CorpusError(
        f"unknown schema: neither '{data.label_field}' nor '{data.spans_field}' present", path, line_number
    )


def read_jsonl(path: Union[str, Path], data: DataConfig) -> List[RawDocument]:
    path = Path(path)
    documents = []
    with path.open("r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            documents.append(parse_raw_line(line, data, str(path), line_number))
    if not documents:
        raise CorpusError("empty split", str(path))
    return documents


def _assign_ids(raw_splits: Dict[str, List[RawDocument]]) -> List[int]:
    ordered = [doc for name in SPLITS for doc in raw_splits[name]]
    given = [doc.id for doc in ordered]
    if all(i is not None for i in given) and sorted(given) == list(range(len(ordered))):
        return given
    if any(i is not None for i in given):
        logger.warning("pre-assigned ids are not dense and unique; re-assigning ids in corpus order")
    return list(range(len(ordered)))


def convert_raw(raw_dir: Union[str, Path], cfg: ExperimentConfig) -> DatasetSplit:
    """Convert the three raw splits.

    Span corpora convert too: their documents carry ``NO_DOCUMENT_LABEL`` and
    the label vocabulary lists span labels. Simulation refuses them later.
    """
    raw_dir = Path(raw_dir)
    raw_splits = {name: read_jsonl(raw_dir / filename, cfg.data) for name, filename in cfg.data.split_files().items()}

    kinds = {doc.is_span_record for docs in raw_splits.values() for doc in docs}
    if len(kinds) > 1:
        raise CorpusError("mixed schemas: classification and span records cannot share a corpus", str(raw_dir))
    span_task = kinds == {True}

    label_index: Dict[str, int] = {}
    for name in SPLITS:
        for doc in raw_splits[name]:
            for label in (label for _, _, label in doc.spans) if span_task else (doc.label,):
                if label not in label_index:
                    label_index[label] = len(label_index)

    ids = iter(_assign_ids(raw_splits))
    converted = {
        name: tuple(
            AnnotatedDocument(
                id=next(ids),
                text=doc.text,
                gold_label=NO_DOCUMENT_LABEL if span_task else label_index[doc.label],
            )
            for doc in raw_splits[name]
        )
        for name in SPLITS
    }
    split = DatasetSplit(label_names=tuple(label_index), **converted)
    logger.info(
        "converted %d/%d/%d %s documents with %d labels",
        len(split.train), len(split.dev), len(split.test), "span" if span_task else "classification",
        split.label_count,
    )
    return split


def require_classification(split: DatasetSplit) -> None:
    if split.is_span_task:
        raise UnsupportedTaskError("span tasks unsupported: only single-label classification can be simulated")


def encode_documents(documents: Sequence[AnnotatedDocument]) -> bytes:
    parts = [_HEADER.pack(_CORPUS_MAGIC, _CORPUS_VERSION, len(documents))]
    for doc in documents:
        payload = _RECORD_FIXED.pack(doc.id, doc.gold_label) + doc.text.encode("utf-8")
        parts.append(_RECORD_HEAD.pack(len(payload)))
        parts.append(payload)
    return b"".join(parts)


def decode_documents(blob: bytes) -> Tuple[AnnotatedDocument, ...]:
    if len(blob) < _HEADER.size:
        raise CorruptArtifactError("converted corpus is truncated")
    magic, version, count = _HEADER.unpack_from(blob, 0)
    if magic != _CORPUS_MAGIC or version != _CORPUS_VERSION:
        raise CorruptArtifactError("not a converted corpus file")
    offset = _HEADER.size
    documents = []
    for _ in range(count):
        if offset + _RECORD_HEAD.size > len(blob):
            raise CorruptArtifactError("converted corpus is truncated")
        (length,) = _RECORD_HEAD.unpack_from(blob, offset)
        offset += _RECORD_HEAD.size
        if length < _RECORD_FIXED.size or offset + length > len(blob):
            raise CorruptArtifactError("converted corpus is truncated")
        doc_id, label = _RECORD_FIXED.unpack_from(blob, offset)
        text = blob[offset + _RECORD_FIXED.size:offset + length].decode("utf-8")
        documents.append(AnnotatedDocument(id=doc_id, text=text, gold_label=label))
        offset += length
    if offset != len(blob):
        raise CorruptArtifactError("trailing bytes after converted corpus")
    return tuple(documents)


def encode_labels(label_names: Sequence[str]) -> bytes:
    return "".join(f"{name}\n" for name in label_names).encode("utf-8")


def decode_labels(blob: bytes) -> Tuple[str, ...]:
    return tuple(blob.decode("utf-8").splitlines())


class AnnotationState:
    """Labeled/unlabeled partition of the train pool for one seed run."""

    def __init__(self, train_ids: Iterable[int], labeled_ids: Sequence[int] = ()):
        self._all: Set[int] = set(train_ids)
        self.labeled_ids: List[int] = list(labeled_ids)
        self.unlabeled_ids: Set[int] = self._all - set(self.labeled_ids)

    def check_ids(self, ids: Sequence[int]) -> Tuple[bool, str]:
        seen = set()
        for doc_id in ids:
            if doc_id in seen:
                return False, f"duplicate id {doc_id}"
            seen.add(doc_id)
            if doc_id not in self._all:
                return False, f"unknown id {doc_id}"
            if doc_id not in self.unlabeled_ids:
                return False, f"id {doc_id} already labeled"
        return True, "OK"

    def sorted_unlabeled(self) -> List[int]:
        return sorted(self.unlabeled_ids)

    @property
    def is_exhausted(self) -> bool:
        return not self.unlabeled_ids

    def __len__(self) -> int:
        return len(self._all)


def mark_labeled(state: AnnotationState, ids: Sequence[int]) -> AnnotationState:
    ok, message = state.check_ids(ids)
    if not ok:
        raise AnnotationError(message)
    return AnnotationState(state._all, [*state.labeled_ids, *ids])


class Oracle:
    """Perfect annotator: gold-label lookup restricted to the train pool."""

    def __init__(self, split: DatasetSplit):
        self._gold = {doc.id: doc.gold_label for doc in split.train}

    def annotate(self, ids: Sequence[int]) -> List[int]:
        labels = []
        for doc_id in ids:
            if doc_id not in self._gold:
                raise AnnotationError(f"unknown id {doc_id}: not in the train pool")
            labels.append(self._gold[doc_id])
        return labels
