import re
from collections import Counter
from dataclasses import dataclass, field
from functools import partial
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
from scipy import sparse
from sklearn.feature_extraction.text import TfidfVectorizer

from simulation.config import ExperimentConfig
from simulation.corpus import AnnotatedDocument
from simulation.errors import ConfigValidationError, CorruptArtifactError, VocabularyError
from simulation.settings import MAX_NGRAM_ORDER, MIN_NGRAM_ORDER

_WORD_RE = re.compile(r"[^\W_]+")

Document = Union[AnnotatedDocument, str]


def tokenize(text: str, ngram_order: int) -> List[str]:
    if not MIN_NGRAM_ORDER <= ngram_order <= MAX_NGRAM_ORDER:
        raise ValueError(f"ngram_order must lie in {MIN_NGRAM_ORDER}..{MAX_NGRAM_ORDER}")
    words = _WORD_RE.findall(text.lower())
    tokens = list(words)
    for n in range(2, ngram_order + 1):
        tokens.extend(" ".join(words[i:i + n]) for i in range(len(words) - n + 1))
    return tokens


def _text(doc: Document) -> str:
    return doc if isinstance(doc, str) else doc.text


@dataclass(frozen=True)
class Vocabulary:
    terms: Tuple[str, ...]
    document_frequency: Tuple[int, ...]
    document_count: int
    ngram_order: int = 1
    index: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "index", {term: i for i, term in enumerate(self.terms)})

    def __len__(self) -> int:
        return len(self.terms)

    def idf(self) -> np.ndarray:
        df = np.asarray(self.document_frequency, dtype=np.float64)
        return 1.0 + np.log((1.0 + self.document_count) / (1.0 + df))

    def encode(self) -> bytes:
        lines = [f"# documents={self.document_count} ngram_order={self.ngram_order}"]
        lines.extend(f"{term}\t{i}\t{df}" for i, (term, df) in enumerate(zip(self.terms, self.document_frequency)))
        return ("\n".join(lines) + "\n").encode("utf-8")

    @classmethod
    def decode(cls, blob: bytes) -> "Vocabulary":
        lines = blob.decode("utf-8").splitlines()
        try:
            header = dict(part.split("=", 1) for part in lines[0].lstrip("# ").split())
            terms, dfs = [], []
            for expected, line in enumerate(lines[1:]):
                term, index, df = line.split("\t")
                if int(index) != expected:
                    raise ValueError(f"index {index} out of order")
                terms.append(term)
                dfs.append(int(df))
            return cls(tuple(terms), tuple(dfs), int(header["documents"]), int(header["ngram_order"]))
        except (IndexError, KeyError, ValueError) as e:
            raise CorruptArtifactError(f"malformed vocabulary file: {e}") from e


@dataclass(frozen=True)
class SparseVector:
    indices: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)

    def norm(self) -> float:
        return float(np.linalg.norm(self.weights))

    def to_dense(self, size: int) -> np.ndarray:
        dense = np.zeros(size, dtype=np.float64)
        dense[self.indices] = self.weights
        return dense


def fit_vocabulary(docs: Sequence[Document], cfg: ExperimentConfig) -> Vocabulary:
    if not docs:
        raise VocabularyError("cannot fit a vocabulary on zero documents")
    cap = cfg.trainer.vocabulary_cap
    if cap is not None and cap < 1:
        raise ConfigValidationError("trainer.vocabulary_cap", "must be >= 1")

    ngram_order = cfg.trainer.ngram_order
    df: Counter = Counter()
    for doc in docs:
        df.update(set(tokenize(_text(doc), ngram_order)))
    ranked = sorted(df.items(), key=lambda item: (-item[1], item[0]))
    if cap is not None:
        ranked = ranked[:cap]
    return Vocabulary(
        terms=tuple(term for term, _ in ranked),
        document_frequency=tuple(count for _, count in ranked),
        document_count=len(docs),
        ngram_order=ngram_order,
    )


def make_vectorizer(vocab: Vocabulary) -> TfidfVectorizer:
    """TF-IDF vectorizer over ``vocab`` with smoothed idf and L2 rows.

    The idf vector comes from the train document frequencies stored with the
    vocabulary, so a vocabulary loaded from the store vectorizes exactly like
    the freshly fitted one.
    """
    vectorizer = TfidfVectorizer(
        vocabulary=vocab.index,
        tokenizer=partial(tokenize, ngram_order=vocab.ngram_order),
        lowercase=False,
        token_pattern=None,
        smooth_idf=True,
        norm="l2",
        dtype=np.float64,
    )
    vectorizer.idf_ = vocab.idf()
    return vectorizer


def tfidf_matrix(docs: Sequence[Document], vocab: Vocabulary) -> sparse.csr_matrix:
    """Row ``i`` is the vector of ``docs[i]``."""
    if not len(vocab):
        return sparse.csr_matrix((len(docs), 0), dtype=np.float64)
    matrix = make_vectorizer(vocab).transform([_text(doc) for doc in docs])
    matrix = sparse.csr_matrix(matrix, dtype=np.float64)
    matrix.sort_indices()
    return matrix


def tfidf_vectorize(doc: Document, vocab: Vocabulary) -> SparseVector:
    row = tfidf_matrix([doc], vocab)
    return SparseVector(indices=row.indices.astype(np.int64), weights=row.data.astype(np.float64))


def corpus_matrix(documents: Sequence[AnnotatedDocument], vocab: Vocabulary) -> sparse.csr_matrix:
    """Feature matrix whose row index equals the document id."""
    ordered = sorted(documents, key=lambda doc: doc.id)
    if [doc.id for doc in ordered] != list(range(len(ordered))):
        raise VocabularyError("document ids must be dense to build an id-indexed matrix")
    return tfidf_matrix(ordered, vocab)
