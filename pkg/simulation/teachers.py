"""Query strategies.

Every teacher implements ``propose(ctx)`` and returns ids drawn from
``ctx.potential_ids``. Ties are always broken by ascending document id.
Initial-selection and step strategies share the same registry.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from sklearn.cluster import kmeans_plusplus

from simulation.config import ExperimentConfig
from simulation.errors import ClusteringError, UnknownStrategyError
from simulation.trainer import EvaluationReport, Predictor

logger = logging.getLogger(__name__)

_DISTANCE_CHUNK = 128


@dataclass(frozen=True)
class CorpusView:
    train_ids: Tuple[int, ...]
    features: sparse.csr_matrix
    label_count: int


@dataclass(frozen=True)
class ProposeContext:
    potential_ids: Tuple[int, ...]
    actual_step_size: int
    actual_budget: int
    predictor: Predictor
    strategy_rng: np.random.Generator


def clamp_context(
    potential_ids: Sequence[int],
    step_size: int,
    budget: int,
    predictor: Predictor,
    strategy_rng: np.random.Generator,
) -> ProposeContext:
    remaining = len(potential_ids)
    actual_step_size = min(step_size, remaining)
    actual_budget = min(max(budget, actual_step_size), remaining)
    return ProposeContext(tuple(sorted(potential_ids)), actual_step_size, actual_budget, predictor, strategy_rng)


def check_proposal(ctx: ProposeContext, proposal: Sequence[int]) -> Tuple[bool, str]:
    if len(proposal) != ctx.actual_step_size:
        return False, f"proposed {len(proposal)} ids, expected {ctx.actual_step_size}"
    if len(set(proposal)) != len(proposal):
        return False, "proposal contains duplicates"
    pool = set(ctx.potential_ids)
    outside = [doc_id for doc_id in proposal if doc_id not in pool]
    if outside:
        return False, f"ids outside the unlabeled pool: {outside[:5]}"
    return True, "OK"


class BaseTeacher(ABC):
    def __init__(self, cfg: ExperimentConfig, corpus: CorpusView, label_count: int,
                 rng: Optional[np.random.Generator] = None):
        self.cfg = cfg
        self.corpus = corpus
        self.label_count = label_count
        self.rng = rng if rng is not None else np.random.default_rng(0)

    @abstractmethod
    def propose(self, ctx: ProposeContext) -> List[int]:
        pass

    def after_train(self, ctx: ProposeContext, report: EvaluationReport) -> None:
        pass

    def after_initial_train(self, ctx: ProposeContext, report: EvaluationReport) -> None:
        pass


TeacherFactory = Callable[..., BaseTeacher]
TEACHERS: Dict[str, TeacherFactory] = {}


def register_teacher(name: str):
    def wrap(factory: TeacherFactory) -> TeacherFactory:
        TEACHERS[name] = factory
        return factory
    return wrap


def create_teacher(name: str, cfg: ExperimentConfig, corpus: CorpusView, label_count: int,
                   rng: Optional[np.random.Generator] = None) -> BaseTeacher:
    if name not in TEACHERS:
        raise UnknownStrategyError(f"unknown strategy '{name}' (known: {', '.join(available_teachers())})")
    return TEACHERS[name](cfg, corpus, label_count, rng)


def available_teachers() -> List[str]:
    return sorted(TEACHERS)


@register_teacher("random")
class RandomTeacher(BaseTeacher):
    def propose(self, ctx: ProposeContext) -> List[int]:
        pool = np.asarray(ctx.potential_ids, dtype=np.int64)
        drawn = ctx.strategy_rng.choice(pool, size=ctx.actual_step_size, replace=False)
        return [int(doc_id) for doc_id in drawn]


@dataclass(frozen=True)
class KMeansResult:
    centers: np.ndarray
    assignments: np.ndarray
    objective_history: Tuple[float, ...]

    @property
    def objective(self) -> float:
        return self.objective_history[-1]


def _as_matrix(vectors) -> sparse.csr_matrix:
    if sparse.issparse(vectors):
        return sparse.csr_matrix(vectors, dtype=np.float64)
    return sparse.csr_matrix(np.asarray(vectors, dtype=np.float64))


def _squared_distances(X: sparse.csr_matrix, x_sq: np.ndarray, centers: np.ndarray) -> np.ndarray:
    c_sq = np.einsum("ij,ij->i", centers, centers)
    d = x_sq[:, None] - 2.0 * np.asarray(X @ centers.T) + c_sq[None, :]
    return np.maximum(d, 0.0)


def fit_kmeans(vectors, k: int, rng: np.random.Generator, max_iterations: int = 100) -> KMeansResult:
    X = _as_matrix(vectors)
    n = X.shape[0]
    if k < 1:
        raise ClusteringError("k must be >= 1")
    if n < k:
        raise ClusteringError(f"cannot form {k} clusters from {n} points")

    x_sq = np.asarray(X.multiply(X).sum(axis=1)).ravel()
    seeds, _ = kmeans_plusplus(X, k, x_squared_norms=x_sq, random_state=int(rng.integers(np.iinfo(np.int32).max)))
    centers = np.array(seeds, dtype=np.float64)
    rows = np.arange(n)
    assignments: Optional[np.ndarray] = None
    history: List[float] = []

    for _ in range(max_iterations):
        d = _squared_distances(X, x_sq, centers)
        new_assignments = d.argmin(axis=1)
        history.append(float(d[rows, new_assignments].sum()))
        if assignments is not None and np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments

        membership = sparse.csr_matrix((np.ones(n), (assignments, rows)), shape=(k, n))
        sums = (membership @ X).toarray()
        counts = np.bincount(assignments, minlength=k)
        filled = counts > 0
        # empty clusters keep their previous center
        centers[filled] = sums[filled] / counts[filled, None]

    logger.debug("k-means converged after %d iterations, objective %.6f", len(history), history[-1])
    return KMeansResult(centers=centers, assignments=assignments, objective_history=tuple(history))


def own_center_distances(vectors, clustering: KMeansResult) -> np.ndarray:
    """Euclidean distance of each row to the center it is assigned to."""
    X = _as_matrix(vectors)
    distances = np.empty(X.shape[0], dtype=np.float64)
    for start in range(0, X.shape[0], _DISTANCE_CHUNK):
        stop = min(start + _DISTANCE_CHUNK, X.shape[0])
        diff = X[start:stop].toarray() - clustering.centers[clustering.assignments[start:stop]]
        distances[start:stop] = np.sqrt((diff * diff).sum(axis=1))
    return distances


def rank_farthest(ids: Sequence[int], distances: Sequence[float], count: int) -> List[int]:
    ids = np.asarray(ids, dtype=np.int64)
    order = np.lexsort((ids, -np.asarray(distances, dtype=np.float64)))
    return [int(doc_id) for doc_id in ids[order[:count]]]


@register_teacher("kmeans")
class KMeansTeacher(BaseTeacher):
    """Exploration: documents farthest from their own cluster center go first.

    The clustering is fitted once on the whole train pool. Clusters with a
    larger spread are proposed more often; no per-cluster quota is applied.
    """

    def __init__(self, cfg: ExperimentConfig, corpus: CorpusView, label_count: int,
                 rng: Optional[np.random.Generator] = None):
        super().__init__(cfg, corpus, label_count, rng)
        k = cfg.teacher.k if cfg.teacher.k is not None else label_count
        pool = corpus.features[np.asarray(corpus.train_ids, dtype=np.int64)]
        self.clustering = fit_kmeans(pool, k, self.rng, cfg.teacher.max_iterations)
        self.distances = own_center_distances(pool, self.clustering)
        self._position = {doc_id: i for i, doc_id in enumerate(corpus.train_ids)}

    def propose(self, ctx: ProposeContext) -> List[int]:
        positions = [self._position[doc_id] for doc_id in ctx.potential_ids]
        return rank_farthest(ctx.potential_ids, self.distances[positions], ctx.actual_step_size)


def margins(probs: np.ndarray) -> np.ndarray:
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    if probs.shape[1] < 2:
        raise ValueError("margin needs at least two labels")
    top = np.sort(probs, axis=1)
    return top[:, -1] - top[:, -2]


def margin_score(probs: Sequence[float]) -> float:
    return float(margins(np.asarray(probs, dtype=np.float64)[None, :])[0])


def least_confidence(probs: np.ndarray) -> np.ndarray:
    probs = np.atleast_2d(probs)
    label_count = probs.shape[1]
    return (1.0 - probs.max(axis=1)) * (label_count / (label_count - 1))


def normalized_entropy(probs: np.ndarray) -> np.ndarray:
    probs = np.atleast_2d(probs)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0, probs * np.log(probs), 0.0)
    return -terms.sum(axis=1) / np.log(probs.shape[1])


class UncertaintyTeacher(BaseTeacher):
    """Exploitation: predict on a budget-sized sample, propose the lowest priorities."""

    @abstractmethod
    def priority(self, probs: np.ndarray) -> np.ndarray:
        pass

    def propose(self, ctx: ProposeContext) -> List[int]:
        pool = np.asarray(ctx.potential_ids, dtype=np.int64)
        sample = ctx.strategy_rng.choice(pool, size=ctx.actual_budget, replace=False)
        probs = ctx.predictor.predict_proba(sample)
        order = np.lexsort((sample, self.priority(probs)))
        return [int(doc_id) for doc_id in sample[order[:ctx.actual_step_size]]]


@register_teacher("margin")
class MarginTeacher(UncertaintyTeacher):
    def priority(self, probs: np.ndarray) -> np.ndarray:
        return margins(probs)


@register_teacher("least_confidence")
class LeastConfidenceTeacher(UncertaintyTeacher):
    def priority(self, probs: np.ndarray) -> np.ndarray:
        return -least_confidence(probs)


@register_teacher("entropy")
class EntropyTeacher(UncertaintyTeacher):
    def priority(self, probs: np.ndarray) -> np.ndarray:
        return -normalized_entropy(probs)
