"""Online softmax regression over TF-IDF features.

``BaseTrainer`` is the full training contract used by the simulator;
teachers only ever see a ``Predictor``.
"""

import json
import logging
import struct
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse

from simulation.config import TrainerConfig
from simulation.errors import CorruptArtifactError, TrainingError, UnknownStrategyError

logger = logging.getLogger(__name__)

_CHECKPOINT_MAGIC = b"ALSM"
_CHECKPOINT_VERSION = 1
_CHECKPOINT_HEADER = struct.Struct("<4sHIIQ")
_RNG_LENGTH = struct.Struct("<I")

RandomSource = Union[int, np.random.Generator]


@dataclass
class LinearModel:
    weights: np.ndarray
    bias: np.ndarray
    step_counter: int = 0

    @classmethod
    def zeros(cls, label_count: int, vocab_size: int, step_counter: int = 0) -> "LinearModel":
        return cls(
            weights=np.zeros((label_count, vocab_size), dtype=np.float64),
            bias=np.zeros(label_count, dtype=np.float64),
            step_counter=step_counter,
        )

    @property
    def label_count(self) -> int:
        return self.weights.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "LinearModel":
        return LinearModel(self.weights.copy(), self.bias.copy(), self.step_counter)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias)))

    def same_as(self, other: "LinearModel") -> bool:
        return (
            self.step_counter == other.step_counter
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.bias, other.bias)
        )


@dataclass(frozen=True)
class LabelScore:
    label: str
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class EvaluationReport:
    macro_f1: float
    per_label: Tuple[LabelScore, ...]
    split: str
    labeled_count: int

    def metrics(self) -> Dict[str, float]:
        values = {f"{self.split}_macro_f1": self.macro_f1}
        for score in self.per_label:
            values[f"{self.split}_precision/{score.label}"] = score.precision
            values[f"{self.split}_recall/{score.label}"] = score.recall
            values[f"{self.split}_f1/{score.label}"] = score.f1
        return values

    @classmethod
    def from_metrics(cls, split: str, labeled_count: int, label_names: Sequence[str], values: Dict[str, float]):
        per_label = tuple(
            LabelScore(
                label=label,
                precision=values[f"{split}_precision/{label}"],
                recall=values[f"{split}_recall/{label}"],
                f1=values[f"{split}_f1/{label}"],
            )
            for label in label_names
        )
        return cls(values[f"{split}_macro_f1"], per_label, split, labeled_count)


def linear_scores(model: LinearModel, X) -> np.ndarray:
    return np.asarray(X @ model.weights.T) + model.bias


def _log_softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def predict_proba(model: LinearModel, X) -> np.ndarray:
    return np.exp(_log_softmax(linear_scores(model, X)))


def loss_and_gradient(model: LinearModel, X, y: np.ndarray, l2_penalty: float) -> Tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy plus ``l2/2 * ||W||^2`` and its gradient (bias unpenalized)."""
    n = X.shape[0]
    rows = np.arange(n)
    log_p = _log_softmax(linear_scores(model, X))
    loss = -log_p[rows, y].mean() + 0.5 * l2_penalty * float(np.sum(model.weights * model.weights))

    delta = np.exp(log_p)
    delta[rows, y] -= 1.0
    delta /= n
    grad_w = np.asarray(X.T @ delta).T + l2_penalty * model.weights
    grad_b = delta.sum(axis=0)
    return float(loss), grad_w, grad_b


def _check_dimensions(model: LinearModel, X, y: np.ndarray) -> None:
    if X.shape[0] == 0:
        raise TrainingError("cannot train on zero documents")
    if X.shape[0] != len(y):
        raise TrainingError(f"{X.shape[0]} feature rows but {len(y)} labels")
    if X.shape[1] != model.vocab_size:
        raise TrainingError(f"dimension mismatch: features have {X.shape[1]} columns, model expects {model.vocab_size}")
    if len(y) and (y.min() < 0 or y.max() >= model.label_count):
        raise TrainingError(f"label index outside 0..{model.label_count - 1}")


def train_online(model: LinearModel, X, y: Sequence[int], cfg: TrainerConfig, rng: RandomSource) -> LinearModel:
    """Run ``cfg.epochs_per_step`` epochs of shuffled minibatch SGD over all rows of ``X``.

    Starts from the incoming weights unless ``cfg.warm_start`` is off, in
    which case every call starts from zeros. The input model is not mutated.
    """
    y = np.asarray(y, dtype=np.int64)
    _check_dimensions(model, X, y)
    rng = np.random.default_rng(rng)
    X = sparse.csr_matrix(X)
    step = model.step_counter + 1

    if cfg.warm_start:
        current = model.copy()
    else:
        current = LinearModel.zeros(model.label_count, model.vocab_size, model.step_counter)

    n = X.shape[0]
    for epoch in range(cfg.epochs_per_step):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            loss, grad_w, grad_b = loss_and_gradient(current, X[batch], y[batch], cfg.l2_penalty)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at training step {step}, epoch {epoch + 1}, batch offset {start}")
            current.weights -= cfg.learning_rate * grad_w
            current.bias -= cfg.learning_rate * grad_b

    if not current.is_finite():
        raise TrainingError(f"non-finite parameters after training step {step}")
    current.step_counter = step
    return current


def evaluate_predictions(
    y_true: Sequence[int],
    y_pred: Sequence[int],
    label_names: Sequence[str],
    split: str,
    labeled_count: int,
) -> EvaluationReport:
    label_count = len(label_names)
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    confusion = np.bincount(y_true * label_count + y_pred, minlength=label_count * label_count)
    confusion = confusion.reshape(label_count, label_count)

    tp = np.diag(confusion).astype(np.float64)
    predicted = confusion.sum(axis=0).astype(np.float64)
    actual = confusion.sum(axis=1).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        recall = np.where(actual > 0, tp / actual, 0.0)
        denominator = predicted + actual
        f1 = np.where(denominator > 0, 2.0 * tp / denominator, 0.0)

    per_label = tuple(
        LabelScore(label, float(p), float(r), float(f)) for label, p, r, f in zip(label_names, precision, recall, f1)
    )
    return EvaluationReport(float(np.mean(f1)), per_label, split, labeled_count)


def evaluate(
    model: LinearModel, X, y_true: Sequence[int], label_names: Sequence[str], split: str, labeled_count: int
) -> EvaluationReport:
    if X.shape[0] == 0:
        raise TrainingError(f"cannot evaluate on an empty {split} split")
    y_pred = linear_scores(model, X).argmax(axis=1)
    return evaluate_predictions(y_true, y_pred, label_names, split, labeled_count)


def encode_checkpoint(model: LinearModel, rng_state: Optional[Dict[str, Any]] = None) -> bytes:
    header = _CHECKPOINT_HEADER.pack(
        _CHECKPOINT_MAGIC, _CHECKPOINT_VERSION, model.label_count, model.vocab_size, model.step_counter
    )
    rng_blob = json.dumps(rng_state, sort_keys=True).encode("utf-8")
    return b"".join([
        header,
        np.ascontiguousarray(model.weights, dtype="<f8").tobytes(),
        np.ascontiguousarray(model.bias, dtype="<f8").tobytes(),
        _RNG_LENGTH.pack(len(rng_blob)),
        rng_blob,
    ])


def decode_checkpoint(blob: bytes) -> Tuple[LinearModel, Optional[Dict[str, Any]]]:
    if len(blob) < _CHECKPOINT_HEADER.size:
        raise CorruptArtifactError("checkpoint is truncated")
    magic, version, label_count, vocab_size, step_counter = _CHECKPOINT_HEADER.unpack_from(blob, 0)
    if magic != _CHECKPOINT_MAGIC or version != _CHECKPOINT_VERSION:
        raise CorruptArtifactError("not a checkpoint file")

    offset = _CHECKPOINT_HEADER.size
    weight_bytes = 8 * label_count * vocab_size
    bias_bytes = 8 * label_count
    if len(blob) < offset + weight_bytes + bias_bytes + _RNG_LENGTH.size:
        raise CorruptArtifactError("checkpoint is truncated")
    weights = np.frombuffer(blob, dtype="<f8", count=label_count * vocab_size, offset=offset)
    offset += weight_bytes
    bias = np.frombuffer(blob, dtype="<f8", count=label_count, offset=offset)
    offset += bias_bytes
    (rng_length,) = _RNG_LENGTH.unpack_from(blob, offset)
    offset += _RNG_LENGTH.size
    if len(blob) != offset + rng_length:
        raise CorruptArtifactError("checkpoint is truncated")
    try:
        rng_state = json.loads(blob[offset:].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptArtifactError(f"checkpoint rng state unreadable: {e}") from e

    model = LinearModel(
        weights=weights.astype(np.float64).reshape(label_count, vocab_size),
        bias=bias.astype(np.float64),
        step_counter=step_counter,
    )
    return model, rng_state


DEFAULT_CHECKPOINT = "checkpoint.bin"


def store_checkpoint(
    model: LinearModel, store, run_id: str, rng_state: Optional[Dict[str, Any]] = None, name: str = DEFAULT_CHECKPOINT
):
    return store.log_artifact(run_id, name, encode_checkpoint(model, rng_state))


def restore_checkpoint(store, ref) -> Tuple[LinearModel, Optional[Dict[str, Any]]]:
    return decode_checkpoint(store.load_artifact(ref))


class Predictor(ABC):
    @abstractmethod
    def predict_proba(self, ids: Sequence[int]) -> np.ndarray:
        pass


class BaseTrainer(Predictor):
    @abstractmethod
    def train(self, ids: Sequence[int], labels: Sequence[int], rng: RandomSource) -> None:
        pass

    @abstractmethod
    def evaluate(self, split: str, labeled_count: int) -> EvaluationReport:
        pass

    @abstractmethod
    def store(self, store, run_id: str, rng_state: Optional[Dict[str, Any]] = None, name: str = DEFAULT_CHECKPOINT):
        pass

    @abstractmethod
    def restore(self, store, ref) -> Optional[Dict[str, Any]]:
        pass

    def predictor(self) -> "PredictorView":
        return PredictorView(self)


class PredictorView(Predictor):
    """Read-only handle handed to teachers."""

    def __init__(self, source: Predictor):
        self._predict = source.predict_proba

    def predict_proba(self, ids: Sequence[int]) -> np.ndarray:
        return self._predict(ids)


class SoftmaxTrainer(BaseTrainer):
    def __init__(
        self,
        cfg: TrainerConfig,
        features: sparse.csr_matrix,
        gold_labels: Sequence[int],
        eval_ids: Dict[str, Sequence[int]],
        label_names: Sequence[str],
    ):
        self.cfg = cfg
        self.features = features
        self.gold_labels = np.asarray(gold_labels, dtype=np.int64)
        self.eval_ids = {name: np.asarray(ids, dtype=np.int64) for name, ids in eval_ids.items()}
        self.label_names = tuple(label_names)
        self.model = LinearModel.zeros(len(self.label_names), features.shape[1])

    def _rows(self, ids: Sequence[int]):
        return self.features[np.asarray(ids, dtype=np.int64)]

    def train(self, ids: Sequence[int], labels: Sequence[int], rng: RandomSource) -> None:
        self.model = train_online(self.model, self._rows(ids), labels, self.cfg, rng)

    def evaluate(self, split: str, labeled_count: int) -> EvaluationReport:
        ids = self.eval_ids[split]
        return evaluate(self.model, self._rows(ids), self.gold_labels[ids], self.label_names, split, labeled_count)

    def predict_proba(self, ids: Sequence[int]) -> np.ndarray:
        if len(ids) == 0:
            return np.zeros((0, len(self.label_names)), dtype=np.float64)
        return predict_proba(self.model, self._rows(ids))

    def store(self, store, run_id: str, rng_state: Optional[Dict[str, Any]] = None, name: str = DEFAULT_CHECKPOINT):
        return store_checkpoint(self.model, store, run_id, rng_state, name)

    def restore(self, store, ref) -> Optional[Dict[str, Any]]:
        model, rng_state = restore_checkpoint(store, ref)
        if model.weights.shape != self.model.weights.shape:
            raise CorruptArtifactError(
                f"checkpoint shape {model.weights.shape} does not match {self.model.weights.shape}"
            )
        self.model = model
        return rng_state


TrainerFactory = Callable[..., BaseTrainer]
TRAINERS: Dict[str, TrainerFactory] = {"softmax_sgd": SoftmaxTrainer}


def register_trainer(name: str):
    def wrap(factory: TrainerFactory) -> TrainerFactory:
        TRAINERS[name] = factory
        return factory
    return wrap


def create_trainer(name: str, *args, **kwargs) -> BaseTrainer:
    if name not in TRAINERS:
        raise UnknownStrategyError(f"unknown trainer '{name}' (known: {', '.join(sorted(TRAINERS))})")
    return TRAINERS[name](*args, **kwargs)


def available_trainers() -> List[str]:
    return sorted(TRAINERS)
