"""Hierarchical experiment configuration.

Configs are YAML files with five sections (``data``, ``experiment``,
``teacher``, ``trainer``, ``tracking``). A file may pull in fragments with a
top-level ``include:`` list; fragments are merged first and the including
file wins. Any leaf can be overridden with ``section.key=value`` strings.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Sequence, Tuple, Union, get_args, get_origin, get_type_hints

import yaml

from simulation.errors import ConfigError, ConfigValidationError
from simulation.settings import (
    MAX_INCLUDE_DEPTH,
    MAX_NGRAM_ORDER,
    MIN_NGRAM_ORDER,
    MIN_STEP_SIZE,
    DEFAULT_SEEDS,
    SUPPORTED_METRICS,
    get_default_config,
)

logger = logging.getLogger(__name__)

INCLUDE_KEY = "include"
SECTIONS = ("data", "experiment", "teacher", "trainer", "tracking")
# tracking.* only says where and how fast to run, never what is computed
FINGERPRINT_SECTIONS = ("data", "experiment", "teacher", "trainer")


@dataclass(frozen=True)
class DataConfig:
    source_path: str = ""
    text_field: str = "text"
    label_field: str = "label"
    spans_field: str = "labels"
    train_file: str = "train.jsonl"
    dev_file: str = "dev.jsonl"
    test_file: str = "test.jsonl"

    def split_files(self) -> Dict[str, str]:
        return {"train": self.train_file, "dev": self.dev_file, "test": self.test_file}


@dataclass(frozen=True)
class ExperimentSettings:
    step_size: int = 1000
    step_ratio: Optional[float] = None
    initial_ratio: float = 0.05
    budget: int = 5000
    tracking_metric: str = "macro_f1"
    seeds: Tuple[int, ...] = tuple(DEFAULT_SEEDS)
    max_steps: Optional[int] = None
    stop_threshold: Optional[float] = None


@dataclass(frozen=True)
class TeacherConfig:
    strategy: str = "random"
    initial_strategy: str = "random"
    k: Optional[int] = None
    max_iterations: int = 100


@dataclass(frozen=True)
class TrainerConfig:
    name: str = "softmax_sgd"
    learning_rate: float = 1.0
    epochs_per_step: int = 20
    l2_penalty: float = 1e-4
    batch_size: int = 32
    ngram_order: int = 1
    vocabulary_cap: Optional[int] = None
    warm_start: bool = True


@dataclass(frozen=True)
class TrackingConfig:
    store_root: str = "runs"
    worker_count: int = 1
    revision: str = ""


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    experiment: ExperimentSettings = field(default_factory=ExperimentSettings)
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    tracking: TrackingConfig = field(default_factory=TrackingConfig)

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        tree = asdict(self)
        tree["experiment"]["seeds"] = list(self.experiment.seeds)
        return tree


_SECTION_TYPES = {
    "data": DataConfig,
    "experiment": ExperimentSettings,
    "teacher": TeacherConfig,
    "trainer": TrainerConfig,
    "tracking": TrackingConfig,
}


def merge_trees(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    result = dict(base)
    for key, value in override.items():
        if key in result and isinstance(result[key], dict) and isinstance(value, dict):
            result[key] = merge_trees(result[key], value)
        else:
            result[key] = value
    return result


def _read_yaml(path: Path) -> Dict[str, Any]:
    text = path.read_text(encoding="utf-8")
    try:
        tree = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: malformed config: {e}") from e
    if tree is None:
        return {}
    if not isinstance(tree, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return tree


def load_tree(path: Union[str, Path], depth: int = 0) -> Dict[str, Any]:
    path = Path(path)
    if depth > MAX_INCLUDE_DEPTH:
        raise ConfigError(f"{path}: include depth exceeds {MAX_INCLUDE_DEPTH}")
    tree = _read_yaml(path)
    includes = tree.pop(INCLUDE_KEY, None) or []
    if isinstance(includes, str):
        includes = [includes]
    if not isinstance(includes, list):
        raise ConfigValidationError(INCLUDE_KEY, "must be a path or a list of paths")

    merged: Dict[str, Any] = {}
    for fragment in includes:
        fragment_path = path.parent / str(fragment)
        merged = merge_trees(merged, load_tree(fragment_path, depth + 1))
    return merge_trees(merged, tree)


def parse_override(text: str) -> Dict[str, Any]:
    if "=" not in text:
        raise ConfigError(f"override '{text}' must look like key.path=value")
    key_path, raw_value = text.split("=", 1)
    parts = [p for p in key_path.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"override '{text}' has an empty key")
    try:
        value = yaml.safe_load(raw_value) if raw_value.strip() else ""
    except yaml.YAMLError as e:
        raise ConfigError(f"override '{text}': {e}") from e

    tree: Dict[str, Any] = {}
    current = tree
    for part in parts[:-1]:
        current[part] = {}
        current = current[part]
    current[parts[-1]] = value
    return tree


def _coerce(name: str, value: Any, hint: Any) -> Any:
    origin = get_origin(hint)
    if origin is Union:
        if value is None:
            return None
        inner = [a for a in get_args(hint) if a is not type(None)][0]
        return _coerce(name, value, inner)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigValidationError(name, "expected a list")
        item_hint = get_args(hint)[0]
        return tuple(_coerce(f"{name}[{i}]", v, item_hint) for i, v in enumerate(value))
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigValidationError(name, f"expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigValidationError(name, f"expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, str):
            # YAML 1.1 reads "1e-4" as a string
            try:
                value = float(value)
            except ValueError:
                raise ConfigValidationError(name, f"expected a number, got {value!r}") from None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigValidationError(name, f"expected a number, got {value!r}")
        value = float(value)
        if not math.isfinite(value):
            raise ConfigValidationError(name, "must be finite")
        return value
    if hint is str:
        if not isinstance(value, str):
            raise ConfigValidationError(name, f"expected a string, got {value!r}")
        return value
    return value


def _build_section(section: str, values: Any):
    cls = _SECTION_TYPES[section]
    if not isinstance(values, dict):
        raise ConfigValidationError(section, "must be a mapping")
    hints = get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    for key in values:
        if key not in known:
            raise ConfigValidationError(f"{section}.{key}", "unknown key")
    kwargs = {key: _coerce(f"{section}.{key}", value, hints[key]) for key, value in values.items()}
    return cls(**kwargs)


def config_from_dict(tree: Dict[str, Any]) -> ExperimentConfig:
    for key in tree:
        if key not in SECTIONS:
            raise ConfigValidationError(key, "unknown key")
    full = merge_trees(get_default_config(), tree)
    sections = {name: _build_section(name, full[name]) for name in SECTIONS}
    cfg = ExperimentConfig(**sections)
    validate_config(cfg)
    return cfg


def parse_config(path: Union[str, Path], overrides: Sequence[str] = ()) -> ExperimentConfig:
    tree = load_tree(path)
    for override in overrides:
        tree = merge_trees(tree, parse_override(override))
    cfg = config_from_dict(tree)
    logger.debug("parsed config %s (fingerprint %s)", path, config_fingerprint(cfg))
    return cfg


def with_overrides(cfg: ExperimentConfig, overrides: Iterable[str]) -> ExperimentConfig:
    tree = cfg.to_dict()
    for override in overrides:
        tree = merge_trees(tree, parse_override(override))
    return config_from_dict(tree)


def validate_config(cfg: ExperimentConfig) -> None:
    data = cfg.data
    if not data.source_path:
        raise ConfigValidationError("data.source_path", "is required")
    for key in ("text_field", "label_field", "spans_field", "train_file", "dev_file", "test_file"):
        if not getattr(data, key):
            raise ConfigValidationError(f"data.{key}", "must not be empty")

    exp = cfg.experiment
    if exp.step_size < MIN_STEP_SIZE:
        raise ConfigValidationError("experiment.step_size", f"must be >= {MIN_STEP_SIZE}")
    if exp.budget < exp.step_size:
        raise ConfigValidationError("experiment.budget", "must be >= experiment.step_size")
    if exp.step_ratio is not None and not 0.0 < exp.step_ratio <= 1.0:
        raise ConfigValidationError("experiment.step_ratio", "must lie in (0, 1]")
    if not 0.0 <= exp.initial_ratio < 1.0:
        raise ConfigValidationError("experiment.initial_ratio", "must lie in [0, 1)")
    if exp.tracking_metric not in SUPPORTED_METRICS:
        raise ConfigValidationError("experiment.tracking_metric", f"must be one of {', '.join(SUPPORTED_METRICS)}")
    if not exp.seeds:
        raise ConfigValidationError("experiment.seeds", "must not be empty")
    if len(set(exp.seeds)) != len(exp.seeds):
        raise ConfigValidationError("experiment.seeds", "must be pairwise distinct")
    if exp.max_steps is not None and exp.max_steps < 0:
        raise ConfigValidationError("experiment.max_steps", "must be >= 0")
    if exp.stop_threshold is not None and not 0.0 <= exp.stop_threshold <= 1.0:
        raise ConfigValidationError("experiment.stop_threshold", "must lie in [0, 1]")

    teacher = cfg.teacher
    if not teacher.strategy:
        raise ConfigValidationError("teacher.strategy", "must not be empty")
    if not teacher.initial_strategy:
        raise ConfigValidationError("teacher.initial_strategy", "must not be empty")
    if teacher.k is not None and teacher.k < 1:
        raise ConfigValidationError("teacher.k", "must be >= 1")
    if teacher.max_iterations < 1:
        raise ConfigValidationError("teacher.max_iterations", "must be >= 1")

    trainer = cfg.trainer
    if trainer.learning_rate <= 0:
        raise ConfigValidationError("trainer.learning_rate", "must be > 0")
    if trainer.epochs_per_step < 1:
        raise ConfigValidationError("trainer.epochs_per_step", "must be >= 1")
    if trainer.l2_penalty < 0:
        raise ConfigValidationError("trainer.l2_penalty", "must be >= 0")
    if trainer.batch_size < 1:
        raise ConfigValidationError("trainer.batch_size", "must be >= 1")
    if not MIN_NGRAM_ORDER <= trainer.ngram_order <= MAX_NGRAM_ORDER:
        raise ConfigValidationError("trainer.ngram_order", f"must lie in {MIN_NGRAM_ORDER}..{MAX_NGRAM_ORDER}")
    if trainer.vocabulary_cap is not None and trainer.vocabulary_cap < 1:
        raise ConfigValidationError("trainer.vocabulary_cap", "must be >= 1")

    tracking = cfg.tracking
    if tracking.worker_count < 1:
        raise ConfigValidationError("tracking.worker_count", "must be >= 1")
    if not tracking.revision.strip():
        raise ConfigValidationError("tracking.revision", "is required")


def serialize_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True, allow_unicode=True)


def _canonical(value: Any) -> Any:
    if value is None or isinstance(value, (bool, str)):
        return value
    if isinstance(value, int):
        return value
    if isinstance(value, float):
        return format(value, ".17g")
    if isinstance(value, dict):
        return {str(k): _canonical(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_canonical(v) for v in value]
    raise TypeError(f"cannot canonicalize {type(value).__name__}")


def canonical_bytes(value: Any) -> bytes:
    return json.dumps(_canonical(value), sort_keys=True, ensure_ascii=False, separators=(",", ":")).encode("utf-8")


def digest(value: Any) -> str:
    return hashlib.sha256(canonical_bytes(value)).hexdigest()


def config_fingerprint(cfg: ExperimentConfig) -> str:
    tree = cfg.to_dict()
    return digest({name: tree[name] for name in FINGERPRINT_SECTIONS})


def scoped_fingerprint(
    cfg: ExperimentConfig,
    sections: Sequence[str],
    exclude: Sequence[str] = (),
    extra: Optional[Dict[str, Any]] = None,
) -> str:
    """Digest of the config subtree a pipeline step consumes.

    ``exclude`` holds dotted leaf paths left out of the digest and ``extra``
    carries non-config inputs such as upstream artifact digests.
    """
    tree = cfg.to_dict()
    scoped = {name: dict(tree[name]) for name in sections}
    for dotted in exclude:
        section, key = dotted.split(".", 1)
        scoped.get(section, {}).pop(key, None)
    if extra:
        scoped["_inputs"] = extra
    return digest(scoped)


def default_config(source_path: str, revision: str, **sections: Dict[str, Any]) -> ExperimentConfig:
    tree: Dict[str, Any] = {"data": {"source_path": source_path}, "tracking": {"revision": revision}}
    return config_from_dict(merge_trees(tree, sections))
