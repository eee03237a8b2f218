from typing import Iterable, Optional


class SimulationError(Exception):
    """Base class for every error raised by the harness."""


class ConfigError(SimulationError):
    pass


class ConfigValidationError(ConfigError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


class CorpusError(SimulationError):
    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{location}{message}")
        self.path = path
        self.line = line


class UnsupportedTaskError(CorpusError):
    pass


class AnnotationError(SimulationError):
    pass


class VocabularyError(SimulationError):
    pass


class TrainingError(SimulationError):
    pass


class CorruptArtifactError(SimulationError):
    pass


class ProposalError(SimulationError):
    pass


class UnknownStrategyError(SimulationError):
    pass


class AlignmentError(SimulationError):
    def __init__(self, message: str, seeds: Iterable[int] = ()):
        self.seeds = sorted(set(seeds))
        if self.seeds:
            message = f"{message} (seeds: {', '.join(str(s) for s in self.seeds)})"
        super().__init__(message)


class FingerprintMismatchError(SimulationError):
    pass


class Interrupted(SimulationError):
    pass


class SeedRunFailed(SimulationError):
    def __init__(self, seed: int, run_id: str, cause: BaseException):
        super().__init__(f"seed run {seed} ({run_id}) failed: {cause}")
        self.seed = seed
        self.run_id = run_id
        self.cause = cause


class ExperimentFailed(SimulationError):
    def __init__(self, failed_seeds: Iterable[int]):
        self.failed_seeds = sorted(failed_seeds)
        seeds = ", ".join(str(s) for s in self.failed_seeds)
        super().__init__(f"seed runs failed: {seeds}; rerun with --resume")


class StoreError(SimulationError):
    pass


class RunNotFoundError(StoreError):
    pass


class ClusteringError(SimulationError):
    pass
