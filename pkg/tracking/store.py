"""File-based run store.

Layout under the store root::

    index.db                 sqlite index: runs, artifacts, events
    runs/<run_id>/params.yaml
    runs/<run_id>/status
    runs/<run_id>/metrics    append-only "step_index,name,value" lines
    runs/<run_id>/proposals  append-only "step_index<TAB>id id ..." lines
    runs/<run_id>/artifacts/

Writers serialize through sqlite's file lock on the index plus one
in-process lock for the append-only files.
"""

import hashlib
import logging
import os
import re
import sqlite3
import threading
from contextlib import closing
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Set, Tuple, Union

import yaml

from simulation.errors import CorruptArtifactError, RunNotFoundError, StoreError
from simulation.settings import STORE_ENV_VAR

logger = logging.getLogger(__name__)

INDEX_FILE = "index.db"
RUNNING, SUCCESS, FAILED = "running", "success", "failed"
STATUSES = (RUNNING, SUCCESS, FAILED)


def _candidate_roots(flag: Optional[str], configured: Optional[str]) -> List[str]:
    candidates = [flag, os.environ.get(STORE_ENV_VAR), configured, os.path.join(os.getcwd(), "runs")]
    return [c for c in candidates if c]


def resolve_store_root(flag: Optional[str] = None, configured: Optional[str] = None) -> Path:
    last_error = None
    for root in _candidate_roots(flag, configured):
        try:
            os.makedirs(root, exist_ok=True)
            return Path(root)
        except OSError as e:
            last_error = e
            logger.warning("cannot use store root %s: %s", root, e)
    raise StoreError(f"no usable store root: {last_error}")


def _slug(step_name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", step_name.lower()).strip("-")


def _read_lines(path: Path) -> Tuple[List[str], Optional[str]]:
    """Complete lines of an append-only file plus its unterminated tail, if any."""
    if not path.exists():
        return [], None
    lines = path.read_text(encoding="utf-8").split("\n")
    tail = lines.pop()
    return lines, (tail or None)


def _drop_torn_tail(path: Path) -> None:
    if not path.exists():
        return
    data = path.read_bytes()
    if data and not data.endswith(b"\n"):
        with open(path, "r+b") as f:
            f.truncate(data.rfind(b"\n") + 1)


@dataclass(frozen=True)
class ArtifactRef:
    run_id: str
    name: str
    digest: str


@dataclass(frozen=True)
class RunRecord:
    run_id: str
    step_name: str
    fingerprint: str
    revision: str
    status: str
    params: Dict[str, Any]

    @property
    def succeeded(self) -> bool:
        return self.status == SUCCESS


class RunStore:
    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self.runs_dir = self.root / "runs"
        self.runs_dir.mkdir(parents=True, exist_ok=True)
        self._append_lock = threading.Lock()
        self.init_store()

    def _connect(self) -> sqlite3.Connection:
        try:
            conn = sqlite3.connect(self.root / INDEX_FILE, timeout=60)
            conn.execute("PRAGMA journal_mode=WAL")
            return conn
        except sqlite3.Error as e:
            raise StoreError(f"store index unreadable: {e}") from e

    def init_store(self) -> None:
        with closing(self._connect()) as conn:
            conn.executescript(
                """
                CREATE TABLE IF NOT EXISTS runs (
                    seq INTEGER PRIMARY KEY AUTOINCREMENT,
                    run_id TEXT UNIQUE,
                    step_name TEXT NOT NULL,
                    fingerprint TEXT NOT NULL,
                    revision TEXT NOT NULL,
                    status TEXT NOT NULL,
                    params TEXT NOT NULL
                );
                CREATE TABLE IF NOT EXISTS artifacts (
                    seq INTEGER PRIMARY KEY AUTOINCREMENT,
                    run_id TEXT NOT NULL,
                    name TEXT NOT NULL,
                    digest TEXT NOT NULL
                );
                CREATE TABLE IF NOT EXISTS events (
                    seq INTEGER PRIMARY KEY AUTOINCREMENT,
                    run_id TEXT NOT NULL,
                    kind TEXT NOT NULL,
                    detail TEXT NOT NULL DEFAULT ''
                );
                """
            )
            conn.commit()

    def run_dir(self, run_id: str) -> Path:
        return self.runs_dir / run_id

    def _record(self, row) -> RunRecord:
        run_id, step_name, fingerprint, revision, status, params = row
        return RunRecord(run_id, step_name, fingerprint, revision, status, yaml.safe_load(params) or {})

    def create_run(self, step_name: str, fingerprint: str, revision: str, params: Dict[str, Any]) -> RunRecord:
        params_text = yaml.safe_dump(params, sort_keys=True, allow_unicode=True)
        with closing(self._connect()) as conn:
            cur = conn.execute(
                "INSERT INTO runs(step_name, fingerprint, revision, status, params) VALUES (?, ?, ?, ?, ?)",
                (step_name, fingerprint, revision, RUNNING, params_text),
            )
            run_id = f"{_slug(step_name)}-{cur.lastrowid:05d}"
            conn.execute("UPDATE runs SET run_id = ? WHERE seq = ?", (run_id, cur.lastrowid))
            conn.commit()

        run_dir = self.run_dir(run_id)
        (run_dir / "artifacts").mkdir(parents=True, exist_ok=True)
        (run_dir / "params.yaml").write_text(params_text, encoding="utf-8")
        (run_dir / "status").write_text(RUNNING + "\n", encoding="utf-8")
        logger.debug("created run %s for %s", run_id, step_name)
        return self.get_run(run_id)

    def get_run(self, run_id: str) -> RunRecord:
        with closing(self._connect()) as conn:
            row = conn.execute(
                "SELECT run_id, step_name, fingerprint, revision, status, params FROM runs WHERE run_id = ?",
                (run_id,),
            ).fetchone()
        if row is None:
            raise RunNotFoundError(f"unknown run id '{run_id}'")
        return self._record(row)

    def runs(self, step_name: Optional[str] = None) -> List[RunRecord]:
        query = "SELECT run_id, step_name, fingerprint, revision, status, params FROM runs"
        args: Tuple = ()
        if step_name is not None:
            query += " WHERE step_name = ?"
            args = (step_name,)
        with closing(self._connect()) as conn:
            rows = conn.execute(query + " ORDER BY seq", args).fetchall()
        return [self._record(row) for row in rows]

    def find_matching_run(self, step_name: str, fingerprint: str, revision: str) -> Optional[RunRecord]:
        """Successful match if any, else the most recent unfinished one, else None."""
        with closing(self._connect()) as conn:
            rows = conn.execute(
                """
                SELECT run_id, step_name, fingerprint, revision, status, params FROM runs
                WHERE step_name = ? AND fingerprint = ? AND revision = ?
                ORDER BY (status = 'success') DESC, seq DESC
                LIMIT 1
                """,
                (step_name, fingerprint, revision),
            ).fetchall()
        return self._record(rows[0]) if rows else None

    def begin_step(
        self, step_name: str, fingerprint: str, revision: str, params: Dict[str, Any], resume: bool = False
    ) -> Tuple[RunRecord, bool]:
        """Return ``(record, cached)`` for a pipeline step.

        A successful match is a cache hit. With ``resume`` an unfinished match
        is reopened; otherwise a fresh record is created.
        """
        match = self.find_matching_run(step_name, fingerprint, revision)
        if match is not None and match.succeeded:
            logger.info("%s: matching run %s found, skipped", step_name, match.run_id)
            return match, True
        if match is not None and resume:
            if match.status == RUNNING:
                logger.warning("%s: picking up stale running record %s", step_name, match.run_id)
            else:
                logger.info("%s: resuming failed run %s", step_name, match.run_id)
            self.set_status(match.run_id, RUNNING)
            return self.get_run(match.run_id), False
        record = self.create_run(step_name, fingerprint, revision, params)
        logger.info("%s: started run %s", step_name, record.run_id)
        return record, False

    def set_status(self, run_id: str, status: str) -> None:
        if status not in STATUSES:
            raise StoreError(f"unknown status '{status}'")
        with closing(self._connect()) as conn:
            row = conn.execute("SELECT status FROM runs WHERE run_id = ?", (run_id,)).fetchone()
            if row is None:
                raise RunNotFoundError(f"unknown run id '{run_id}'")
            if row[0] == SUCCESS and status != SUCCESS:
                raise StoreError(f"run {run_id} already succeeded; success records are final")
            conn.execute("UPDATE runs SET status = ? WHERE run_id = ?", (status, run_id))
            conn.commit()
        (self.run_dir(run_id) / "status").write_text(status + "\n", encoding="utf-8")

    def _append(self, run_id: str, filename: str, text: str) -> None:
        path = self.run_dir(run_id) / filename
        with self._append_lock:
            _drop_torn_tail(path)
            with open(path, "a", encoding="utf-8") as f:
                f.write(text)
                f.flush()
                os.fsync(f.fileno())

    def log_metrics(self, run_id: str, step_index: int, metrics: Dict[str, float]) -> None:
        lines = "".join(f"{step_index},{name},{float(value)!r}\n" for name, value in metrics.items())
        self._append(run_id, "metrics", lines)

    def metrics(self, run_id: str) -> List[Tuple[int, str, float]]:
        """Committed metric rows.

        A step's lines go out in one write, so an unterminated last line means
        that write was cut short: its step's rows are dropped. When the torn
        text is too short to name its step, the last complete step goes too.
        A step logged again after a resume replaces its earlier rows.
        """
        lines, torn = _read_lines(self.run_dir(run_id) / "metrics")
        steps: Dict[int, List[Tuple[int, str, float]]] = {}
        names: Set[str] = set()
        current: Optional[int] = None
        for number, line in enumerate(lines, 1):
            try:
                step_index, rest = line.split(",", 1)
                name, value = rest.rsplit(",", 1)
                row = (int(step_index), name, float(value))
            except ValueError:
                raise CorruptArtifactError(f"run {run_id}: malformed metrics line {number}: {line!r}") from None
            if row[0] != current or name in names:
                current, names = row[0], set()
                steps[current] = []
            names.add(name)
            steps[current].append(row)
        if torn is not None:
            head, sep, _ = torn.partition(",")
            dropped = int(head) if sep and head.isdigit() else current
            logger.warning("run %s: ignoring torn metrics line %r (step %s)", run_id, torn, dropped)
            steps.pop(dropped, None)
        return [row for step_index in sorted(steps) for row in steps[step_index]]

    def append_proposal(self, run_id: str, step_index: int, ids: Sequence[int]) -> None:
        self._append(run_id, "proposals", f"{step_index}\t{' '.join(str(i) for i in ids)}\n")

    def proposals(self, run_id: str) -> List[Tuple[int, List[int]]]:
        """Proposal batches by step index; a step re-proposed after a resume keeps its last entry."""
        lines, torn = _read_lines(self.run_dir(run_id) / "proposals")
        if torn is not None:
            logger.warning("run %s: ignoring torn proposal line %r", run_id, torn)
        batches: Dict[int, List[int]] = {}
        for number, line in enumerate(lines, 1):
            try:
                step_index, ids = line.split("\t", 1)
                batches[int(step_index)] = [int(i) for i in ids.split()]
            except ValueError:
                raise CorruptArtifactError(f"run {run_id}: malformed proposal line {number}") from None
        return sorted(batches.items())

    def log_artifact(self, run_id: str, name: str, data: bytes) -> ArtifactRef:
        path = self.run_dir(run_id) / "artifacts" / name
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(data)
        os.replace(tmp, path)
        digest = hashlib.sha256(data).hexdigest()
        with closing(self._connect()) as conn:
            conn.execute("INSERT INTO artifacts(run_id, name, digest) VALUES (?, ?, ?)", (run_id, name, digest))
            conn.commit()
        return ArtifactRef(run_id, name, digest)

    def artifact_ref(self, run_id: str, name: str) -> Optional[ArtifactRef]:
        with closing(self._connect()) as conn:
            row = conn.execute(
                "SELECT digest FROM artifacts WHERE run_id = ? AND name = ? ORDER BY seq DESC LIMIT 1",
                (run_id, name),
            ).fetchone()
        return ArtifactRef(run_id, name, row[0]) if row else None

    def artifact_path(self, ref: ArtifactRef) -> Path:
        return self.run_dir(ref.run_id) / "artifacts" / ref.name

    def load_artifact(self, ref: ArtifactRef) -> bytes:
        path = self.artifact_path(ref)
        try:
            data = path.read_bytes()
        except FileNotFoundError:
            raise CorruptArtifactError(f"artifact {ref.name} of run {ref.run_id} is missing") from None
        if hashlib.sha256(data).hexdigest() != ref.digest:
            raise CorruptArtifactError(f"artifact {ref.name} of run {ref.run_id} failed its digest check")
        return data

    def require_artifact(self, run_id: str, name: str) -> bytes:
        ref = self.artifact_ref(run_id, name)
        if ref is None:
            raise CorruptArtifactError(f"run {run_id} has no artifact {name}")
        return self.load_artifact(ref)

    def log_event(self, run_id: str, kind: str, detail: str = "") -> None:
        with closing(self._connect()) as conn:
            conn.execute("INSERT INTO events(run_id, kind, detail) VALUES (?, ?, ?)", (run_id, kind, detail))
            conn.commit()

    def events(self, kind: Optional[str] = None) -> List[Tuple[str, str, str]]:
        query = "SELECT run_id, kind, detail FROM events"
        args: Tuple = ()
        if kind is not None:
            query += " WHERE kind = ?"
            args = (kind,)
        with closing(self._connect()) as conn:
            rows = conn.execute(query + " ORDER BY seq", args).fetchall()
        return [tuple(row) for row in rows]
