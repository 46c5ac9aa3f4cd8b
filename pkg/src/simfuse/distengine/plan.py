"""Job planning: shard the (variate x target) grid into tasks."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

from ..cluster import ClusterAssignment, cluster_of
from ..dtw import DtwConfig
from ..errors import EmptyJob, InvalidParameter
from ..model import Cohort

DEFAULT_BLOCK_SIZE = 25


def task_digest(fingerprint: str, cfg: DtwConfig) -> str:
    return hashlib.sha256(f"{fingerprint}|{cfg.digest_payload()}".encode()).hexdigest()[:32]


@dataclass(frozen=True)
class TaskSpec:
    task_id: int
    variate_id: str
    target_ids: tuple
    candidates: tuple  # per target, sorted candidate ids
    digest: str

    def to_dict(self) -> dict:
        return {"task_id": self.task_id, "variate": self.variate_id,
                "targets": list(self.target_ids), "candidates": [list(c) for c in self.candidates],
                "digest": self.digest}

    @classmethod
    def from_dict(cls, d) -> "TaskSpec":
        return cls(int(d["task_id"]), str(d["variate"]), tuple(d["targets"]),
                   tuple(tuple(c) for c in d["candidates"]), str(d["digest"]))


@dataclass(frozen=True)
class JobManifest:
    job_id: str
    fingerprint: str
    dtw: DtwConfig
    tasks: tuple[TaskSpec, ...]

    @property
    def variates(self) -> tuple[str, ...]:
        seen = []
        for t in self.tasks:
            if t.variate_id not in seen:
                seen.append(t.variate_id)
        return tuple(seen)

    def task(self, task_id: int) -> TaskSpec:
        return self._by_id[task_id]

    @cached_property
    def _by_id(self) -> dict:
        return {t.task_id: t for t in self.tasks}

    def to_dict(self) -> dict:
        return {"job_id": self.job_id, "fingerprint": self.fingerprint,
                "dtw": self.dtw.to_dict(), "tasks": [t.to_dict() for t in self.tasks]}

    @classmethod
    def from_dict(cls, d) -> "JobManifest":
        return cls(d["job_id"], d["fingerprint"], DtwConfig.from_dict(d["dtw"]),
                   tuple(TaskSpec.from_dict(t) for t in d["tasks"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "JobManifest":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def plan_job(cohort: Cohort, variates: Sequence[str], targets: Sequence, assignment: ClusterAssignment,
             block_size: int = DEFAULT_BLOCK_SIZE, cfg: DtwConfig = DtwConfig(),
             pool: Iterable | None = None) -> JobManifest:
    """Partition every (variate, target) pair into tasks of at most *block_size* targets.

    Task ids run variate-major in the given variate and target order.
    """
    if block_size < 1:
        raise InvalidParameter("block_size must be >= 1")
    if not targets or not variates:
        raise EmptyJob(f"nothing to compute: {len(variates)} variates x {len(targets)} targets")
    pool = None if pool is None else set(pool)
    cands = {t: tuple(cluster_of(assignment, t, pool)) for t in targets}
    digest = task_digest(cohort.fingerprint, cfg)
    tasks = []
    for vid in variates:
        for start in range(0, len(targets), block_size):
            chunk = tuple(targets[start:start + block_size])
            tasks.append(TaskSpec(len(tasks), vid, chunk, tuple(cands[t] for t in chunk), digest))
    job_id = hashlib.sha256(
        json.dumps([digest, [t.to_dict() for t in tasks]], sort_keys=True).encode()
    ).hexdigest()[:16]
    return JobManifest(job_id, cohort.fingerprint, cfg, tuple(tasks))
