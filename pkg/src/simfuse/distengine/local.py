"""In-process parallel executor for a job manifest."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from typing import Mapping, Sequence

from .. import dtw
from ..dtw import VariateDistanceBlock, block_from_candidates, merge_blocks
from ..model import Cohort
from .plan import JobManifest, TaskSpec

_proc_cohort: Cohort | None = None


def run_task(cohort: Cohort, task: TaskSpec, cfg: dtw.DtwConfig) -> VariateDistanceBlock:
    return block_from_candidates(cohort, task.variate_id, task.target_ids, task.candidates, cfg)


def _proc_init(cohort: Cohort) -> None:
    global _proc_cohort
    _proc_cohort = cohort


def _proc_run(task: TaskSpec, cfg: dtw.DtwConfig) -> VariateDistanceBlock:
    return run_task(_proc_cohort, task, cfg)


def assemble(manifest: JobManifest, results: Mapping[int, VariateDistanceBlock]) -> list[VariateDistanceBlock]:
    """One block per variate, task slices concatenated in task-id order."""
    by_variate: dict[str, list[VariateDistanceBlock]] = {}
    for task in sorted(manifest.tasks, key=lambda t: t.task_id):
        by_variate.setdefault(task.variate_id, []).append(results[task.task_id])
    return [merge_blocks(by_variate[v]) for v in manifest.variates]


def run_local(manifest: JobManifest, cohort: Cohort, workers: int = 1,
              executor: str | None = None) -> list[VariateDistanceBlock]:
    """Execute every task on a pool of *workers*; output is independent of *workers*.

    Threads are the default when the compiled kernel is present, since it
    releases the GIL; otherwise tasks go to a process pool.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if executor is None:
        executor = "thread" if dtw.KERNEL == "native" else "process"
    cfg = manifest.dtw
    tasks: Sequence[TaskSpec] = manifest.tasks
    if workers == 1:
        results = {t.task_id: run_task(cohort, t, cfg) for t in tasks}
    elif executor == "thread":
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futs = {t.task_id: pool.submit(run_task, cohort, t, cfg) for t in tasks}
            results = {tid: f.result() for tid, f in futs.items()}
    elif executor == "process":
        with ProcessPoolExecutor(max_workers=workers, initializer=_proc_init, initargs=(cohort,)) as pool:
            futs = {t.task_id: pool.submit(_proc_run, t, cfg) for t in tasks}
            results = {tid: f.result() for tid, f in futs.items()}
    else:
        raise ValueError(f"unknown executor {executor!r}")
    return assemble(manifest, results)
