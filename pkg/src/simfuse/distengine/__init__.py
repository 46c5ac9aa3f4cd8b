"""Coordinator/worker execution of sharded DTW distance jobs."""
from .coordinator import Coordinator, run_distributed, serve_job
from .local import run_local
from .plan import DEFAULT_BLOCK_SIZE, JobManifest, TaskSpec, plan_job, task_digest
from .worker import WorkerSession, worker_connect, worker_serve

__all__ = [
    "Coordinator",
    "DEFAULT_BLOCK_SIZE",
    "JobManifest",
    "TaskSpec",
    "WorkerSession",
    "plan_job",
    "run_distributed",
    "run_local",
    "serve_job",
    "task_digest",
    "worker_connect",
    "worker_serve",
]
