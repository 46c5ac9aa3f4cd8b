"""Worker side: load a cohort, register, answer TASK messages with RESULT rows."""
from __future__ import annotations

import logging
import os
import socket
import socketserver
import time
from pathlib import Path
from typing import Callable

from ..model import Cohort, load_cohort_dir
from . import protocol as P
from .local import run_task
from .plan import task_digest

log = logging.getLogger(__name__)


def parse_addr(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"expected HOST:PORT, got {addr!r}")
    return host, int(port)


class WorkerSession:
    """Protocol state for one coordinator connection.

    :meth:`handle` maps one raw input line to the reply message, or to
    ``None`` once the coordinator says DONE. Bad input yields a NACK and the
    session stays usable.
    """

    def __init__(self, cohort: Cohort, name: str | None = None):
        self.cohort = cohort
        self.fingerprint = cohort.fingerprint
        self.name = name or f"{socket.gethostname()}:{os.getpid()}"
        self.tasks_done = 0

    def hello(self) -> dict:
        return P.register(self.name, self.fingerprint)

    def handle(self, raw: bytes | str) -> dict | None:
        try:
            msg = P.decode(raw)
        except P.ProtocolError:
            return P.nack(None, P.MALFORMED)
        kind = msg["t"]
        if kind == P.DONE:
            return None
        if kind != P.TASK:
            return P.nack(msg.get("task_id"), P.UNKNOWN_KIND)
        try:
            spec, cfg = P.parse_task(msg)
        except P.ProtocolError:
            return P.nack(msg.get("task_id"), P.MALFORMED)
        if spec.digest != task_digest(self.fingerprint, cfg):
            return P.nack(spec.task_id, P.FINGERPRINT_MISMATCH)
        try:
            block = run_task(self.cohort, spec, cfg)
        except Exception as exc:
            log.warning("task %s failed: %s", spec.task_id, exc)
            return P.nack(spec.task_id, P.TASK_FAILED)
        self.tasks_done += 1
        return P.result(spec.task_id, block.rows())


def serve_stream(session: WorkerSession, rfile, wfile) -> None:
    """Run one session over binary file objects until DONE or EOF."""
    wfile.write(P.encode(session.hello()))
    wfile.flush()
    for raw in rfile:
        if not raw.strip():
            continue
        reply = session.handle(raw)
        if reply is None:
            return
        wfile.write(P.encode(reply))
        wfile.flush()


def worker_serve(listen_addr: str, cohort_path: str | Path,
                 on_ready: Callable[[tuple[str, int]], None] | None = None) -> None:
    """Listen for coordinators forever; each connection is one session."""
    cohort = load_cohort_dir(cohort_path)
    host, port = parse_addr(listen_addr)

    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            try:
                serve_stream(WorkerSession(cohort), self.rfile, self.wfile)
            except (ConnectionError, BrokenPipeError):
                log.info("coordinator connection dropped")

    class Server(socketserver.ThreadingTCPServer):
        allow_reuse_address = True
        daemon_threads = True

    with Server((host, port), Handler) as srv:
        if on_ready is not None:
            on_ready(srv.server_address[:2])
        srv.serve_forever()


def worker_connect(coordinator_addr: str, cohort_path: str | Path, retry_s: float = 30.0) -> int:
    """Dial a listening coordinator and serve until DONE. Returns tasks processed."""
    cohort = load_cohort_dir(cohort_path)
    host, port = parse_addr(coordinator_addr)
    deadline = time.monotonic() + retry_s
    while True:
        try:
            sock = socket.create_connection((host, port), timeout=10)
            break
        except OSError:
            if time.monotonic() > deadline:
                raise
            time.sleep(0.2)
    sock.settimeout(None)
    session = WorkerSession(cohort)
    with sock, sock.makefile("rb") as rf, sock.makefile("wb") as wf:
        try:
            serve_stream(session, rf, wf)
        except (ConnectionError, BrokenPipeError):
            log.info("coordinator went away")
    return session.tasks_done
