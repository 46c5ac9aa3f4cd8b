"""Coordinator: dispatch tasks to workers over TCP and merge results by task id.

Dispatch is at-least-once. A task whose worker misses its deadline, NACKs,
or disconnects goes back to the queue; the first RESULT to arrive for a
task id wins and later duplicates are dropped, so the merged output never
depends on which worker finished what. All task-table mutation happens on
the single asyncio event loop.
"""
from __future__ import annotations

import asyncio
import itertools
import logging
import math
import time
from collections import Counter, deque
from pathlib import Path
from typing import Callable, Sequence

from ..dtw import MISSING, VariateDistanceBlock
from ..errors import FingerprintMismatch, JobIncomplete, NoWorkersAvailable
from . import protocol as P
from .local import assemble
from .plan import JobManifest, TaskSpec
from .worker import parse_addr

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT_S = 60.0
DEFAULT_RETRIES = 3
LINE_LIMIT = 1 << 28  # RESULT lines can be large


def rows_to_block(spec: TaskSpec, rows) -> VariateDistanceBlock:
    """Rebuild a block from RESULT rows; pairs without a row are MISSING."""
    allowed = {t: set(c) for t, c in zip(spec.target_ids, spec.candidates)}
    got: dict[tuple, float] = {}
    if not isinstance(rows, list):
        raise P.ProtocolError("rows must be a list")
    for row in rows:
        if not isinstance(row, list) or len(row) != 3:
            raise P.ProtocolError(f"bad row {row!r}")
        t, c, d = row
        if t not in allowed or c not in allowed[t]:
            raise P.ProtocolError(f"row {t}->{c} is not part of task {spec.task_id}")
        if isinstance(d, bool) or not isinstance(d, (int, float)) or not math.isfinite(d) or d < 0:
            raise P.ProtocolError(f"bad distance {d!r}")
        if (t, c) in got:
            raise P.ProtocolError(f"duplicate row {t}->{c}")
        got[(t, c)] = float(d)
    dists = tuple(tuple(got.get((t, c), MISSING) for c in cands)
                  for t, cands in zip(spec.target_ids, spec.candidates))
    return VariateDistanceBlock(spec.variate_id, spec.target_ids, spec.candidates, dists)


class Coordinator:
    def __init__(self, manifest: JobManifest, timeout_s: float = DEFAULT_TIMEOUT_S,
                 retries: int = DEFAULT_RETRIES,
                 on_result: Callable[[int, str], None] | None = None):
        self.manifest = manifest
        self.timeout_s = timeout_s
        self.retries = retries
        self.on_result = on_result
        self.pending: deque[int] = deque(t.task_id for t in manifest.tasks)
        self.assigned: dict[int, tuple[str, float]] = {}
        self.attempts: Counter = Counter()
        self.results: dict[int, VariateDistanceBlock] = {}
        self.duplicates = 0
        self.failure: BaseException | None = None
        self.live_workers = 0
        self._finished: asyncio.Event | None = None
        self._changed: asyncio.Event | None = None
        self._writers: set[asyncio.StreamWriter] = set()
        self._conn_ids = itertools.count()

    # -- task table (event-loop thread only) --------------------------------

    @property
    def complete(self) -> bool:
        return len(self.results) == len(self.manifest.tasks)

    def _notify(self) -> None:
        old, self._changed = self._changed, asyncio.Event()
        old.set()

    def _finish(self, failure: BaseException | None = None) -> None:
        if failure is not None and self.failure is None:
            self.failure = failure
        self._finished.set()
        self._notify()

    def checkout(self, worker: str) -> TaskSpec | None:
        while self.pending:
            tid = self.pending.popleft()
            if tid in self.results:
                continue
            self.attempts[tid] += 1
            self.assigned[tid] = (worker, time.monotonic() + self.timeout_s)
            return self.manifest.task(tid)
        return None

    def release(self, tid: int, worker: str, reason: str) -> None:
        owner = self.assigned.get(tid)
        if tid in self.results or owner is None or owner[0] != worker:
            return
        del self.assigned[tid]
        log.warning("task %d released from %s (%s), attempt %d", tid, worker, reason, self.attempts[tid])
        if self.attempts[tid] > self.retries:
            self._finish(JobIncomplete(f"task {tid} failed {self.attempts[tid]} times; last: {reason}"))
            return
        self.pending.appendleft(tid)
        self._notify()

    def accept(self, tid: int, rows, worker: str) -> bool:
        if tid in self.results:
            self.duplicates += 1
            return False
        try:
            spec = self.manifest.task(tid)
        except KeyError:
            raise P.ProtocolError(f"unknown task id {tid}") from None
        self.results[tid] = rows_to_block(spec, rows)
        self.assigned.pop(tid, None)
        if self.on_result is not None:
            self.on_result(tid, worker)
        if self.complete:
            self._finish()
        else:
            self._notify()
        return True

    # -- connection handling --------------------------------------------------

    async def _readline(self, reader: asyncio.StreamReader, timeout: float | None) -> bytes:
        if timeout is None:
            return await reader.readline()
        return await asyncio.wait_for(reader.readline(), timeout)

    async def handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        worker = "?"
        try:
            hello = P.decode(await self._readline(reader, self.timeout_s))
            if hello.get("t") != P.REGISTER:
                raise P.ProtocolError("expected REGISTER")
            worker = f"{hello.get('worker')}/{next(self._conn_ids)}"
            if hello.get("fingerprint") != self.manifest.fingerprint:
                log.warning("worker %s serves a different cohort; dropping it", worker)
                return
            self._writers.add(writer)
            self.live_workers += 1
            try:
                await self._serve(worker, reader, writer)
                if self._finished.is_set():
                    writer.write(P.encode(P.done()))
                    await writer.drain()
            finally:
                self.live_workers -= 1
                self._writers.discard(writer)
        except (asyncio.TimeoutError, P.ProtocolError, ConnectionError, asyncio.IncompleteReadError) as exc:
            log.warning("worker %s: %s", worker, exc)
        finally:
            # a connection that dies between checkout and reply must not strand its task
            for tid, (owner, _) in list(self.assigned.items()):
                if owner == worker:
                    self.release(tid, worker, "connection closed")
            self._notify()
            if not writer.is_closing():
                writer.close()

    async def _serve(self, worker: str, reader, writer) -> None:
        while not self._finished.is_set():
            spec = self.checkout(worker)
            if spec is None:
                changed = self._changed
                await changed.wait()
                continue
            writer.write(P.encode(P.task(spec, self.manifest.dtw)))
            await writer.drain()
            if not await self._await_reply(worker, spec.task_id, reader):
                return

    async def _await_reply(self, worker: str, tid: int, reader) -> bool:
        """Read until the reply for *tid*; False when the connection should end."""
        timed_out = False
        deadline = time.monotonic() + self.timeout_s
        while True:
            remaining = deadline - time.monotonic()
            try:
                raw = await self._readline(reader, max(remaining, 0.0))
            except asyncio.TimeoutError:
                self.release(tid, worker, "deadline expired")
                if timed_out:
                    return False  # two deadlines without an answer: give up on this worker
                timed_out = True
                deadline = time.monotonic() + self.timeout_s
                continue
            if not raw:
                self.release(tid, worker, "connection lost")
                return False
            try:
                msg = P.decode(raw)
                kind = msg["t"]
                if kind == P.RESULT:
                    self.accept(int(msg["task_id"]), msg.get("rows"), worker)
                    if msg["task_id"] == tid:
                        return True
                elif kind == P.NACK:
                    reason = str(msg.get("reason"))
                    if msg.get("task_id") == tid or msg.get("task_id") is None:
                        self.release(tid, worker, f"NACK {reason}")
                        return reason != P.FINGERPRINT_MISMATCH
                else:
                    raise P.ProtocolError(f"unexpected {kind}")
            except (P.ProtocolError, KeyError, TypeError, ValueError) as exc:
                self.release(tid, worker, f"bad reply: {exc}")
                return False

    async def _shutdown(self) -> None:
        for w in list(self._writers):
            try:
                w.write(P.encode(P.done()))
                await w.drain()
            except (ConnectionError, RuntimeError):
                pass
            w.close()

    def _prepare(self) -> None:
        self._finished = asyncio.Event()
        self._changed = asyncio.Event()
        if not self.manifest.tasks:
            self._finished.set()

    def blocks(self) -> list[VariateDistanceBlock]:
        if self.failure is not None:
            raise self.failure
        if not self.complete:
            missing = len(self.manifest.tasks) - len(self.results)
            raise JobIncomplete(f"{missing} tasks unfinished")
        return assemble(self.manifest, self.results)

    async def run_dialing(self, endpoints: Sequence[str], connect_timeout: float = 5.0) -> list[VariateDistanceBlock]:
        self._prepare()
        conns = []
        for ep in endpoints:
            host, port = parse_addr(ep)
            try:
                conns.append(await asyncio.wait_for(asyncio.open_connection(host, port, limit=LINE_LIMIT), connect_timeout))
            except (OSError, asyncio.TimeoutError) as exc:
                log.warning("worker %s unreachable: %s", ep, exc)
        if not conns:
            raise NoWorkersAvailable(f"none of {len(endpoints)} worker endpoints reachable")
        handlers = [asyncio.ensure_future(self.handle(r, w)) for r, w in conns]
        all_gone = asyncio.ensure_future(asyncio.gather(*handlers, return_exceptions=True))
        finished = asyncio.ensure_future(self._finished.wait())
        await asyncio.wait({all_gone, finished}, return_when=asyncio.FIRST_COMPLETED)
        await self._shutdown()
        finished.cancel()
        for h in handlers:
            h.cancel()
        await asyncio.gather(*handlers, return_exceptions=True)
        if not self.complete and self.failure is None:
            self.failure = JobIncomplete("all workers disconnected before the job completed")
        return self.blocks()

    async def run_listening(self, host: str, port: int, wait_s: float | None = None,
                            on_ready: Callable[[tuple[str, int]], None] | None = None) -> list[VariateDistanceBlock]:
        self._prepare()
        handlers: set[asyncio.Task] = set()

        def spawn(r, w):
            t = asyncio.ensure_future(self.handle(r, w))
            handlers.add(t)
            t.add_done_callback(handlers.discard)

        server = await asyncio.start_server(spawn, host, port, limit=LINE_LIMIT)
        if on_ready is not None:
            on_ready(server.sockets[0].getsockname()[:2])
        try:
            await asyncio.wait_for(self._finished.wait(), wait_s)
        except asyncio.TimeoutError:
            self.failure = NoWorkersAvailable(f"job not finished within {wait_s}s") if not self.results \
                else JobIncomplete(f"job not finished within {wait_s}s")
        server.close()
        await self._shutdown()
        for h in list(handlers):
            h.cancel()
        await asyncio.gather(*handlers, return_exceptions=True)
        await server.wait_closed()
        return self.blocks()


def run_distributed(manifest: JobManifest, cohort_path: str | Path | None, worker_endpoints: Sequence[str],
                    timeout_s: float = DEFAULT_TIMEOUT_S, retries: int = DEFAULT_RETRIES,
                    on_result: Callable[[int, str], None] | None = None,
                    connect_timeout: float = 5.0) -> list[VariateDistanceBlock]:
    """Dial listening workers and run *manifest* across them.

    *cohort_path*, when given, is checked against the manifest fingerprint
    before any dispatch (workers must serve that same cohort).
    """
    if cohort_path is not None:
        from ..model import load_cohort_dir

        fp = load_cohort_dir(cohort_path).fingerprint
        if fp != manifest.fingerprint:
            raise FingerprintMismatch(f"{cohort_path} does not match the job's cohort fingerprint")
    if not worker_endpoints:
        raise NoWorkersAvailable("no worker endpoints given")
    coord = Coordinator(manifest, timeout_s, retries, on_result)
    return asyncio.run(coord.run_dialing(worker_endpoints, connect_timeout))


def serve_job(manifest: JobManifest, listen_addr: str, timeout_s: float = DEFAULT_TIMEOUT_S,
              retries: int = DEFAULT_RETRIES, wait_s: float | None = None,
              on_ready: Callable[[tuple[str, int]], None] | None = None) -> list[VariateDistanceBlock]:
    """Listen for workers that dial in (``simfuse worker --connect``) and run *manifest*."""
    host, port = parse_addr(listen_addr)
    coord = Coordinator(manifest, timeout_s, retries)
    return asyncio.run(coord.run_listening(host, port, wait_s, on_ready))
