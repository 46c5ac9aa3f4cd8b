"""Line-delimited JSON messages exchanged between coordinator and workers.

One UTF-8 JSON object per line, discriminated by ``"t"``:

    REGISTER  {"t":"REGISTER","worker":name,"fingerprint":hex}
    TASK      {"t":"TASK","task_id":int,"variate":id,"targets":[...],
               "candidates":[[...],...],"dtw":{...},"digest":hex}
    RESULT    {"t":"RESULT","task_id":int,"rows":[[target,candidate,distance],...]}
    NACK      {"t":"NACK","task_id":int|null,"reason":str}
    DONE      {"t":"DONE"}

``candidates`` and ``dtw`` ride along with TASK so a worker only needs the
cohort files; MISSING pairs are simply absent from RESULT rows.
"""
from __future__ import annotations

import json

from .plan import TaskSpec
from ..dtw import DtwConfig

REGISTER, TASK, RESULT, NACK, DONE = "REGISTER", "TASK", "RESULT", "NACK", "DONE"
KINDS = frozenset({REGISTER, TASK, RESULT, NACK, DONE})

# NACK reasons
FINGERPRINT_MISMATCH = "fingerprint_mismatch"
MALFORMED = "malformed"
UNKNOWN_KIND = "unknown_message"
TASK_FAILED = "task_failed"


class ProtocolError(ValueError):
    pass


def encode(msg: dict) -> bytes:
    return (json.dumps(msg, separators=(",", ":"), allow_nan=False) + "\n").encode("utf-8")


def decode(line: bytes | str) -> dict:
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ProtocolError(f"not UTF-8: {exc}") from None
    try:
        msg = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"bad JSON: {exc}") from None
    if not isinstance(msg, dict) or not isinstance(msg.get("t"), str):
        raise ProtocolError("message must be an object with a string 't' field")
    return msg


def register(worker: str, fingerprint: str) -> dict:
    return {"t": REGISTER, "worker": worker, "fingerprint": fingerprint}


def task(spec: TaskSpec, cfg: DtwConfig) -> dict:
    return {"t": TASK, "task_id": spec.task_id, "variate": spec.variate_id,
            "targets": list(spec.target_ids), "candidates": [list(c) for c in spec.candidates],
            "dtw": cfg.to_dict(), "digest": spec.digest}


def result(task_id: int, rows) -> dict:
    return {"t": RESULT, "task_id": task_id, "rows": [[t, c, d] for t, c, d in rows]}


def nack(task_id, reason: str) -> dict:
    return {"t": NACK, "task_id": task_id, "reason": reason}


def done() -> dict:
    return {"t": DONE}


def parse_task(msg: dict) -> tuple[TaskSpec, DtwConfig]:
    try:
        targets = msg["targets"]
        cands = msg["candidates"]
        if not isinstance(targets, list) or not isinstance(cands, list) or len(targets) != len(cands):
            raise ProtocolError("targets/candidates must be equal-length lists")
        spec = TaskSpec(int(msg["task_id"]), str(msg["variate"]), tuple(targets),
                        tuple(tuple(c) for c in cands), str(msg["digest"]))
        cfg = DtwConfig.from_dict(msg.get("dtw") or {})
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed TASK: {exc}") from None
    return spec, cfg
