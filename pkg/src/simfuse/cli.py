"""Command-line entry point: ``simfuse <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .distengine import JobManifest, serve_job, worker_connect, worker_serve
from .dtw import write_blocks_csv
from .errors import SimfuseError
from .evaluation import evaluate_run
from .model import generate_synthetic_cohort, load_cohort_dir, write_cohort

# RunConfig field -> CLI flag; all default to None so only given flags override --config
RUN_FLAGS = {
    "target": dict(choices=("cad", "chf")),
    "dt_method": dict(choices=("awoe", "zscore", "none")),
    "clustering": dict(choices=("kmeans", "agglomerative", "spectral", "optics")),
    "k_clusters": dict(type=int),
    "lam": dict(type=int, flag="--lambda"),
    "band": dict(type=int),
    "q": dict(type=int),
    "epsilon": dict(type=float),
    "unique_threshold": dict(type=int),
    "seed": dict(type=int),
    "test_fraction": dict(type=float),
    "observation_hours": dict(type=float),
    "workers": dict(type=int),
    "endpoints": dict(type=lambda s: tuple(e for e in s.split(",") if e), help="comma-separated HOST:PORT list"),
    "listen": dict(help="HOST:PORT to accept dialing workers on"),
    "block_size": dict(type=int),
    "timeout_s": dict(type=float),
    "min_samples": dict(type=int),
    "eps_extract": dict(type=float),
    "gamma": dict(type=float),
}


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON RunConfig; flags override its values")
    for name, spec in RUN_FLAGS.items():
        spec = dict(spec)
        flag = spec.pop("flag", "--" + name.replace("_", "-"))
        p.add_argument(flag, dest=name, default=None, **spec)


def _run_config(args) -> pipeline.RunConfig:
    base = json.loads(args.config.read_text(encoding="utf-8")) if args.config else {}
    base = pipeline.RunConfig.from_dict(base).to_dict()
    for name in RUN_FLAGS:
        value = getattr(args, name)
        if value is not None:
            base["lambda" if name == "lam" else name] = value
    return pipeline.RunConfig.from_dict(base)


def _values(raw: str) -> list:
    out = []
    for tok in raw.split(","):
        tok = tok.strip()
        if tok:
            out.append(int(tok) if tok.lstrip("-").isdigit() else float(tok))
    return out


def cmd_gen(args) -> int:
    c = generate_synthetic_cohort(args.n, args.variates, args.length, args.signal, seed=args.seed,
                                  missing_fraction=args.missing, prevalence=args.prevalence)
    write_cohort(c, args.out)
    print(f"{args.out}\t{len(c)} patients\tfingerprint {c.fingerprint[:16]}")
    return 0


def cmd_run(args) -> int:
    cfg = _run_config(args)
    res = pipeline.execute(cfg, args.cohort, args.runs, force=args.force)
    print(json.dumps({"run_dir": str(res.run_dir), "reused": res.reused, **res.report.as_row()}))
    return 0


def cmd_sweep(args) -> int:
    cfg = _run_config(args)
    rows = pipeline.sweep(cfg, args.axis, _values(args.values), args.cohort, args.repeats, args.runs, args.force)
    for row in rows:
        print(json.dumps(row))
    return 0 if all(not r["error"] for r in rows) else 1


def cmd_bench(args) -> int:
    rows = pipeline.bench_dtw(args.n, args.length, _values(args.workers), args.variates, args.seed,
                              args.repeats, args.out)
    for r in rows:
        print(f"n={r['n']} len={r['len']} workers={r['workers']} seconds={r['seconds']:.4f}")
    return 0


def cmd_coordinator(args) -> int:
    manifest = JobManifest.load(args.job)
    blocks = serve_job(manifest, args.listen, timeout_s=args.timeout, wait_s=args.wait,
                       on_ready=lambda a: print(f"listening on {a[0]}:{a[1]}", flush=True))
    write_blocks_csv(blocks, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_worker(args) -> int:
    if args.connect:
        n = worker_connect(args.connect, args.cohort)
        print(f"processed {n} tasks")
    else:
        worker_serve(args.listen, args.cohort, on_ready=lambda a: print(f"{a[0]}:{a[1]}", flush=True))
    return 0


def cmd_eval(args) -> int:
    cfg = json.loads(args.config.read_text(encoding="utf-8")) if args.config else {}
    report = evaluate_run(args.predictions, cfg, args.ledger)
    print(json.dumps(report.as_row()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="simfuse", description="DTW patient-similarity fusion pipeline")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic cohort directory")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--variates", type=int, default=4)
    p.add_argument("--length", type=int, default=100)
    p.add_argument("--signal", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--missing", type=float, default=0.1)
    p.add_argument("--prevalence", type=float, default=0.5)
    p.set_defaults(func=cmd_gen)

    for name, func, help_ in (("run", cmd_run, "run the pipeline once"),
                              ("sweep", cmd_sweep, "run the pipeline over one axis")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--cohort", type=Path, required=True)
        p.add_argument("--runs", type=Path, default=None, help="artifact root (default $SIMFUSE_RUN_DIR or ./runs)")
        p.add_argument("--force", action="store_true", help="recompute even if the run directory exists")
        _add_run_flags(p)
        p.set_defaults(func=func)
    p.add_argument("--axis", required=True, choices=pipeline.SWEEP_AXES)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--repeats", type=int, default=1)

    p = sub.add_parser("bench", help="time the pairwise DTW phase")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--length", type=int, default=200)
    p.add_argument("--workers", default="1", help="comma-separated worker counts")
    p.add_argument("--variates", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("coordinator", help="serve a job to workers that dial in")
    p.add_argument("--job", type=Path, required=True)
    p.add_argument("--listen", required=True, metavar="HOST:PORT")
    p.add_argument("--out", type=Path, default=Path("distances.csv"))
    p.add_argument("--timeout", type=float, default=60.0, help="per-task deadline in seconds")
    p.add_argument("--wait", type=float, default=None, help="give up after this many seconds")
    p.set_defaults(func=cmd_coordinator)

    p = sub.add_parser("worker", help="compute DTW tasks for a coordinator")
    p.add_argument("--cohort", type=Path, required=True)
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--connect", metavar="HOST:PORT")
    mode.add_argument("--listen", metavar="HOST:PORT")
    p.set_defaults(func=cmd_worker)

    p = sub.add_parser("eval", help="score a predictions CSV")
    p.add_argument("--predictions", type=Path, required=True)
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--ledger", type=Path, default=None)
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SimfuseError, ValueError, OSError) as exc:
        print(f"simfuse {args.command}: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
