"""Patient similarity from DTW over ICU time series, fused across variates.

Static features are transformed (aWOE or z-score) and clustered; each test
patient is compared by DTW against training patients in its cluster, one
variate at a time, and labelled by majority vote over the per-variate
nearest neighbours. DTW work can run locally or across TCP workers.
"""
from .dtw import KERNEL, DtwConfig, dtw_distance
from .evaluation import EvalReport, auc, confusion, evaluate_run, metrics
from .fusion import fuse, nearest_neighbors, predict
from .model import Cohort, generate_synthetic_cohort, load_cohort_dir, split_cohort, write_cohort
from .pipeline import RunConfig, bench_dtw, execute, run_pipeline, sweep

__all__ = [
    "KERNEL",
    "Cohort",
    "DtwConfig",
    "EvalReport",
    "RunConfig",
    "auc",
    "bench_dtw",
    "confusion",
    "dtw_distance",
    "evaluate_run",
    "execute",
    "fuse",
    "generate_synthetic_cohort",
    "load_cohort_dir",
    "metrics",
    "nearest_neighbors",
    "predict",
    "run_pipeline",
    "split_cohort",
    "sweep",
    "write_cohort",
]
