"""Rank-k Cholesky factor up/down-dating with a panelled parallel executor."""

from .harness import ExperimentConfig, Impl, TrialResult, gen_instance, run_sweep, run_trial
from .kernel import (
    AsymmetricInput,
    IndefiniteDowndate,
    NonPositivePivot,
    NotPositiveDefinite,
    OpCounts,
    RotCoeffs,
    Sigma,
    chol_factor,
    modify_a,
    modify_b,
    modify_rank_k,
    rot_apply,
    rot_compute,
)
from .matrix import DenseMat, Precision, TriFactor, UpdateMat, mat_read, mat_write, tri_transpose_mul
from .panel import PanelParams, PanelPlan, TrafficStats, build_plan, run_panelled, traffic_report

__version__ = "0.1.0"
