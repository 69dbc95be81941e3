"""Seeded up/down-date experiments: instance generation, trials and sweeps.

Random numbers come from SplitMix64 (Steele, Lea and Flood): output ``i`` is
``mix(seed + (i + 1) * 0x9E3779B97F4A7C15)``, so the whole stream can be
produced with vectorized 64-bit arithmetic. The stream fills ``B`` column by
column, then ``V`` column by column. Uniforms on ``[0, 1)`` take the top 53
bits (double) or 24 bits (single) of each output.
"""

from __future__ import annotations

import csv
import enum
import io
import statistics
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .kernel import (
    IndefiniteDowndate,
    ModifyError,
    NotPositiveDefinite,
    OpCounts,
    Sigma,
    chol_factor,
    modify_a,
    modify_b,
    modify_rank_k,
)
from .matrix import DenseMat, Precision, TriFactor, UpdateMat, tri_transpose_mul
from .panel import PanelParams, TrafficStats, run_panelled

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)

# regression bounds on max|A_target - L~^T L~| for unit-scale instances
ERROR_BOUND = {Precision.DOUBLE: 1e-9, Precision.SINGLE: 1e-2}


def splitmix64(seed: int, count: int, start: int = 0) -> np.ndarray:
    """Outputs ``start .. start+count-1`` of the SplitMix64 stream for ``seed``."""
    idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + idx * GAMMA
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def uniform(seed: int, count: int, precision: Precision, start: int = 0) -> np.ndarray:
    z = splitmix64(seed, count, start)
    if precision is Precision.DOUBLE:
        return (z >> np.uint64(11)).astype(np.float64) * 2.0**-53
    return ((z >> np.uint64(40)).astype(np.float32) * np.float32(2.0**-24)).astype(np.float32)


class Impl(enum.Enum):
    SERIAL_A = "serial-a"
    SERIAL_B = "serial-b"
    RANK_K = "rank-k"
    PANELLED = "panelled"

    @classmethod
    def parse(cls, text: str) -> "Impl":
        key = text.strip().lower()
        aliases = {"serial": cls.RANK_K, "panel": cls.PANELLED, "a": cls.SERIAL_A, "b": cls.SERIAL_B}
        if key in aliases:
            return aliases[key]
        for impl in cls:
            if key in (impl.value, impl.name.lower()):
                return impl
        raise ValueError(f"unknown implementation {text!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    n: int
    k: int
    precision: Precision = Precision.DOUBLE
    direction: Sigma = Sigma.UPDATE
    seed: int = 0
    impl: Impl = Impl.RANK_K
    params: PanelParams = field(default_factory=PanelParams)
    repetitions: int = 1

    def __post_init__(self):
        if self.n < 1 or self.k < 1:
            raise ValueError("n and k must be positive")
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")


@dataclass
class Instance:
    A: DenseMat
    L: TriFactor
    V: UpdateMat
    A_target: DenseMat


@dataclass
class TrialResult:
    error_maxabs: float
    wall_times: list[float]
    op_counts: OpCounts
    traffic: TrafficStats
    factor: TriFactor | None = None

    @property
    def median_time(self) -> float:
        return statistics.median(self.wall_times)


class TrialError(RuntimeError):
    def __init__(self, cfg: ExperimentConfig, cause: Exception):
        self.cfg = cfg
        self.cause = cause
        row = getattr(cause, "row", None)
        super().__init__(
            f"{cause} (seed={cfg.seed}, n={cfg.n}, k={cfg.k}, direction={cfg.direction.name.lower()}"
            + (f", row={row})" if row is not None else ")")
        )


def _gram(x: np.ndarray) -> np.ndarray:
    """``x x^T`` with the upper triangle mirrored so the result is exactly symmetric."""
    g = x @ x.T
    iu = np.triu_indices(g.shape[0], 1)
    g.T[iu] = g[iu]
    return g


def gen_instance(cfg: ExperimentConfig) -> Instance:
    n, k, prec = cfg.n, cfg.k, cfg.precision
    dtype = prec.dtype
    stream = uniform(cfg.seed, n * n + n * k, prec)
    B = stream[: n * n].reshape(n, n).T  # column-major fill
    Vmat = stream[n * n:].reshape(k, n).T
    base = _gram(B.T) + np.eye(n, dtype=dtype)
    vv = _gram(Vmat)
    if cfg.direction is Sigma.UPDATE:
        A, target = base, base + vv
    else:
        A, target = base + vv, base
    try:
        L = chol_factor(DenseMat.from_array(A))
    except NotPositiveDefinite as exc:
        raise RuntimeError(f"generated matrix is not positive definite: {exc}") from exc
    return Instance(DenseMat.from_array(A), L, UpdateMat.from_array(Vmat), DenseMat.from_array(target))


def _run_once(cfg: ExperimentConfig, L: TriFactor, V: UpdateMat, counts: OpCounts, stats: TrafficStats, pool=None):
    if cfg.impl is Impl.RANK_K:
        modify_rank_k(L, V, cfg.direction, counts)
    elif cfg.impl is Impl.PANELLED:
        run_panelled(L, V, cfg.direction, cfg.params, stats, counts, pool=pool)
    else:
        step = modify_a if cfg.impl is Impl.SERIAL_A else modify_b
        for e in range(V.k):
            try:
                step(L, V.column(e), cfg.direction, counts)
            except IndefiniteDowndate as exc:
                raise IndefiniteDowndate(exc.row, e) from None


def run_trial(cfg: ExperimentConfig, instance: Instance | None = None) -> TrialResult:
    """Modify the instance's factor ``repetitions`` times on fresh copies and score the result."""
    inst = instance or gen_instance(cfg)
    times = []
    L = counts = stats = None
    for _ in range(cfg.repetitions):
        L, V = inst.L.copy(), inst.V.copy()
        counts, stats = OpCounts(), TrafficStats()
        t0 = time.perf_counter()
        try:
            _run_once(cfg, L, V, counts, stats)
        except ModifyError as exc:
            raise TrialError(cfg, exc) from exc
        times.append(time.perf_counter() - t0)
    C = tri_transpose_mul(L).to_array()
    err = float(np.max(np.abs(inst.A_target.to_array() - C)))
    return TrialResult(err, times, counts, stats, L)


SWEEP_COLUMNS = [
    "n", "k", "precision", "direction", "impl", "median_time_s",
    "error_maxabs", "applies", "bytes_L_written", "error",
]


def _float(x: float, precision: Precision) -> str:
    return f"{x:.17g}" if precision is Precision.DOUBLE else f"{x:.9g}"


def sweep_rows(base: ExperimentConfig, n_list, impl_list):
    """Yield one dict per (n, impl) cell, in input order."""
    if not n_list or not impl_list:
        raise ValueError("n_list and impl_list must be nonempty")
    for n in n_list:
        for impl in impl_list:
            cfg = replace(base, n=n, impl=impl)
            row = {
                "n": n, "k": cfg.k, "precision": cfg.precision.value,
                "direction": cfg.direction.name.lower(), "impl": impl.value,
                "median_time_s": "", "error_maxabs": "", "applies": "", "bytes_L_written": "", "error": "",
            }
            try:
                res = run_trial(cfg)
            except Exception as exc:  # recorded per cell, sweep goes on
                row["error"] = f"{type(exc).__name__}: {exc}"
            else:
                row.update(
                    median_time_s=f"{res.median_time:.6e}",
                    error_maxabs=_float(res.error_maxabs, cfg.precision),
                    applies=res.op_counts.applies,
                    bytes_L_written=res.traffic.bytes_L_written,
                )
            yield row


def run_sweep(base: ExperimentConfig, n_list, impl_list) -> str:
    """CSV text (header plus one row per cell)."""
    out = io.StringIO()
    w = csv.DictWriter(out, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in sweep_rows(base, n_list, impl_list):
        w.writerow(row)
    return out.getvalue()
