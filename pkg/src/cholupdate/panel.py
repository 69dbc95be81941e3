"""Panelled parallel executor.

The upper triangle is cut into diagonal chunks of edge
``D = blocks_per_kernel * threads_per_block``. For each batch of at most
``elements_per_thread`` update columns the executor sweeps the chunks in order:

* a *diagonal* phase runs the row-ordered serial pass over the ``D x D``
  chunk on the calling thread, once per update column of the batch, leaving
  the coefficient slab for the chunk's rows;
* an *off-diagonal* phase covers the chunk's rows and every column to the
  right. It is split into rectangles ``threads_per_block`` columns wide, each
  an independent pool task that owns its columns of ``L`` and the matching
  rows of ``V``.

A rectangle task mirrors a GPU block: it copies its ``V`` entries into a
private buffer (the per-thread registers), then walks the rows in tiles of
``threads_per_block`` rows, copying the tile's coefficients into a second
buffer (the block's shared memory). For each row it reads an ``L`` element,
applies the batch's rotations and writes it back. Finally it flushes the
private ``V`` buffer. Phases are separated by a full barrier.

The scalar operations and their operands are the same as in
:func:`cholupdate.kernel.modify_rank_k`, so the result is bitwise identical.
"""

from __future__ import annotations

import math
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Literal

import numba
import numpy as np

from .kernel import (
    OpCounts,
    STATUS_OK,
    Sigma,
    _apply,
    _modify_rows,
    _raise_status,
    RotCoeffs,
)
from .matrix import TriFactor, UpdateMat, check_same_precision, row_offsets

# implementation constants of the original GPU code
DEFAULT_BLOCKS_PER_KERNEL = 28
DEFAULT_THREADS_PER_BLOCK = 32
DEFAULT_ELEMENTS_PER_THREAD = 16


def default_workers() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


@dataclass(frozen=True)
class PanelParams:
    blocks_per_kernel: int = DEFAULT_BLOCKS_PER_KERNEL
    threads_per_block: int = DEFAULT_THREADS_PER_BLOCK
    elements_per_thread: int = DEFAULT_ELEMENTS_PER_THREAD
    workers: int = field(default_factory=default_workers)

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 1:
                raise ValueError(f"{f.name} must be positive")

    @property
    def chunk(self) -> int:
        return self.blocks_per_kernel * self.threads_per_block


@dataclass(frozen=True)
class RectTask:
    phase: int
    rows: tuple[int, int]
    cols: tuple[int, int]
    batch: tuple[int, int] | None = None


@dataclass(frozen=True)
class Phase:
    index: int
    kind: Literal["diagonal", "offdiagonal"]
    rows: tuple[int, int]
    cols: tuple[int, int]
    tasks: tuple[RectTask, ...] = ()

    def __str__(self):
        if self.kind == "diagonal":
            return f"Diag[{self.rows[0]},{self.rows[1]})"
        return f"Off[{self.rows[0]},{self.rows[1]})x[{self.cols[0]},{self.cols[1]})"


@dataclass(frozen=True)
class PanelPlan:
    n: int
    k: int
    chunk: int
    params: PanelParams
    phases: tuple[Phase, ...]
    batches: tuple[tuple[int, int], ...]

    @property
    def offdiagonal_phases(self) -> list[Phase]:
        return [p for p in self.phases if p.kind == "offdiagonal"]

    @property
    def rect_count(self) -> int:
        return sum(len(p.tasks) for p in self.phases)

    @property
    def launch_equivalents(self) -> int:
        """Chunks times batches: one launch per chunk row per batch."""
        return math.ceil(self.n / self.chunk) * len(self.batches)

    def tasks_for(self, phase: Phase, batch: tuple[int, int]) -> list[RectTask]:
        return [RectTask(t.phase, t.rows, t.cols, batch) for t in phase.tasks]

    def scratch_model(self, itemsize: int) -> tuple[int, int]:
        """(register, shared) bytes per rectangle task for the widest batch."""
        width = max(b - a for a, b in self.batches)
        reg = self.params.threads_per_block * width * itemsize
        return reg, 2 * reg

    def describe(self) -> str:
        p = self.params
        reg, shm = self.scratch_model(8)
        lines = [
            f"n={self.n} k={self.k} bpk={p.blocks_per_kernel} tpb={p.threads_per_block} "
            f"ept={p.elements_per_thread} workers={p.workers}",
            f"chunk={self.chunk} phases={len(self.phases)} rectangles={self.rect_count} "
            f"batches={len(self.batches)}",
            f"launch_equivalents={self.launch_equivalents} naive_launches={self.n * len(self.batches)}",
            f"scratch_per_task_f64: registers={reg}B shared={shm}B",
            "batches: " + " ".join(f"[{a},{b})" for a, b in self.batches),
        ]
        for ph in self.phases:
            extra = f" rectangles={len(ph.tasks)}" if ph.tasks else ""
            lines.append(f"  {ph.index}: {ph}{extra}")
        return "\n".join(lines)


def build_plan(n: int, k: int, params: PanelParams) -> PanelPlan:
    if n < 1 or k < 1:
        raise ValueError("n and k must be positive")
    D, tpb, ept = params.chunk, params.threads_per_block, params.elements_per_thread
    phases: list[Phase] = []
    for r0 in range(0, n, D):
        r1 = min(r0 + D, n)
        phases.append(Phase(len(phases), "diagonal", (r0, r1), (r0, r1)))
        if r1 < n:
            idx = len(phases)
            tasks = tuple(RectTask(idx, (r0, r1), (c0, min(c0 + tpb, n))) for c0 in range(r1, n, tpb))
            phases.append(Phase(idx, "offdiagonal", (r0, r1), (r1, n), tasks))
    batches = tuple((e0, min(e0 + ept, k)) for e0 in range(0, k, ept))
    plan = PanelPlan(n, k, D, params, tuple(phases), batches)
    _check_disjoint(plan)
    return plan


def _check_disjoint(plan: PanelPlan) -> None:
    for ph in plan.offdiagonal_phases:
        owned = np.zeros(plan.n, dtype=np.int8)
        for t in ph.tasks:
            owned[t.cols[0]:t.cols[1]] += 1
        if owned.max(initial=0) > 1:
            raise AssertionError(f"phase {ph.index}: rectangles share columns")


@dataclass
class TrafficStats:
    """Element traffic in bytes.

    ``bytes_L_read``/``bytes_L_written`` count one element per rotation (the
    logical traffic); the ``global`` fields count what actually crosses the
    task boundary, i.e. one read and one write of each ``L`` element per batch
    in the off-diagonal phases.
    """

    bytes_L_read: int = 0
    bytes_L_written: int = 0
    bytes_V_read: int = 0
    bytes_V_written: int = 0
    bytes_cs_read: int = 0
    bytes_L_global_read: int = 0
    bytes_L_global_written: int = 0
    kernel_launch_equivalents: int = 0
    scratch_shared_peak: int = 0
    scratch_register_peak: int = 0
    diagonal_phases: int = 0
    offdiagonal_phases: int = 0

    def merge(self, other: "TrafficStats") -> None:
        for f in fields(self):
            if f.name.endswith("_peak"):
                setattr(self, f.name, max(getattr(self, f.name), getattr(other, f.name)))
            else:
                setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))


# -- rectangle kernel ---------------------------------------------------------

@numba.njit(nogil=True, cache=True)
def _rect(L, off, V, C, S, sign, r0, r1, c0, c1, e0, e1, tpb, reg, shm, cnt):
    width = e1 - e0
    # V for the owned columns into "registers"
    for j in range(c0, c1):
        for e in range(width):
            reg[j - c0, e] = V[e0 + e, j]
    for t0 in range(r0, r1, tpb):
        t1 = min(t0 + tpb, r1)
        # coefficient slab rows into "shared memory"
        for i in range(t0, t1):
            for e in range(width):
                shm[0, i - t0, e] = C[i, e0 + e]
                shm[1, i - t0, e] = S[i, e0 + e]
        for i in range(t0, t1):
            d = off[i] - i
            for j in range(c0, c1):
                x = L[d + j]
                r = reg[j - c0]
                for e in range(width):
                    x, r[e] = _apply(shm[0, i - t0, e], shm[1, i - t0, e], x, r[e], sign)
                L[d + j] = x
    for j in range(c0, c1):
        for e in range(width):
            V[e0 + e, j] = reg[j - c0, e]
    m = (r1 - r0) * (c1 - c0)
    cnt[1] += m * width
    cnt[2] += m + (c1 - c0) * width + 2 * (r1 - r0) * width
    cnt[3] += m + (c1 - c0) * width


def _task_stats(task: RectTask, tpb: int, itemsize: int) -> TrafficStats:
    (r0, r1), (c0, c1), (e0, e1) = task.rows, task.cols, task.batch
    rows, cols, width = r1 - r0, c1 - c0, e1 - e0
    reg = tpb * width * itemsize
    return TrafficStats(
        bytes_L_read=rows * cols * width * itemsize,
        bytes_L_written=rows * cols * width * itemsize,
        bytes_V_read=cols * width * itemsize,
        bytes_V_written=cols * width * itemsize,
        bytes_cs_read=2 * rows * width * itemsize,
        bytes_L_global_read=rows * cols * itemsize,
        bytes_L_global_written=rows * cols * itemsize,
        scratch_register_peak=reg,
        scratch_shared_peak=2 * reg,
    )


def _diag_stats(r0: int, r1: int, width: int, itemsize: int) -> TrafficStats:
    m = r1 - r0
    applies = width * m * (m - 1) // 2
    return TrafficStats(
        bytes_L_read=applies * itemsize,
        bytes_L_written=applies * itemsize,
        bytes_V_read=width * (m + applies) * itemsize,
        bytes_V_written=width * applies * itemsize,
        bytes_L_global_read=(m * (m + 1) // 2) * itemsize,
        bytes_L_global_written=(m * (m + 1) // 2) * itemsize,
        diagonal_phases=1,
    )


class _EpochGuard:
    """Records any task that runs outside its phase's epoch."""

    def __init__(self):
        self.epoch = -1
        self.violations: list[tuple[int, int]] = []
        self._lock = threading.Lock()

    def check(self, phase: int) -> None:
        if self.epoch != phase:
            with self._lock:
                self.violations.append((phase, self.epoch))


def run_panelled(
    L: TriFactor,
    V: UpdateMat,
    sigma: Sigma,
    params: PanelParams,
    stats: TrafficStats | None = None,
    counts: OpCounts | None = None,
    *,
    coeffs: RotCoeffs | None = None,
    guard: _EpochGuard | None = None,
    pool: ThreadPoolExecutor | None = None,
) -> None:
    """Modify ``L`` in place by ``V`` using the panelled schedule.

    ``coeffs``, when given (shape ``n x k``), receives every coefficient pair.
    ``guard`` is a test hook that checks phase ordering.
    """
    if V.n != L.n:
        raise ValueError(f"V has {V.n} rows, factor has order {L.n}")
    check_same_precision(L, V)
    n, k = L.n, V.k
    plan = build_plan(n, k, params)
    sign = int(Sigma(sigma))
    dtype = L.data.dtype
    itemsize = dtype.itemsize
    tpb = params.threads_per_block
    off = row_offsets(n)
    if coeffs is None:
        coeffs = RotCoeffs.empty(n, k, dtype)
    C, S, Vc = coeffs.c, coeffs.s, V.columns
    stats = stats if stats is not None else TrafficStats()
    local_counts = OpCounts()

    def rect(task: RectTask):
        if guard is not None:
            guard.check(task.phase)
        (r0, r1), (c0, c1), (e0, e1) = task.rows, task.cols, task.batch
        reg = np.empty((tpb, e1 - e0), dtype=dtype)
        shm = np.empty((2, tpb, e1 - e0), dtype=dtype)
        raw = np.zeros(4, dtype=np.int64)
        _rect(L.data, off, Vc, C, S, sign, r0, r1, c0, c1, e0, e1, tpb, reg, shm, raw)
        if guard is not None:
            guard.check(task.phase)
        return raw, _task_stats(task, tpb, itemsize)

    own_pool = pool is None
    pool = pool or ThreadPoolExecutor(max_workers=params.workers, thread_name_prefix="panel")
    try:
        for b, (e0, e1) in enumerate(plan.batches):
            for ph in plan.phases:
                if guard is not None:
                    guard.epoch = ph.index
                if ph.kind == "diagonal":
                    r0, r1 = ph.rows
                    raw = np.zeros(4, dtype=np.int64)
                    for e in range(e0, e1):
                        status, row = _modify_rows(L.data, off, Vc[e], sign, r0, r1, C[:, e], S[:, e], raw)
                        if status != STATUS_OK:
                            local_counts.add_raw(raw)
                            _raise_status(status, row, e, b)
                    local_counts.add_raw(raw)
                    stats.merge(_diag_stats(r0, r1, e1 - e0, itemsize))
                else:
                    results = list(pool.map(rect, plan.tasks_for(ph, (e0, e1))))
                    # barrier: everything below runs after all tasks of the phase
                    for raw, st in results:
                        local_counts.add_raw(raw)
                        stats.merge(st)
                    stats.kernel_launch_equivalents += 1
                    stats.offdiagonal_phases += 1
    finally:
        if own_pool:
            pool.shutdown(wait=True)
        if counts is not None:
            counts += local_counts


def traffic_report(stats: TrafficStats, counts: OpCounts, n: int, k: int, params: PanelParams | None = None) -> str:
    """Human-readable summary followed by ``key,value`` CSV lines.

    With ``params`` the launch count is the plan's ``ceil(n/D) * ceil(k/ept)``
    and the naive count is one launch per row per batch; without, the executed
    off-diagonal phase count and one launch per row per update column are used.
    """
    if params is not None:
        batches = math.ceil(k / params.elements_per_thread) if k else 0
        launches = math.ceil(n / params.chunk) * batches if n else 0
        chunk = params.chunk
    else:
        batches, launches, chunk = k, stats.kernel_launch_equivalents, 0
    naive = n * batches
    l_bytes = stats.bytes_L_read + stats.bytes_L_written
    g_bytes = stats.bytes_L_global_read + stats.bytes_L_global_written
    intensity = counts.applies / l_bytes if l_bytes else 0.0
    g_intensity = counts.applies / g_bytes if g_bytes else 0.0
    rows = [
        ("n", n),
        ("k", k),
        ("chunk", chunk),
        ("computes", counts.computes),
        ("applies", counts.applies),
        ("bytes_L_read", stats.bytes_L_read),
        ("bytes_L_written", stats.bytes_L_written),
        ("bytes_L_global_read", stats.bytes_L_global_read),
        ("bytes_L_global_written", stats.bytes_L_global_written),
        ("bytes_V_read", stats.bytes_V_read),
        ("bytes_V_written", stats.bytes_V_written),
        ("bytes_cs_read", stats.bytes_cs_read),
        ("diagonal_phases", stats.diagonal_phases),
        ("offdiagonal_phases", stats.offdiagonal_phases),
        ("applies_per_L_byte", f"{intensity:.6g}"),
        ("applies_per_L_global_byte", f"{g_intensity:.6g}"),
        ("launch_equivalents", launches),
        ("offdiagonal_launches", stats.kernel_launch_equivalents),
        ("naive_row_launches", naive),
        ("scratch_register_peak", stats.scratch_register_peak),
        ("scratch_shared_peak", stats.scratch_shared_peak),
    ]
    text = [
        f"traffic for n={n} k={k}: {counts.applies} applies over "
        f"{l_bytes} B of L traffic ({g_bytes} B crossing task boundaries)",
        f"arithmetic intensity: {intensity:.6g} applies/B logical, {g_intensity:.6g} applies/B global",
        f"launch equivalents: {launches} (a per-row kernel would need {naive})",
        f"scratch peak: registers {stats.scratch_register_peak} B, shared {stats.scratch_shared_peak} B",
        "",
        "key,value",
    ]
    text += [f"{key},{val}" for key, val in rows]
    return "\n".join(text) + "\n"
