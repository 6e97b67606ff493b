"""Synthetic stencil mini-app: the benchmark workload.

Many small sub-grids (8x8x8 = 512 cells each) advance through time steps.
Per step, each sub-grid runs three sequential chains of five device-kernel
rounds; every round uploads the working cells, applies one elementwise
kernel, and downloads the result, so a sub-grid costs 15 kernels and 30
transfers per step. A CPU ghost-fill against ring neighbors precedes the
chains and a CPU post-process follows them, and a global min-reduction over
per-sub-grid scalars closes the step. All cross-stage ordering is expressed
through futures; no stage waits on an event directly.

The arithmetic is deliberately trivial (cells' = cells * c1[k] + c2[k]) so
checksums are bitwise comparable across every runtime configuration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from time import perf_counter
from typing import List, Optional

import numpy as np

from .device import ClockMode, VirtualDevice
from .executors import AggregationExecutor
from .pump import VirtualClockPump
from .runtime import FutureHandle, Runtime, future_then, when_all

CELLS_PER_SUBGRID = 512  # 8 x 8 x 8
FACE_CELLS = 8
KERNEL_KINDS = 5

# Per-kind multipliers sit near one so 45 applications per step stay in unit
# range; the offsets keep the transform from being a plain rescale.
KERNEL_C1 = (1.0000003, 0.9999998, 1.0000001, 0.9999997, 1.0000002)
KERNEL_C2 = (1e-07, -1e-07, 2e-07, 5e-08, -2e-07)


def kernel_transform(kind: int):
    """In-place elementwise transform for one kernel kind.

    Elementwise means a fused batch applying it to the whole staging buffer
    is bit-identical to per-member launches.
    """
    c1 = KERNEL_C1[kind]
    c2 = KERNEL_C2[kind]

    def transform(view: np.ndarray) -> None:
        view *= c1
        view += c2

    return transform


@dataclass
class ScenarioConfig:
    subgrids: int = 512
    steps: int = 15
    chains_per_step: int = 3
    kernels_per_chain: int = 5
    inject_barriers: bool = True

    @property
    def kernels_per_subgrid_step(self) -> int:
        return self.chains_per_step * self.kernels_per_chain


class SubGrid:
    __slots__ = ("id", "cells")

    def __init__(self, grid_id: int, subgrid_count: int):
        self.id = grid_id
        # cell[i] = id*1000 + i, scaled into the unit interval
        base = np.arange(CELLS_PER_SUBGRID, dtype=np.float64)
        scale = float(subgrid_count * 1000 + CELLS_PER_SUBGRID)
        self.cells = (grid_id * 1000.0 + base) / scale


class Scenario:
    """Sub-grids on a 1D ring, plus the per-step task structure."""

    def __init__(self, cfg: ScenarioConfig):
        if cfg.subgrids < 1:
            raise ValueError("subgrids must be >= 1")
        self.cfg = cfg
        self.grids = [SubGrid(i, cfg.subgrids) for i in range(cfg.subgrids)]

    def face_snapshots(self) -> List[tuple]:
        """Immutable (left_face, right_face) copies, taken before a step so
        ghost fills read a consistent generation regardless of task order."""
        return [(g.cells[:FACE_CELLS].copy(), g.cells[-FACE_CELLS:].copy())
                for g in self.grids]

    def checksum(self) -> float:
        return math.fsum(float(g.cells.sum()) for g in self.grids)


def build_scenario(cfg: ScenarioConfig) -> Scenario:
    return Scenario(cfg)


@dataclass
class StepMetrics:
    wall_ms: float
    dt: float
    checksum_piece: float
    launches: int
    transfers: int
    batch_sizes: List[int] = field(default_factory=list)
    reasons_full: int = 0
    reasons_idle: int = 0
    event_waits: int = 0


def _subgrid_body(grid: SubGrid, agg: AggregationExecutor, cfg: ScenarioConfig,
                  faces: List[tuple]):
    """Generator task driving one sub-grid through one time step."""
    n = cfg.subgrids
    left_ghost = faces[(grid.id - 1) % n][1]   # left neighbor's right face
    right_ghost = faces[(grid.id + 1) % n][0]  # right neighbor's left face

    def body():
        work = grid.cells.copy()
        work[:FACE_CELLS] = 0.5 * (work[:FACE_CELLS] + left_ghost)
        work[-FACE_CELLS:] = 0.5 * (work[-FACE_CELLS:] + right_ghost)
        out = np.empty_like(work)
        for _chain in range(cfg.chains_per_step):
            for kind in range(cfg.kernels_per_chain):
                yield agg.schedule(kind, work, out)
                work, out = out, work
        grid.cells[:] = work
        return (float(work.min()), float(work.sum()))

    return body


def _min_tree(leaves: List[FutureHandle], pool) -> FutureHandle:
    """Pairwise min-reduction as a continuation tree."""
    level = leaves
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level) - 1, 2):
            pair = when_all([level[i], level[i + 1]], pool=pool)
            nxt.append(future_then(pair, min, pool=pool))
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


def submit_step(scenario: Scenario, runtime: Runtime,
                aggs_by_grid: List[AggregationExecutor]) -> FutureHandle:
    """Launch one time step; the future carries (dt, step checksum)."""
    cfg = scenario.cfg
    faces = scenario.face_snapshots()
    pool = runtime.pool
    grid_futs = [
        runtime.submit(_subgrid_body(g, aggs_by_grid[g.id], cfg, faces),
                       label=("grid", g.id))
        for g in scenario.grids
    ]
    mins = [future_then(f, lambda v: v[0], pool=pool) for f in grid_futs]
    dt_fut = _min_tree(mins, pool)
    gathered = when_all(grid_futs, pool=pool)
    # Checksum pieces fold in sub-grid id order; fsum keeps the fold exact
    # and therefore independent of how the work was scheduled.
    sum_fut = future_then(gathered, lambda vs: math.fsum(v[1] for v in vs),
                          pool=pool)
    return future_then(when_all([dt_fut, sum_fut], pool=pool),
                       lambda vs: (vs[0], vs[1]), pool=pool)


@dataclass
class ScenarioResult:
    per_step: List[StepMetrics]
    checksum: float
    dts: List[float]

    @property
    def step_ms(self) -> List[float]:
        return [m.wall_ms for m in self.per_step]


def run_scenario(scenario: Scenario, runtime: Runtime, device: VirtualDevice,
                 aggs: List[AggregationExecutor],
                 aggs_by_grid: List[AggregationExecutor],
                 pump: Optional[VirtualClockPump] = None,
                 step_timeout: float = 120.0) -> ScenarioResult:
    """Run all configured steps and collect per-step metrics."""
    virtual = device.clock_mode is ClockMode.VIRTUAL
    if virtual and pump is None:
        raise ValueError("virtual-mode runs need a VirtualClockPump")
    per_step: List[StepMetrics] = []
    dts: List[float] = []
    checksum = 0.0
    for _step in range(scenario.cfg.steps):
        before = device.snapshot_counters()
        marks = [len(a.batch_sizes) for a in aggs]
        reasons_before = [(a.reasons["full"], a.reasons["idle"]) for a in aggs]
        t0 = device.now() if virtual else perf_counter()
        fut = submit_step(scenario, runtime, aggs_by_grid)
        if virtual:
            dt, piece = pump.drive(fut)
        else:
            dt, piece = fut.result(timeout=step_timeout)
        t1 = device.now() if virtual else perf_counter()
        after = device.snapshot_counters()
        new_sizes: List[int] = []
        full = idle = 0
        for a, mark, (f0, i0) in zip(aggs, marks, reasons_before):
            with a._lock:
                new_sizes.extend(a.batch_sizes[mark:])
                full += a.reasons["full"] - f0
                idle += a.reasons["idle"] - i0
        per_step.append(StepMetrics(
            wall_ms=(t1 - t0) * 1e3,
            dt=dt,
            checksum_piece=piece,
            launches=after["kernels"] - before["kernels"],
            transfers=after["transfers"] - before["transfers"],
            batch_sizes=new_sizes,
            reasons_full=full,
            reasons_idle=idle,
            event_waits=after["event_waits"] - before["event_waits"],
        ))
        checksum += piece
        dts.append(dt)
    return ScenarioResult(per_step=per_step, checksum=checksum, dts=dts)
