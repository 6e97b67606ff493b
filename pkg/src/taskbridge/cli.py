"""Benchmark harness: configuration, sweeps, baselines, CSV/JSON output.

Every matrix cell runs the mini-app under its configured integration mode
and, unless the cell already is the fence baseline, once more in fence mode
at otherwise identical parameters. The fence run only feeds the cell's
speedup_vs_fence column; one cell emits one row. Cells execute
sequentially, one runtime at a time.

Exit codes: 0 success, 1 usage error, 2 a cell failed, 3 checksum mismatch
between cells, 130 interrupted.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

from .bridge import Integration, IntegrationMode
from .device import ClockMode, LatencyModel, VirtualDevice
from .executors import AggregationExecutor, BufferPool, ExecutorPool
from .miniapp import (
    KERNEL_KINDS,
    ScenarioConfig,
    ScenarioResult,
    build_scenario,
    kernel_transform,
    run_scenario,
)
from .pump import VirtualClockPump
from .runtime import Runtime

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUN_FAILED = 2
EXIT_CHECKSUM = 3
EXIT_INTERRUPTED = 130

CSV_COLUMNS = ("workers", "executors", "max_agg", "mode", "barrier_elision",
               "mean_step_ms", "stddev_ms", "speedup_vs_fence", "launches",
               "mean_batch", "checksum")


@dataclass(frozen=True)
class RunConfig:
    """One benchmark cell."""

    workers: int = 8
    executors: int = 32
    max_agg: int = 8
    integration: IntegrationMode = IntegrationMode.POLLING
    barrier_elision: bool = False
    clock: ClockMode = ClockMode.REAL
    subgrids: int = 64
    steps: int = 15
    seed: int = 1234
    repeats: int = 3
    compute_slots: int = 16
    hosttask_threads: int = 2
    hosttask_dispatch_us: float = 250.0
    event_pool: bool = False
    inject_barriers: bool = True
    latency: LatencyModel = LatencyModel()
    watchdog: float = 120.0


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad flags; the harness contract says 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _positive(flag: str):
    def convert(text: str) -> int:
        try:
            value = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{flag} expects an integer")
        if value < 1:
            raise argparse.ArgumentTypeError(f"{flag} must be >= 1")
        return value
    return convert


def _nonneg_float(flag: str):
    def convert(text: str) -> float:
        try:
            value = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{flag} expects a number")
        if value < 0:
            raise argparse.ArgumentTypeError(f"{flag} must be >= 0")
        return value
    return convert


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(
        prog="taskbridge-bench",
        description="Benchmark event-polling, host-task, and fence bridging "
                    "of a simulated accelerator into a worker-pool runtime.",
    )
    p.add_argument("--workers", type=_positive("--workers"), default=8)
    p.add_argument("--executors", type=_positive("--executors"), default=32)
    p.add_argument("--max-agg", type=_positive("--max-agg"), default=8,
                   help="max kernels fused per aggregated launch")
    p.add_argument("--integration", choices=[m.value for m in IntegrationMode],
                   default="polling")
    p.add_argument("--barrier-elision", choices=["on", "off"], default="off")
    p.add_argument("--clock", choices=["real", "virtual"], default="real")
    p.add_argument("--subgrids", type=_positive("--subgrids"), default=64)
    p.add_argument("--steps", type=_positive("--steps"), default=15)
    p.add_argument("--seed", type=int, default=1234)
    p.add_argument("--repeats", type=_positive("--repeats"), default=None,
                   help="default: 3 in real clock mode, 1 in virtual")
    p.add_argument("--compute-slots", type=_positive("--compute-slots"), default=16)
    p.add_argument("--hosttask-threads", type=_positive("--hosttask-threads"), default=2)
    p.add_argument("--hosttask-dispatch-us",
                   type=_nonneg_float("--hosttask-dispatch-us"), default=250.0)
    p.add_argument("--event-pool", choices=["on", "off"], default="off",
                   help="on: events come from an internal pool at zero alloc cost")
    p.add_argument("--inject-barriers", choices=["on", "off"], default="on")
    p.add_argument("--sweep", choices=["executors", "aggregation", "workers", "none"],
                   default="none")
    p.add_argument("--output", choices=["csv", "json"], default="csv")
    p.add_argument("--out", default=None, help="output path (default: stdout)")
    p.add_argument("--watchdog", type=_nonneg_float("--watchdog"), default=120.0)
    p.add_argument("--latency.kernel-fixed-us", dest="lat_kernel_fixed_us",
                   type=_nonneg_float("--latency.kernel-fixed-us"), default=50.0)
    p.add_argument("--latency.kernel-per-item-us", dest="lat_kernel_per_item_us",
                   type=_nonneg_float("--latency.kernel-per-item-us"), default=0.05)
    p.add_argument("--latency.copy-per-byte-ns", dest="lat_copy_per_byte_ns",
                   type=_nonneg_float("--latency.copy-per-byte-ns"), default=0.2)
    p.add_argument("--latency.barrier-us", dest="lat_barrier_us",
                   type=_nonneg_float("--latency.barrier-us"), default=10.0)
    p.add_argument("--latency.submit-us", dest="lat_submit_us",
                   type=_nonneg_float("--latency.submit-us"), default=3.0)
    p.add_argument("--latency.event-alloc-us", dest="lat_event_alloc_us",
                   type=_nonneg_float("--latency.event-alloc-us"), default=1.0)
    return p


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    return build_parser().parse_args(argv)


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    clock = ClockMode.REAL if ns.clock == "real" else ClockMode.VIRTUAL
    repeats = ns.repeats
    if repeats is None:
        repeats = 3 if clock is ClockMode.REAL else 1
    latency = LatencyModel(
        kernel_fixed=ns.lat_kernel_fixed_us * 1e-6,
        kernel_per_item=ns.lat_kernel_per_item_us * 1e-6,
        copy_per_byte=ns.lat_copy_per_byte_ns * 1e-9,
        barrier_cost=ns.lat_barrier_us * 1e-6,
        submit_cost=ns.lat_submit_us * 1e-6,
        event_alloc_cost=ns.lat_event_alloc_us * 1e-6,
    )
    return RunConfig(
        workers=ns.workers,
        executors=ns.executors,
        max_agg=ns.max_agg,
        integration=IntegrationMode(ns.integration),
        barrier_elision=ns.barrier_elision == "on",
        clock=clock,
        subgrids=ns.subgrids,
        steps=ns.steps,
        seed=ns.seed,
        repeats=repeats,
        compute_slots=ns.compute_slots,
        hosttask_threads=ns.hosttask_threads,
        hosttask_dispatch_us=ns.hosttask_dispatch_us,
        event_pool=ns.event_pool == "on",
        inject_barriers=ns.inject_barriers == "on",
        latency=latency,
        watchdog=ns.watchdog,
    )


def sweep_cells(base: RunConfig, sweep: str) -> List[RunConfig]:
    if sweep == "executors":
        return [replace(base, executors=e, max_agg=1)
                for e in (1, 2, 4, 8, 16, 32, 64, 128)]
    if sweep == "aggregation":
        return [replace(base, executors=1, max_agg=m)
                for m in (1, 2, 4, 8, 16, 32, 64)]
    if sweep == "workers":
        return [replace(base, workers=w) for w in (1, 2, 4, 8)]
    return [base]


def run_single(cfg: RunConfig) -> ScenarioResult:
    """One full mini-app run under one configuration; fresh stack each time."""
    runtime = Runtime(cfg.workers, seed=cfg.seed)
    device = VirtualDevice(
        compute_slots=cfg.compute_slots,
        clock_mode=cfg.clock,
        latency=cfg.latency,
        hosttask_threads=cfg.hosttask_threads,
        hosttask_dispatch_cost=cfg.hosttask_dispatch_us * 1e-6,
        barrier_elision=cfg.barrier_elision,
        event_pool=cfg.event_pool,
    )
    try:
        integration = Integration(runtime, device, cfg.integration)
        executors = ExecutorPool(integration, cfg.executors)
        buffers = BufferPool(device)
        aggs = [AggregationExecutor(ex, cfg.max_agg, buffers,
                                    inject_barriers=cfg.inject_barriers)
                for ex in executors.executors]
        for agg in aggs:
            for kind in range(KERNEL_KINDS):
                agg.register_kind(kind, kernel_transform(kind))
        scenario = build_scenario(ScenarioConfig(
            subgrids=cfg.subgrids, steps=cfg.steps,
            inject_barriers=cfg.inject_barriers))
        aggs_by_grid = [aggs[executors.acquire().id] for _ in range(cfg.subgrids)]
        pump = None
        if cfg.clock is ClockMode.VIRTUAL:
            pump = VirtualClockPump(runtime, device, watchdog_seconds=cfg.watchdog)
        return run_scenario(scenario, runtime, device, aggs, aggs_by_grid,
                            pump=pump, step_timeout=cfg.watchdog)
    finally:
        runtime.shutdown()
        device.destroy()


@dataclass
class CellResult:
    cfg: RunConfig
    mean_step_ms: float
    stddev_ms: float
    launches: int
    mean_batch: float
    checksum: float


def run_cell(cfg: RunConfig) -> CellResult:
    """Run a cell ``repeats`` times and report the median-mean repeat."""
    results = [run_single(cfg) for _ in range(cfg.repeats)]
    checksums = {r.checksum for r in results}
    if len(checksums) != 1:
        raise RuntimeError(f"checksum varies across repeats: {sorted(checksums)}")
    means = [statistics.fmean(r.step_ms) for r in results]
    order = sorted(range(len(results)), key=means.__getitem__)
    pick = order[len(order) // 2]
    chosen = results[pick]
    sizes = [s for m in chosen.per_step for s in m.batch_sizes]
    return CellResult(
        cfg=cfg,
        mean_step_ms=means[pick],
        stddev_ms=statistics.pstdev(chosen.step_ms),
        launches=sum(m.launches for m in chosen.per_step),
        mean_batch=(sum(sizes) / len(sizes)) if sizes else 0.0,
        checksum=chosen.checksum,
    )


def _row(res: CellResult, speedup: float) -> dict:
    cfg = res.cfg
    return {
        "workers": cfg.workers,
        "executors": cfg.executors,
        "max_agg": cfg.max_agg,
        "mode": cfg.integration.value,
        "barrier_elision": "on" if cfg.barrier_elision else "off",
        "mean_step_ms": res.mean_step_ms,
        "stddev_ms": res.stddev_ms,
        "speedup_vs_fence": speedup,
        "launches": res.launches,
        "mean_batch": res.mean_batch,
        "checksum": res.checksum,
    }


def run_matrix(cells: List[RunConfig]) -> Tuple[List[dict], List[Tuple[RunConfig, BaseException]]]:
    """Run all cells plus fence baselines; failures don't stop the matrix.

    KeyboardInterrupt is deliberately not isolated: one Ctrl-C must abort
    the whole sweep, not just the cell it landed in.
    """
    rows: List[dict] = []
    failures: List[Tuple[RunConfig, Exception]] = []
    for cfg in cells:
        try:
            main_res = run_cell(cfg)
        except Exception as e:  # cell isolation by contract
            failures.append((cfg, e))
            continue
        if cfg.integration is IntegrationMode.FENCE:
            rows.append(_row(main_res, 1.0))
            continue
        fence_cfg = replace(cfg, integration=IntegrationMode.FENCE)
        try:
            fence_res = run_cell(fence_cfg)
        except Exception as e:
            failures.append((fence_cfg, e))
            continue
        rows.append(_row(main_res, fence_res.mean_step_ms / main_res.mean_step_ms))
    return rows, failures


def _sorted_rows(rows: List[dict]) -> List[dict]:
    return sorted(rows, key=lambda r: (r["mode"], r["executors"],
                                       r["max_agg"], r["workers"]))


def format_csv(rows: List[dict]) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for r in _sorted_rows(rows):
        lines.append(
            f"{r['workers']},{r['executors']},{r['max_agg']},{r['mode']},"
            f"{r['barrier_elision']},{r['mean_step_ms']:.6f},"
            f"{r['stddev_ms']:.6f},{r['speedup_vs_fence']:.6f},"
            f"{r['launches']},{r['mean_batch']:.4f},"
            f"{float.hex(r['checksum'])}"
        )
    return "\n".join(lines) + "\n"


def format_json(rows: List[dict]) -> str:
    out = []
    for r in _sorted_rows(rows):
        item = dict(r)
        item["checksum"] = float.hex(r["checksum"])
        out.append(item)
    return json.dumps(out, indent=2, sort_keys=True) + "\n"


def emit(rows: List[dict], fmt: str, path: Optional[str]) -> None:
    text = format_csv(rows) if fmt == "csv" else format_json(rows)
    if path is None:
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def main(argv: Optional[Sequence[str]] = None) -> int:
    ns = parse_args(argv)
    base = config_from_args(ns)
    cells = sweep_cells(base, ns.sweep)
    try:
        rows, failures = run_matrix(cells)
    except KeyboardInterrupt:
        print("taskbridge-bench: interrupted", file=sys.stderr)
        return EXIT_INTERRUPTED
    try:
        emit(rows, ns.output, ns.out)
    except OSError as e:
        print(f"taskbridge-bench: cannot write output: {e}", file=sys.stderr)
        return EXIT_RUN_FAILED
    for cfg, err in failures:
        print(f"taskbridge-bench: cell failed "
              f"(mode={cfg.integration.value} W={cfg.workers} E={cfg.executors} "
              f"M={cfg.max_agg}): {err!r}", file=sys.stderr)
    if failures:
        return EXIT_RUN_FAILED
    if len({float.hex(r["checksum"]) for r in rows}) > 1:
        print("taskbridge-bench: checksum mismatch across cells", file=sys.stderr)
        return EXIT_CHECKSUM
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
