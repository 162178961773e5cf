"""Gain sweep over signal controls with replications, persisted as flat CSV.

Layout of an output directory::

    manifest.json        scenario digest, seeds, grid, package version
    scenario.yaml        the scenario as run
    cells/<cell>.csv     per-movement statistics of one (gain, control, replication)
    logs/<cell>.csv      event logs (only with keep_logs)
    queues.csv ratios.csv delays.csv   reports
"""

from __future__ import annotations

import csv
import io
import json
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import __version__
from .des import RngConfig, simulate
from .fluid import FluidSystem, average_queue, integrate, throughput
from .metrics import (
    DEFAULT_WARMUP,
    CellResult,
    DelayReport,
    QueueStats,
    RatioReport,
    Summary,
    delay_band,
    grid_queues,
    ratio_table,
    summarize,
)
from .network import scale
from .scenario import Scenario, dump, load

CELL_COLUMNS = (
    "gain", "control", "replication", "from_link", "to_link", "turn_kind",
    "mean_queue", "mean_delay_s", "served", "arrivals", "censored", "delay_sum_s", "window_s",
)
BACKENDS = ("des", "fluid")


@dataclass(frozen=True)
class ExperimentGrid:
    gains: tuple[float, ...] = (1.0, 1.5, 2.0, 2.5, 3.0)
    controls: tuple[str, ...] = ("ft", "mp4", "mp6")
    replications: int = 20
    seed: int = 0
    duration: float = 3600.0
    warmup: float = DEFAULT_WARMUP

    def __post_init__(self):
        if not self.gains or any(not g > 0 for g in self.gains):
            raise ValueError("gains must be positive")
        if self.replications < 1:
            raise ValueError("need at least one replication")
        if not 0 <= self.warmup < self.duration:
            raise ValueError("need 0 <= warmup < duration")
        for c in self.controls:
            if c not in ("ft", "mp", "mp4", "mp6"):
                raise ValueError(f"unknown control {c!r}")


@dataclass
class ExperimentResult:
    cells: list[CellResult]
    ratios: RatioReport
    delays: DelayReport
    delays_all: DelayReport
    manifest: dict = field(default_factory=dict)

    @property
    def failures(self) -> list[CellResult]:
        return [c for c in self.cells if c.error is not None]


def cell_name(gain: float, control: str, rep: int) -> str:
    return f"{control}_g{gain:g}_r{rep:03d}"


def _run_des_cell(args) -> tuple[CellResult, Optional[str]]:
    scenario, grid, gain, control, rep, keep_log = args
    try:
        net = scale(scenario.network, gain)
        log = simulate(net, scenario.plan(control), grid.duration, RngConfig(grid.seed, rep))
        summary = summarize(log, grid.warmup)
        return CellResult(gain, control, rep, summary), (log.to_csv() if keep_log else None)
    except Exception as exc:  # a failed cell must not stop the grid
        msg = f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}"
        return CellResult(gain, control, rep, error=msg), None


def _run_fluid_cell(scenario: Scenario, grid: ExperimentGrid, gain: float, control: str) -> CellResult:
    """Deterministic fluid run starting empty; delay from Little's law per movement."""
    try:
        if control != "ft":
            raise ValueError("the fluid backend has no max-pressure model")
        net = scale(scenario.network, gain)
        system = FluidSystem.from_network(net, scenario.plan("ft"))
        traj = integrate(system, np.zeros(len(system.ids)), grid.duration)
        window = grid.duration - grid.warmup
        stats = {}
        for i, mid in enumerate(system.ids):
            q = average_queue(traj, i, grid.warmup, window)
            rate = throughput(traj, i, grid.warmup, grid.duration)
            flow = rate * window  # fractional count, so pooled delay = area / flow
            stats[mid] = QueueStats(
                mean_queue=q,
                mean_delay=q / rate if rate > 0 else 0.0,
                served=flow,
                arrivals=flow,
                delay_sum=q * window,
                window=window,
            )
        return CellResult(gain, control, 0, Summary(stats, grid.warmup, grid.duration))
    except Exception as exc:
        return CellResult(gain, control, 0, error=f"{type(exc).__name__}: {exc}")


def cell_rows(cell: CellResult, scenario: Scenario) -> list[tuple]:
    kinds = {m.id: m.turn_kind.value for m in scenario.network.movements}
    rows = []
    for (a, b), s in cell.summary.movements.items():
        rows.append((
            cell.gain, cell.control, cell.replication, a, b, kinds[(a, b)],
            s.mean_queue, s.mean_delay, s.served, s.arrivals, s.censored, s.delay_sum, s.window,
        ))
    return rows


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def run_experiment(
    grid: ExperimentGrid,
    scenario: Scenario,
    out_dir: Optional[Union[str, Path]] = None,
    backend: str = "des",
    keep_logs: bool = False,
    workers: int = 1,
) -> ExperimentResult:
    """Run every (gain, control, replication) cell and build the reports.

    Failed cells are recorded with their error and the grid continues. The
    fluid backend is deterministic, so it runs one replication per cell.
    """
    if backend not in BACKENDS:
        raise ValueError(f"backend must be one of {BACKENDS}")
    out = Path(out_dir) if out_dir is not None else None
    logs: dict[str, str] = {}
    if backend == "des":
        jobs = [
            (scenario, grid, g, c, r, keep_logs and out is not None)
            for c in grid.controls for g in grid.gains for r in range(grid.replications)
        ]
        if workers > 1:
            with ProcessPoolExecutor(workers) as pool:
                results = list(pool.map(_run_des_cell, jobs, chunksize=4))
        else:
            results = [_run_des_cell(j) for j in jobs]
        cells = []
        for cell, text in results:
            cells.append(cell)
            if text is not None:
                logs[cell_name(cell.gain, cell.control, cell.replication)] = text
    else:
        cells = [_run_fluid_cell(scenario, grid, g, c) for c in grid.controls for g in grid.gains]

    manifest = {
        "package_version": __version__,
        "scenario_sha256": scenario.digest(),
        "backend": backend,
        "grid": asdict(grid),
        "seeds": {
            cell_name(c.gain, c.control, c.replication): [grid.seed, c.replication] for c in cells
        },
        "failures": {
            cell_name(c.gain, c.control, c.replication): c.error for c in cells if c.error
        },
    }
    result = build_reports(cells, scenario, manifest)
    if out is not None:
        persist(result, scenario, out, logs)
    return result


def build_reports(cells: list[CellResult], scenario: Scenario, manifest: Optional[dict] = None) -> ExperimentResult:
    queues = grid_queues(cells)
    baseline = 1.0 if any(g == 1.0 for _, g in queues) else min((g for _, g in queues), default=1.0)
    ratios = ratio_table(queues, baseline) if queues else RatioReport([], {}, ["no successful cells"])
    delays = delay_band(cells, scenario.network, "without")
    delays_all = delay_band(cells, scenario.network, "with")
    return ExperimentResult(cells, ratios, delays, delays_all, manifest or {})


def persist(result: ExperimentResult, scenario: Scenario, out: Path, logs: Optional[dict] = None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "cells").mkdir(exist_ok=True)
    dump(scenario, out / "scenario.yaml")
    (out / "manifest.json").write_text(json.dumps(result.manifest, indent=2, sort_keys=True))
    for cell in result.cells:
        if cell.summary is not None:
            _write_csv(out / "cells" / f"{cell_name(cell.gain, cell.control, cell.replication)}.csv",
                       CELL_COLUMNS, cell_rows(cell, scenario))
    if logs:
        (out / "logs").mkdir(exist_ok=True)
        for name, text in logs.items():
            (out / "logs" / f"{name}.csv").write_text(text)
    for name, (header, rows) in report_tables(result).items():
        _write_csv(out / f"{name}.csv", header, rows)


def report_tables(result: ExperimentResult) -> dict[str, tuple[tuple, list]]:
    """Report tables as (header, rows): queues, ratios and delays."""
    queues = [
        (r.control, r.gain, r.mean_total_queue) for r in result.ratios.rows
    ]
    ratios = [
        (r.control, r.gain, r.ratio, r.deviation, result.ratios.mp_ratio.get(r.gain, math.nan))
        for r in result.ratios.rows
    ]
    delays = []
    for label, rep in (("without_rt", result.delays), ("with_rt", result.delays_all)):
        for ctrl, band in rep.bands.items():
            for g, d in sorted(band.delays.items()):
                delays.append((label, ctrl, g, d, band.mean, band.width, band.relative_width))
    return {
        "queues": (("control", "gain", "mean_total_queue"), queues),
        "ratios": (("control", "gain", "ratio_to_baseline", "deviation_from_gain", "mp4_over_mp6"), ratios),
        "delays": (("filter", "control", "gain", "mean_delay_s", "band_mean_s", "band_width_s",
                    "band_relative_width"), delays),
    }


def load_results(out: Union[str, Path]) -> ExperimentResult:
    """Rebuild reports from a persisted experiment directory."""
    out = Path(out)
    scenario = load(out / "scenario.yaml")
    manifest = json.loads((out / "manifest.json").read_text())
    grid = manifest.get("grid", {})
    cells = []
    for path in sorted((out / "cells").glob("*.csv")):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            continue
        stats = {}
        for row in rows:
            stats[(row["from_link"], row["to_link"])] = QueueStats(
                mean_queue=float(row["mean_queue"]),
                mean_delay=float(row["mean_delay_s"]),
                served=_num(row["served"]),
                arrivals=_num(row["arrivals"]),
                censored=int(row["censored"]),
                delay_sum=float(row["delay_sum_s"]),
                window=float(row["window_s"]),
            )
        first = rows[0]
        summary = Summary(stats, float(grid.get("warmup", DEFAULT_WARMUP)), float(grid.get("duration", 0.0)))
        cells.append(CellResult(float(first["gain"]), first["control"], int(first["replication"]), summary))
    return build_reports(cells, scenario, manifest)


def _num(text: str) -> Union[int, float]:
    v = float(text)
    return int(v) if v.is_integer() else v


def format_tables(result: ExperimentResult, tables: Sequence[str] = ("queues", "ratios", "delays"),
                  fmt: str = "csv") -> str:
    """Render report tables as CSV blocks or aligned text."""
    all_tables = report_tables(result)
    buf = io.StringIO()
    for name in tables:
        if name not in all_tables:
            raise ValueError(f"unknown table {name!r}")
        header, rows = all_tables[name]
        if fmt == "csv":
            w = csv.writer(buf, lineterminator="\n")
            buf.write(f"# {name}\n")
            w.writerow(header)
            w.writerows(rows)
        elif fmt == "text":
            buf.write(f"{name}\n")
            cells = [list(map(str, header))] + [[_fmt(v) for v in r] for r in rows]
            widths = [max(len(c[i]) for c in cells) for i in range(len(header))]
            for c in cells:
                buf.write("  ".join(v.rjust(w) for v, w in zip(c, widths)) + "\n")
        else:
            raise ValueError(f"unknown format {fmt!r}")
        buf.write("\n")
    flags = result.ratios.flags + result.delays.flags
    if flags:
        buf.write("# flags\n" + "\n".join(flags) + "\n")
    return buf.getvalue()


def _fmt(v) -> str:
    return f"{v:.4g}" if isinstance(v, float) else str(v)
