"""Monte-Carlo sweeps and convergence traces, written as plot-ready CSV."""
from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, List, Optional

import numpy as np

from . import optimizer, system
from .channel import generate_channels
from .config import ScenarioConfig

log = logging.getLogger(__name__)

ROW_HEADER = ["sweep_parameter", "sweep_value", "trial", "seed", "sum_rate",
              "outer_iterations", "converged", "transmit_power", "status"]
SUMMARY_HEADER = ["sweep_parameter", "sweep_value", "trials", "ok", "mean_sum_rate", "stderr_sum_rate"]
TRACE_HEADER = ["iteration", "sum_rate", "power", "mu"]


@dataclass
class ResultRow:
    sweep_parameter: str
    sweep_value: object
    trial: int
    seed: int
    sum_rate: float
    outer_iterations: int
    converged: bool
    transmit_power: float
    wall_time: float
    status: str = "ok"


@dataclass
class SummaryRow:
    sweep_parameter: str
    sweep_value: object
    trials: int
    ok: int
    mean: float
    stderr: float


def fmt(x) -> str:
    """17 significant digits; ``inf`` for the unbounded phase resolution."""
    if x is None:
        return "inf"
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


def run_trial(config: ScenarioConfig, seed: int) -> optimizer.RunResult:
    channels = generate_channels(config.scenario_geometry(), config.n_antennas, config.n_elements,
                                 config.links(), seed=seed)
    return optimizer.run(channels, config.noise(), config.optimizer_config(seed))


def _trial_task(args) -> ResultRow:
    name, value, point, trial, seed = args
    start = time.perf_counter()
    try:
        res = run_trial(point, seed)
        return ResultRow(name, value, trial, seed, res.sum_rate, res.iterations, res.converged,
                         system.transmit_power(res.W), time.perf_counter() - start)
    except Exception as exc:  # recorded in-row; the sweep keeps going
        log.warning("trial %d (seed %d) failed: %s", trial, seed, exc)
        return ResultRow(name, value, trial, seed, math.nan, 0, False, math.nan,
                         time.perf_counter() - start, f"error: {type(exc).__name__}: {exc}")


def run_sweep(config: ScenarioConfig, threads: int = 1) -> List[ResultRow]:
    """One row per (sweep value, trial); trial ``t`` uses seed ``base_seed + t``.

    Rows come back ordered by sweep value then trial regardless of ``threads``.
    """
    name = config.sweep.parameter if config.sweep is not None else ""
    tasks = [(name, value, point, t, config.base_seed + t)
             for value, point in config.sweep_points()
             for t in range(config.trials)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(_trial_task, tasks, chunksize=max(1, len(tasks) // (4 * threads))))
    return [_trial_task(t) for t in tasks]


def summarize(rows: Iterable[ResultRow]) -> List[SummaryRow]:
    """Mean and standard error of the sum rate per sweep value (failed trials excluded)."""
    groups = {}
    for r in rows:
        groups.setdefault((r.sweep_parameter, fmt(r.sweep_value)), []).append(r)
    out = []
    for (name, _), members in groups.items():
        rates = np.array([r.sum_rate for r in members if r.status == "ok"])
        n = rates.size
        mean = float(rates.mean()) if n else math.nan
        stderr = float(rates.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan
        out.append(SummaryRow(name, members[0].sweep_value, len(members), n, mean, stderr))
    return out


def write_rows_csv(rows: List[ResultRow], path, timing: bool = False) -> None:
    header = ROW_HEADER + (["wall_time"] if timing else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            line = [r.sweep_parameter, fmt(r.sweep_value), r.trial, r.seed, fmt(r.sum_rate),
                    r.outer_iterations, fmt(r.converged), fmt(r.transmit_power), r.status]
            if timing:
                line.append(fmt(r.wall_time))
            w.writerow(line)


def write_summary_csv(summary: List[SummaryRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for s in summary:
            w.writerow([s.sweep_parameter, fmt(s.sweep_value), s.trials, s.ok, fmt(s.mean), fmt(s.stderr)])


def summary_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.stem + ".summary.csv")


def emit_convergence_trace(config: ScenarioConfig, seed: Optional[int], path) -> List[optimizer.TraceRow]:
    """Per-outer-iteration sum rate of one run at the config's base point."""
    if config.sweep is not None:
        config = replace(config, sweep=None)
    seed = config.base_seed if seed is None else seed
    channels = generate_channels(config.scenario_geometry(), config.n_antennas, config.n_elements,
                                 config.links(), seed=seed)
    rows: List[optimizer.TraceRow] = []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)

        def sink(row):
            rows.append(row)
            w.writerow([row.iteration, fmt(row.sum_rate), fmt(row.transmit_power), fmt(row.mu)])

        optimizer.run(channels, config.noise(), config.optimizer_config(seed), sink=sink)
    return rows
