"""Batch runs, per-run metrics and the comparison report.

Means and standard deviations are taken over the runs that arrived; runs that
collided or timed out are only counted.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .scenario import Scenario
from .sim import PLANNERS, RunTrace, run_scenario

CSV_COLUMNS = (
    "scenario",
    "planner",
    "path_length_m",
    "total_time_s",
    "min_hr_dist_m",
    "collided",
    "arrived",
    "repeats",
)


@dataclass(frozen=True)
class RunMetrics:
    path_length: float
    total_time: float
    min_hr_distance: float  # inf when the run had no humans
    collided: bool
    arrived: bool

    def __post_init__(self):
        if self.path_length < 0 or self.total_time < 0:
            raise ValueError("path length and time must be >= 0")
        if not self.min_hr_distance > 0:
            raise ValueError("min_hr_distance must be positive")


def compute_metrics(trace: RunTrace) -> RunMetrics:
    if not trace.records:
        raise ValueError("empty trace")
    xy = np.array([r["robot"][:2] for r in trace.records], dtype=float)
    path = float(np.sum(np.hypot(*np.diff(xy, axis=0).T))) if len(xy) > 1 else 0.0
    dt = float(trace.header.get("dt", 0.1))
    total_time = trace.records[-1]["tick"] * dt
    hr = [r["min_hr"] for r in trace.records if r.get("min_hr") is not None]
    min_hr = min(hr) if hr else math.inf
    return RunMetrics(path, total_time, min_hr, trace.outcome == "collision", trace.outcome == "arrived")


@dataclass(frozen=True)
class TableRow:
    """One CSV line: means over arrived runs plus outcome counts."""

    scenario: str
    planner: str
    path_length_m: float
    total_time_s: float
    min_hr_dist_m: float
    collided: int
    arrived: int
    repeats: int


@dataclass(frozen=True)
class Summary:
    row: TableRow
    path_length_std: float
    total_time_std: float
    min_hr_std: float
    runs: tuple[RunMetrics, ...]


def _mean_std(values: list[float]) -> tuple[float, float]:
    if not values:
        return math.nan, math.nan
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std())


def summarize(scenario: str, planner: str, runs: Sequence[RunMetrics]) -> Summary:
    ok = [m for m in runs if m.arrived]
    pl, pl_s = _mean_std([m.path_length for m in ok])
    tt, tt_s = _mean_std([m.total_time for m in ok])
    hr, hr_s = _mean_std([m.min_hr_distance for m in ok])
    row = TableRow(
        scenario, planner, pl, tt, hr,
        sum(m.collided for m in runs), len(ok), len(runs),
    )
    return Summary(row, pl_s, tt_s, hr_s, tuple(runs))


def _job(args) -> RunTrace:
    scenario, planner, seed, record_bands = args
    return run_scenario(scenario, planner, seed, record_bands=record_bands)


def run_batch(
    scenario: Scenario,
    planners: Iterable[str] = PLANNERS,
    repeats: int | None = None,
    *,
    base_seed: int | None = None,
    workers: int = 1,
    record_bands: bool = True,
) -> tuple[list[Summary], dict[str, list[RunTrace]]]:
    """Run every planner ``repeats`` times with seeds ``base_seed + i``.

    Returns one summary per planner (in the given order) and the traces per planner.
    """
    planners = list(planners)
    for p in planners:
        if p not in PLANNERS:
            raise ValueError(f"unknown planner {p!r}; expected one of {PLANNERS}")
    repeats = scenario.repeats if repeats is None else repeats
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    base = scenario.seed if base_seed is None else base_seed
    jobs = [(scenario, p, base + i, record_bands) for p in planners for i in range(repeats)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(_job, jobs))
    else:
        traces = [_job(j) for j in jobs]
    by_planner: dict[str, list[RunTrace]] = {p: [] for p in planners}
    for (_, p, _, _), tr in zip(jobs, traces):
        by_planner[p].append(tr)
    summaries = [summarize(scenario.name, p, [compute_metrics(t) for t in by_planner[p]]) for p in planners]
    return summaries, by_planner


def default_workers() -> int:
    return max(1, min(os.cpu_count() or 1, 8))


# --- report ---------------------------------------------------------------------------


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def write_csv(rows: Iterable[TableRow], path=None) -> str:
    """CSV text in the fixed column order; floats use ``repr`` so they parse back exactly."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_csv(text: str) -> list[TableRow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header {header!r}")
    types = {f.name: f.type for f in fields(TableRow)}
    out = []
    for line in reader:
        if not line:
            continue
        vals = {}
        for c, v in zip(CSV_COLUMNS, line):
            t = types[c]
            vals[c] = float(v) if t == "float" else int(v) if t == "int" else v
        out.append(TableRow(**vals))
    return out


def format_table(summaries: Sequence[Summary]) -> str:
    """Plain-text table: one line per scenario, path/time/min-H-R per planner."""
    planners = list(dict.fromkeys(s.row.planner for s in summaries))
    scenarios = list(dict.fromkeys(s.row.scenario for s in summaries))
    cell = {(s.row.scenario, s.row.planner): s for s in summaries}
    head = f"{'scenario':<20}" + "".join(f"{p:>30}" for p in planners)
    sub = f"{'':<20}" + "".join(f"{'l (m)':>10}{'t (s)':>10}{'d (m)':>10}" for _ in planners)
    lines = [head, sub, "-" * len(sub)]
    for sc in scenarios:
        parts = [f"{sc:<20}"]
        for p in planners:
            s = cell.get((sc, p))
            if s is None:
                parts.append(f"{'-':>30}")
                continue
            r = s.row
            parts.append(f"{r.path_length_m:>10.2f}{r.total_time_s:>10.2f}{r.min_hr_dist_m:>10.2f}")
        lines.append("".join(parts))
    lines.append("")
    lines.append("outcomes (arrived / collided / repeats) and standard deviations over arrived runs:")
    for s in summaries:
        r = s.row
        lines.append(
            f"  {r.scenario:<20}{r.planner:<7}{r.arrived:>3} /{r.collided:>3} /{r.repeats:>3}"
            f"   sd l {s.path_length_std:.2f}  t {s.total_time_std:.2f}  d {s.min_hr_std:.2f}"
        )
    return "\n".join(lines) + "\n"


def emit_report(
    summaries: Sequence[Summary],
    traces: dict[str, list[RunTrace]] | None,
    out_dir,
    *,
    plots: bool = True,
    save_traces: bool = True,
) -> list[Path]:
    """Write ``results.csv``, ``results.txt``, per-run traces and SVG plots into ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create output directory {out}: {e}") from e
    written = []
    csv_path = out / "results.csv"
    write_csv([s.row for s in summaries], csv_path)
    txt_path = out / "results.txt"
    txt_path.write_text(format_table(summaries))
    written += [csv_path, txt_path]
    for group in (traces or {}).values():
        for tr in group:
            stem = f"{tr.header['scenario']}_{tr.header['planner']}_seed{tr.header['seed']}"
            if save_traces:
                p = out / f"{stem}.jsonl"
                tr.save(p)
                written.append(p)
            if plots:
                from .plotting import plot_trace

                p = out / f"{stem}.svg"
                plot_trace(tr, p)
                written.append(p)
    return written
