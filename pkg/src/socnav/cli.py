"""Command line entry point: ``socnav run | compare | replay``.

The exit status is 0 only if every simulated run arrived without collision.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .bench import compute_metrics, default_workers, emit_report, format_table, run_batch
from .scenario import ScenarioError, load_scenario
from .sim import PLANNERS, RunTrace


def _all_ok(summaries) -> bool:
    return all(s.row.arrived == s.row.repeats and s.row.collided == 0 for s in summaries)


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    summaries, traces = run_batch(
        scenario, [args.planner], args.repeats, base_seed=args.seed, workers=args.workers
    )
    print(format_table(summaries), end="")
    if args.out:
        emit_report(summaries, traces, args.out, plots=not args.no_plots)
        print(f"report written to {args.out}")
    return 0 if _all_ok(summaries) else 1


def cmd_compare(args) -> int:
    files = sorted(Path(args.scenario_dir).glob("*.yaml"))
    if not files:
        print(f"no scenario files (*.yaml) in {args.scenario_dir}", file=sys.stderr)
        return 2
    summaries, traces = [], {}
    for f in files:
        scenario = load_scenario(f)
        s, t = run_batch(scenario, args.planners, args.repeats, workers=args.workers)
        summaries += s
        for planner, group in t.items():
            traces[f"{scenario.name}/{planner}"] = group
        print(f"{scenario.name}: done", file=sys.stderr)
    print(format_table(summaries), end="")
    emit_report(summaries, traces, args.out, plots=not args.no_plots)
    print(f"report written to {args.out}")
    return 0 if _all_ok(summaries) else 1


def cmd_replay(args) -> int:
    trace = RunTrace.load(args.trace)
    m = compute_metrics(trace)
    h = trace.header
    print(f"{h.get('scenario')} / {h.get('planner')} / seed {h.get('seed')}: {trace.outcome}")
    print(f"path length {m.path_length:.3f} m, total time {m.total_time:.2f} s, min H-R distance {m.min_hr_distance:.3f} m")
    if args.plot:
        from .plotting import plot_trace

        out = Path(args.output) if args.output else Path(args.trace).with_suffix(".svg")
        plot_trace(trace, out)
        print(f"plot written to {out}")
    return 0 if m.arrived and not m.collided else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="socnav", description="Social navigation planners in a 2-D simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one planner on one scenario file")
    r.add_argument("scenario", help="scenario YAML file")
    r.add_argument("--planner", choices=PLANNERS, required=True)
    r.add_argument("--repeats", type=int, default=None, help="default: the scenario's repeats")
    r.add_argument("--seed", type=int, default=None, help="base seed; run i uses seed + i")
    r.add_argument("--out", default=None, help="directory for CSV, text table, traces and SVG plots")
    r.add_argument("--workers", type=int, default=default_workers())
    r.add_argument("--no-plots", action="store_true")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="run all planners on every scenario in a directory")
    c.add_argument("scenario_dir")
    c.add_argument("--out", required=True)
    c.add_argument("--planners", nargs="+", choices=PLANNERS, default=list(PLANNERS))
    c.add_argument("--repeats", type=int, default=None)
    c.add_argument("--workers", type=int, default=default_workers())
    c.add_argument("--no-plots", action="store_true")
    c.set_defaults(func=cmd_compare)

    rp = sub.add_parser("replay", help="summarise (and optionally plot) a saved trace")
    rp.add_argument("trace", help="trace file (.jsonl)")
    rp.add_argument("--plot", action="store_true", help="write an SVG next to the trace")
    rp.add_argument("--output", default=None, help="SVG path (default: trace path with .svg)")
    rp.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, FileNotFoundError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
