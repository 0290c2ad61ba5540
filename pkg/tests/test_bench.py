import math
import xml.etree.ElementTree as ET

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from socnav.bench import (
    CSV_COLUMNS,
    RunMetrics,
    TableRow,
    compute_metrics,
    emit_report,
    format_table,
    read_csv,
    run_batch,
    summarize,
    write_csv,
)
from socnav.plotting import plot_trace
from socnav.scenario import parse_scenario
from socnav.sim import RunTrace

SHORT = """
name: short
robot_start: [0.0, 0.0, 0.0]
goal: [2.5, 0.0, 0.0]
agents:
  - {id: h1, waypoints: [[4.0, 0.6], [-2.0, 0.6]], preferred_speed: 0.8}
seed: 3
repeats: 2
"""


def synthetic_trace(robot_xy, agents=None, outcome="arrived", dt=0.1):
    agents = agents or {}
    recs = []
    for k, (x, y) in enumerate(robot_xy):
        pos = {aid: list(path[k]) for aid, path in agents.items()}
        d = [math.hypot(x - p[0], y - p[1]) for p in pos.values()]
        recs.append({"tick": k, "t": k * dt, "robot": [x, y, 0.0], "agents": pos, "min_hr": min(d) if d else None})
    header = {
        "scenario": "synthetic", "planner": "teb", "seed": 0, "dt": dt, "outcome": outcome,
        "goal": [robot_xy[-1][0], robot_xy[-1][1], 0.0], "agents": list(agents), "statics": [],
    }
    return RunTrace(header, recs)


# --- metrics --------------------------------------------------------------------------


def test_straight_trace_metrics():
    m = compute_metrics(synthetic_trace([(0.1 * k, 0.0) for k in range(81)]))
    assert m.path_length == pytest.approx(8.0)
    assert m.total_time == pytest.approx(8.0)
    assert m.min_hr_distance == math.inf
    assert m.arrived and not m.collided


def test_stationary_trace_has_zero_length():
    m = compute_metrics(synthetic_trace([(1.0, 2.0)] * 30, outcome="timeout"))
    assert m.path_length == 0.0 and not m.arrived


def test_closest_pass_oracle():
    # robot and pedestrian walk past each other 0.64 m apart; they are level at tick 40
    robot = [(0.1 * k, 0.0) for k in range(81)]
    human = [(8.0 - 0.1 * k, 0.64) for k in range(81)]
    m = compute_metrics(synthetic_trace(robot, {"h1": human}))
    assert m.min_hr_distance == pytest.approx(0.64)


@settings(max_examples=50)
@given(st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10)), min_size=1, max_size=40))
def test_path_length_bounds_displacement(points):
    m = compute_metrics(synthetic_trace(points))
    (x0, y0), (x1, y1) = points[0], points[-1]
    assert m.path_length >= math.hypot(x1 - x0, y1 - y0) - 1e-9


def test_metrics_validation():
    with pytest.raises(ValueError):
        RunMetrics(-1.0, 1.0, 1.0, False, True)
    with pytest.raises(ValueError):
        compute_metrics(RunTrace({}, []))


# --- aggregation ------------------------------------------------------------------------


def test_summary_means_over_arrived_runs():
    runs = [
        RunMetrics(7.0, 9.0, 0.5, False, True),
        RunMetrics(8.0, 11.0, 0.7, False, True),
        RunMetrics(3.0, 60.0, 0.2, True, False),
    ]
    s = summarize("sc", "mpteb", runs)
    assert (s.row.path_length_m, s.row.total_time_s, s.row.min_hr_dist_m) == pytest.approx((7.5, 10.0, 0.6))
    assert (s.row.arrived, s.row.collided, s.row.repeats) == (2, 1, 3)
    assert s.path_length_std == pytest.approx(0.5)


@settings(max_examples=30)
@given(
    st.lists(
        st.tuples(st.floats(0, 20), st.floats(0, 60), st.floats(0.01, 5), st.booleans()),
        min_size=1, max_size=10,
    ),
    st.randoms(),
)
def test_summary_is_permutation_invariant(values, rnd):
    runs = [RunMetrics(a, b, c, not ok, ok) for a, b, c, ok in values]
    shuffled = list(runs)
    rnd.shuffle(shuffled)
    a, b = summarize("s", "p", runs).row, summarize("s", "p", shuffled).row
    for col in ("path_length_m", "total_time_s", "min_hr_dist_m"):
        x, y = getattr(a, col), getattr(b, col)
        assert (math.isnan(x) and math.isnan(y)) or x == pytest.approx(y, rel=1e-12)
    assert (a.arrived, a.collided, a.repeats) == (b.arrived, b.collided, b.repeats)


def test_single_repeat_equals_run_metrics():
    sc = parse_scenario(SHORT)
    (summary,), traces = run_batch(sc, ["dwa"], 1, record_bands=False)
    m = compute_metrics(traces["dwa"][0])
    assert summary.row.path_length_m == m.path_length
    assert summary.row.total_time_s == m.total_time
    assert summary.row.min_hr_dist_m == m.min_hr_distance
    assert traces["dwa"][0].header["seed"] == 3


def test_batch_is_deterministic_and_seeds_follow_repeats():
    sc = parse_scenario(SHORT)
    s1, t1 = run_batch(sc, ["teb", "dwa"], 2, record_bands=False)
    s2, _ = run_batch(sc, ["teb", "dwa"], 2, record_bands=False, workers=2)
    assert write_csv([s.row for s in s1]) == write_csv([s.row for s in s2])
    assert [t.header["seed"] for t in t1["teb"]] == [3, 4]
    with pytest.raises(ValueError):
        run_batch(sc, ["rrt"], 1)


# --- CSV ---------------------------------------------------------------------------------

rows = st.builds(
    TableRow,
    st.sampled_from(["reverse_direction", "corridor", "a,b"]),
    st.sampled_from(["dwa", "teb", "mpteb"]),
    st.floats(0, 100),
    st.floats(0, 100),
    st.floats(0.01, 10),
    st.integers(0, 10),
    st.integers(0, 10),
    st.integers(1, 10),
)


@given(st.lists(rows, max_size=12))
def test_csv_round_trip(table):
    assert read_csv(write_csv(table)) == table


def test_csv_layout():
    assert write_csv([]) == ",".join(CSV_COLUMNS) + "\n"
    assert CSV_COLUMNS == (
        "scenario", "planner", "path_length_m", "total_time_s", "min_hr_dist_m", "collided", "arrived", "repeats",
    )
    table = [
        TableRow(sc, p, 7.0, 9.0, 0.5, 0, 10, 10)
        for sc in ("reverse_direction", "multi_persons", "corridor", "turn_right")
        for p in ("dwa", "teb", "mpteb")
    ]
    lines = write_csv(table).splitlines()
    assert len(lines) == 13
    assert lines[1] == "reverse_direction,dwa,7.0,9.0,0.5,0,10,10"
    with pytest.raises(ValueError):
        read_csv("a,b\n1,2\n")


def test_text_table_layout():
    summaries = [summarize(sc, p, [RunMetrics(7.0, 9.0, 0.5, False, True)]) for sc in ("x", "y") for p in ("dwa", "mpteb")]
    text = format_table(summaries)
    lines = text.splitlines()
    assert "dwa" in lines[0] and "mpteb" in lines[0]
    assert lines[3].split() == ["x", "7.00", "9.00", "0.50", "7.00", "9.00", "0.50"]


# --- report and plots ---------------------------------------------------------------------

SVG = "{http://www.w3.org/2000/svg}"


def _groups(path):
    root = ET.parse(path).getroot()
    assert root.tag == SVG + "svg"
    return {g.get("id"): g for g in root.iter(SVG + "g") if g.get("id")}


def test_plot_structure(tmp_path):
    robot = [(0.1 * k, 0.0) for k in range(41)]
    humans = {"h1": [(4.0 - 0.1 * k, 0.7) for k in range(41)], "h2": [(2.0, -3.0 + 0.1 * k) for k in range(41)]}
    trace = synthetic_trace(robot, humans)
    trace.header["statics"] = [{"segment": [[-1, 1.5], [5, 1.5]]}, {"circle": {"center": [2, -1], "radius": 0.3}}]
    trace.records[0]["predictions"] = {"h1": [[3.5 - 0.5 * k, 0.7] for k in range(12)]}
    out = plot_trace(trace, tmp_path / "run.svg")
    groups = _groups(out)
    assert {"robot", "agent-h1", "agent-h2", "static-0", "static-1", "goal"} <= set(groups)
    for gid in ("robot", "agent-h1", "agent-h2"):
        assert len(groups[gid].findall(SVG + "path")) == 1
    agent_groups = [g for g in groups if g.startswith("agent-")]
    assert len(agent_groups) == 2
    pred = groups["prediction-h1-0"].find(SVG + "path")
    assert "stroke-dasharray" in pred.get("style", "")
    assert "stroke-dasharray" not in groups["robot"].find(SVG + "path").get("style", "")


def test_emit_report_writes_csv_table_traces_and_svgs(tmp_path):
    sc = parse_scenario(SHORT)
    summaries, traces = run_batch(sc, ["dwa"], 1, record_bands=False)
    written = emit_report(summaries, traces, tmp_path / "out")
    names = sorted(p.name for p in written)
    assert names == ["results.csv", "results.txt", "short_dwa_seed3.jsonl", "short_dwa_seed3.svg"]
    assert read_csv((tmp_path / "out" / "results.csv").read_text()) == [summaries[0].row]
    reloaded = RunTrace.load(tmp_path / "out" / "short_dwa_seed3.jsonl")
    assert reloaded.to_jsonl() == traces["dwa"][0].to_jsonl()


def test_emit_report_unwritable_directory(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        emit_report([], None, blocker / "sub")


def test_empty_report_is_header_only(tmp_path):
    emit_report([], None, tmp_path)
    assert (tmp_path / "results.csv").read_text() == ",".join(CSV_COLUMNS) + "\n"
