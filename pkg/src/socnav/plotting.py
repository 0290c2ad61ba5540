"""SVG trajectory plots of recorded runs.

The robot path is a solid line, human paths are thin solid lines and
predicted human trajectories are dashed. Every artist carries an SVG ``id``
(``robot``, ``agent-<id>``, ``prediction-<id>-<tick>``, ``static-<i>``) so
plots can be inspected structurally.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import Circle  # noqa: E402

from .sim import RunTrace  # noqa: E402

PREDICTION_EVERY = 10  # ticks between drawn prediction sets


def plot_trace(trace: RunTrace, path, *, prediction_every: int = PREDICTION_EVERY) -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(7, 5))
    for i, s in enumerate(trace.header.get("statics", [])):
        if "segment" in s:
            (ax_, ay), (bx, by) = s["segment"]
            ax.plot([ax_, bx], [ay, by], color="0.3", lw=2, gid=f"static-{i}")
        elif "circle" in s:
            ax.add_patch(Circle(s["circle"]["center"], s["circle"]["radius"], color="0.5", gid=f"static-{i}"))
        else:
            ax.add_patch(Circle(s["point"], 0.05, color="0.5", gid=f"static-{i}"))

    recs = trace.records
    rx = [r["robot"][0] for r in recs]
    ry = [r["robot"][1] for r in recs]
    ax.plot(rx, ry, color="tab:blue", lw=2, ls="-", label="robot", gid="robot")

    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"][1:]
    for k, aid in enumerate(trace.header.get("agents", [])):
        pts = [r["agents"][aid] for r in recs if aid in r["agents"]]
        col = colors[k % len(colors)]
        ax.plot([p[0] for p in pts], [p[1] for p in pts], color=col, lw=1.2, ls="-", label=aid, gid=f"agent-{aid}")
        for r in recs:
            pred = r.get("predictions", {}).get(aid)
            if pred and r["tick"] % prediction_every == 0:
                xs = [r["agents"][aid][0]] + [p[0] for p in pred]
                ys = [r["agents"][aid][1]] + [p[1] for p in pred]
                ax.plot(xs, ys, color=col, lw=0.8, ls="--", alpha=0.7, gid=f"prediction-{aid}-{r['tick']}")

    gx, gy = trace.header["goal"][:2]
    ax.plot([gx], [gy], marker="*", ms=12, color="tab:green", ls="none", label="goal", gid="goal")
    ax.set_aspect("equal")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    h = trace.header
    ax.set_title(f"{h.get('scenario', '')} / {h.get('planner', '')} / seed {h.get('seed', '')}: {trace.outcome}")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path
