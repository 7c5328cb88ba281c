"""Render sweep results as PNG figures next to the CSV.

Uses matplotlib's object API directly (no pyplot, no global backend
state) so importing this module never touches a display.
"""

from __future__ import annotations

import os

from matplotlib.figure import Figure

from .experiment import ExperimentResult

_MARKERS = ("o", "s", "^", "d", "v", "*", "x")


def render_figures(result: ExperimentResult, out_dir) -> list[str]:
    """One figure per metric, one line per cluster count G.

    Returns the written paths.  Failure rows are skipped; an empty
    result produces no files.
    """
    os.makedirs(out_dir, exist_ok=True)
    by_metric: dict[str, dict[int, list]] = {}
    for row in result.rows:
        if row.metric == "failure":
            continue
        by_metric.setdefault(row.metric, {}).setdefault(row.G, []).append(row)

    cfg = result.config
    written = []
    for metric in sorted(by_metric):
        fig = Figure(figsize=(5.0, 3.6))
        ax = fig.add_subplot(111)
        for gi, (G, rows) in enumerate(sorted(by_metric[metric].items())):
            rows = sorted(rows, key=lambda r: r.k_over_N)
            xs = [r.k_over_N for r in rows]
            ys = [r.mean for r in rows]
            errs = [r.std for r in rows]
            ax.errorbar(xs, ys, yerr=errs, marker=_MARKERS[gi % len(_MARKERS)],
                        capsize=2, label="G={}".format(G))
        ax.set_xlabel("k/N")
        ax.set_ylabel(metric)
        ax.set_title("{} {} ({})".format(cfg.system, cfg.mode, metric))
        ax.grid(True, alpha=0.3)
        ax.legend()
        fig.tight_layout()
        path = os.path.join(out_dir, "{}_{}_{}.png".format(
            cfg.system, cfg.mode, metric))
        fig.savefig(path, dpi=120)
        written.append(path)
    return written
