"""chart.py -- Bar chart of an ablation table from the run history.

Each bar is one cumulative stage variant (baseline first), with mAP and
rank-1 side by side.

Usage:
    python -m tools.chart                          # latest run, config.yaml
    python -m tools.chart --run-id <id> -o ablation.png
    python -m tools.chart --list                   # stored runs with their best mAP
"""

from __future__ import annotations

import sys
from argparse import ArgumentParser
from pathlib import Path
from typing import Optional, Sequence

from components.interfaces import Config
from history.artifacts import StageReport
from history.repository import StageReportRepository

try:
    from matplotlib.figure import Figure
    import matplotlib.ticker as mticker
except ImportError:
    print("Error: matplotlib is required.  Run:  pip install matplotlib", file=sys.stderr)
    sys.exit(1)


# ── palette ────────────────────────────────────────────────────────────────────
COLORS = {"mAP": "#4C72B0", "R-1": "#DD8452"}


def plot_data(rows: Sequence[StageReport]) -> dict[str, list]:
    """Series behind the chart, in percent."""
    return {
        "variant": [r.variant for r in rows],
        "mAP": [round(r.map * 100, 2) for r in rows],
        "R-1": [round(r.rank1 * 100, 2) for r in rows],
    }


def build_figure(rows: Sequence[StageReport], title: Optional[str] = None) -> Figure:
    """Grouped horizontal bars, first variant at the top."""
    data = plot_data(rows)
    fig = Figure(figsize=(9, 0.6 * len(rows) + 1.8))
    ax = fig.subplots()
    positions = list(range(len(rows)))[::-1]
    height = 0.38
    for offset, metric in ((height / 2, "mAP"), (-height / 2, "R-1")):
        bars = ax.barh(
            [p + offset for p in positions],
            data[metric],
            height=height,
            color=COLORS[metric],
            edgecolor="white",
            label=metric,
        )
        for bar, val in zip(bars, data[metric]):
            ax.text(
                bar.get_width() + 0.8,
                bar.get_y() + bar.get_height() / 2,
                f"{val:.1f}",
                va="center",
                ha="left",
                fontsize=8,
                color="#333333",
            )
    ax.set_yticks(positions)
    ax.set_yticklabels(data["variant"])
    ax.set_xlim(0, 110)
    ax.xaxis.set_major_locator(mticker.MultipleLocator(20))
    ax.set_xlabel("percent", fontsize=10, labelpad=8)
    ax.set_title(title or "Post-processing ablation", fontsize=12, fontweight="bold", pad=12)
    ax.legend(loc="lower right", fontsize=9)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    fig.tight_layout()
    return fig


def save_chart(rows: Sequence[StageReport], out_path: Path | str) -> Path:
    """Render the chart to an image file."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    build_figure(rows).savefig(out_path, dpi=120)
    return out_path


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = ArgumentParser(description="Chart a stored ablation table")
    parser.add_argument("--config", default="config.yaml", help="Pipeline config file")
    parser.add_argument("--run-id", help="Run to chart (default: latest)")
    parser.add_argument("-o", "--output", default="out/ablation.png", help="Image path")
    parser.add_argument("--list", action="store_true", help="List stored runs and exit")
    args = parser.parse_args(argv)

    cfg = Config(args.config)
    repo = StageReportRepository(str(cfg.resolve(cfg.history.db_path)))
    if args.list:
        runs = repo.list_runs()
        for run_id, count, best in runs:
            print(f"{run_id}  {count} variants  best mAP {best * 100:.1f}")
        return 0 if runs else 1
    run_id = args.run_id or repo.latest_run_id()
    if run_id is None:
        print("Error: no stored ablation runs.", file=sys.stderr)
        return 1
    rows = repo.load_run(run_id)
    if not rows:
        print(f"Error: run '{run_id}' not found.", file=sys.stderr)
        return 1
    print(f"Wrote {save_chart(rows, args.output)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
