"""Report figures rendered to PNG files with the non-interactive backend."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (5.5, 3.4),
    "figure.dpi": 120,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
}


def _group(records):
    groups = defaultdict(list)
    for r in records:
        groups[(r.kind, r.method)].append(r)
    return dict(sorted(groups.items()))


def hit_ratio_bars(records, path: Path) -> Path:
    """Mean hit ratio per (regime, method) with one standard deviation across seeds."""
    groups = _group(records)
    labels = [f"{k}\n{m}" for k, m in groups]
    vals = [[r.metrics["hit_ratio"] for r in rs] for rs in groups.values()]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        x = np.arange(len(vals))
        ax.bar(x, [np.mean(v) for v in vals], yerr=[np.std(v) for v in vals], color="0.55",
               edgecolor="0.2", capsize=3)
        for xi, v in zip(x, vals):
            ax.plot(np.full(len(v), xi), v, "k.", ms=3)
        ax.set_xticks(x, labels)
        ax.set_ylabel("hit ratio (%)")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def cumulative_hits(records, path: Path) -> Path:
    """Running hit ratio against the number of oracle calls, one line per online run."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        colors = {}
        for r in records:
            if r.kind != "online" or not r.rows:
                continue
            hits = np.cumsum([row["hit"] for row in r.rows])
            calls = np.arange(1, len(hits) + 1)
            c = colors.setdefault(r.method, f"C{len(colors)}")
            ax.plot(calls, 100.0 * hits / calls, color=c, lw=1)
        handles = [plt.Line2D([], [], color=c, label=m) for m, c in colors.items()]
        if handles:
            ax.legend(handles=handles)
        ax.set_xlabel("oracle calls")
        ax.set_ylabel("running hit ratio (%)")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def score_histograms(records, path: Path) -> Path:
    """Distribution of aggregated scores of evaluated samples per method."""
    scores = defaultdict(list)
    for r in records:
        scores[f"{r.kind}/{r.method}"].extend(row["score"] for row in r.rows)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name, s in sorted(scores.items()):
            if s:
                ax.hist(s, bins=40, histtype="step", density=True, label=name)
        ax.set_xlabel("aggregated z-score")
        ax.set_ylabel("density")
        if scores:
            ax.legend()
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def render_report(records, out_dir: Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [hit_ratio_bars(records, out_dir / "hit_ratio.png"),
             score_histograms(records, out_dir / "scores.png")]
    if any(r.kind == "online" for r in records):
        paths.append(cumulative_hits(records, out_dir / "cumulative_hits.png"))
    return paths


def loss_curve(losses, path: Path, window: int = 10) -> Path:
    """Training loss per step with its moving average."""
    losses = np.asarray(losses, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(losses, color="0.7", lw=0.8, label="step")
        if len(losses) >= window:
            ma = np.convolve(losses, np.ones(window) / window, mode="valid")
            ax.plot(np.arange(window - 1, len(losses)), ma, color="k", lw=1.2, label=f"mean of {window}")
        ax.set_xlabel("step")
        ax.set_ylabel("loss per example")
        ax.legend()
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path
