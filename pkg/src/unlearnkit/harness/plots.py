"""Static plots of per-epoch trajectories, averaged over seeds."""
from __future__ import annotations

import json
from collections import defaultdict
from pathlib import Path
from typing import Iterable

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .runner import PRETRAINED

EPOCH_PANELS = {
    "nomus_pct": ("NoMUS (%)", "nomus_vs_epoch.png"),
    "utility_pct": ("Utility (%)", "utility_vs_epoch.png"),
    "forget_pct": ("Forgetting (%)", "forget_vs_epoch.png"),
}
TRADEOFF_FILE = "tradeoff.png"
PLOT_FILES = (TRADEOFF_FILE,) + tuple(f for _, f in EPOCH_PANELS.values())


def epoch_means(records: Iterable[dict]) -> dict[str, dict[int, dict[str, float]]]:
    """method -> epoch -> metric mean across the seeds that reached that epoch."""
    acc: dict[str, dict[int, dict[str, list[float]]]] = defaultdict(lambda: defaultdict(lambda: defaultdict(list)))
    for r in records:
        for m in EPOCH_PANELS:
            acc[r["method"]][r["epoch"]][m].append(float(r[m]))
    return {
        method: {e: {m: sum(v) / len(v) for m, v in metrics.items()} for e, metrics in sorted(by_epoch.items())}
        for method, by_epoch in acc.items()
    }


def load_epoch_records(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def emit_plots(records: Iterable[dict], output_dir: str | Path) -> list[Path]:
    """Write the trade-off scatter and the three metric-vs-epoch panels.

    Every mark is the across-seed mean for one (method, epoch); the original
    model, when present, is drawn as a single reference point.
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    means = epoch_means(records)
    reference = means.pop(PRETRAINED, None)
    ref_point = next(iter(reference.values())) if reference else None
    methods = list(means)
    cmap = plt.get_cmap("tab10")
    colors = {m: cmap(i % 10) for i, m in enumerate(methods)}
    paths = []

    fig, ax = plt.subplots(figsize=(6, 5))
    for m in methods:
        pts = list(means[m].values())
        ax.scatter([p["forget_pct"] for p in pts], [p["utility_pct"] for p in pts], s=18, color=colors[m], label=m, alpha=0.8)
    if ref_point:
        ax.scatter([ref_point["forget_pct"]], [ref_point["utility_pct"]], marker="*", s=160, color="black", label=PRETRAINED)
    ax.set_xlabel("Forgetting (%)  (lower is better)")
    ax.set_ylabel("Utility (%)")
    ax.set_title("Utility vs forgetting per epoch")
    ax.grid(alpha=0.3)
    if methods or ref_point:
        ax.legend(fontsize=8)
    paths.append(_save(fig, out / TRADEOFF_FILE))

    for metric, (label, fname) in EPOCH_PANELS.items():
        fig, ax = plt.subplots(figsize=(6, 4))
        for m in methods:
            epochs = list(means[m])
            ax.plot(epochs, [means[m][e][metric] for e in epochs], marker="o", ms=3, color=colors[m], label=m)
        if ref_point:
            ax.axhline(ref_point[metric], color="black", ls="--", lw=1, label=PRETRAINED)
        ax.set_xlabel("Epoch")
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
        if methods or ref_point:
            ax.legend(fontsize=8)
        paths.append(_save(fig, out / fname))
    return paths
