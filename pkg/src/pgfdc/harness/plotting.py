"""Learning-curve and evaluation figures written next to their CSV data."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..metrics import read_metrics_csv  # noqa: E402


def plot_rc():
    matplotlib.rc("figure", dpi=120, figsize=(6.4, 4.0))
    matplotlib.rc("axes", grid=True, labelsize=11)
    matplotlib.rc("grid", alpha=0.3)
    matplotlib.rc("legend", fontsize=9, frameon=False)
    matplotlib.rc("lines", linewidth=1.6)


def smooth(y: np.ndarray, window: int) -> np.ndarray:
    """Trailing moving average; the first ``window - 1`` points average what exists."""
    if window <= 1:
        return y
    c = np.cumsum(np.insert(y, 0, 0.0))
    out = np.empty_like(y)
    for i in range(len(y)):
        lo = max(0, i + 1 - window)
        out[i] = (c[i + 1] - c[lo]) / (i + 1 - lo)
    return out


def group_runs(run_dirs) -> dict[str, list[Path]]:
    """Group run directories by the ``algorithm`` recorded in their manifest."""
    groups: dict[str, list[Path]] = defaultdict(list)
    for d in map(Path, run_dirs):
        manifest = d / "manifest.json"
        label = json.loads(manifest.read_text())["config"]["algorithm"] if manifest.exists() else d.name
        groups[label].append(d)
    return dict(groups)


def learning_curves(run_dirs, out_dir: str | Path, window: int = 10, title: str = "") -> tuple[Path, Path]:
    """Mean +- std of ``mean_return`` per algorithm; writes curves.csv and learning_curves.png."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    groups = group_runs(run_dirs)
    table: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
    for label, dirs in groups.items():
        curves = [np.array([r.mean_return for r in read_metrics_csv(d / "metrics.csv")]) for d in dirs]
        n = min(len(c) for c in curves)
        stack = np.stack([smooth(c[:n], window) for c in curves])
        table[label] = (np.arange(1, n + 1), stack.mean(axis=0), stack.std(axis=0))

    csv_path = out / "curves.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("algorithm", "iteration", "mean_return", "std_return", "runs"))
        for label, (it, mu, sd) in table.items():
            for i, m, s in zip(it, mu, sd):
                w.writerow((label, int(i), f"{m:.6f}", f"{s:.6f}", len(groups[label])))

    plot_rc()
    fig, ax = plt.subplots()
    for label, (it, mu, sd) in sorted(table.items()):
        ax.plot(it, mu, label=f"{label} (n={len(groups[label])})")
        ax.fill_between(it, mu - sd, mu + sd, alpha=0.2)
    ax.set_xlabel("iteration")
    ax.set_ylabel("average return")
    if title:
        ax.set_title(title)
    ax.legend(loc="lower right")
    png_path = out / "learning_curves.png"
    fig.tight_layout()
    fig.savefig(png_path)
    plt.close(fig)
    return csv_path, png_path


def bar_chart(values: dict[str, float], path: str | Path, ylabel: str, errors: dict[str, float] | None = None) -> Path:
    """Simple labelled bar chart, e.g. average return or discriminator score per policy."""
    plot_rc()
    labels = list(values)
    fig, ax = plt.subplots()
    err = [errors.get(k, 0.0) for k in labels] if errors else None
    ax.bar(labels, [values[k] for k in labels], yerr=err, capsize=4, color="0.55")
    for i, k in enumerate(labels):
        ax.text(i, values[k], f"{values[k]:.3f}", ha="center", va="bottom", fontsize=9)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)
