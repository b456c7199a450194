"""SVG figures, each written next to the CSV it was drawn from."""
from __future__ import annotations

import csv
import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .scene import LabelSet, Scene  # noqa: E402

# fixed salt + no date: identical inputs give identical SVG bytes
plt.rcParams["svg.hashsalt"] = "socialact"
_SVG_META = {"Date": None, "Creator": None}


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def _save(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)


def group_size_table(scenes: list[Scene], labels: LabelSet) -> tuple[list[int], np.ndarray]:
    """Counts of groups by size (rows) and social activity (columns)."""
    sizes = sorted({len(g.members) for s in scenes for g in s.groups})
    table = np.zeros((len(sizes), labels.n_social), dtype=int)
    row = {n: i for i, n in enumerate(sizes)}
    for s in scenes:
        for g in s.groups:
            table[row[len(g.members)], g.activity] += 1
    return sizes, table


def plot_group_histogram(scenes: list[Scene], labels: LabelSet, out_dir) -> list[Path]:
    out = Path(out_dir)
    sizes, table = group_size_table(scenes, labels)
    csv_path, svg_path = out / "group_sizes.csv", out / "group_sizes.svg"
    _write_csv(csv_path, ["group_size", *labels.social_labels],
               [[n, *map(int, r)] for n, r in zip(sizes, table)])
    fig, ax = plt.subplots(figsize=(6, 3.5))
    bottom = np.zeros(len(sizes))
    for c, name in enumerate(labels.social_labels):
        ax.bar([str(n) for n in sizes], table[:, c], bottom=bottom, label=name)
        bottom += table[:, c]
    ax.set_xlabel("group size")
    ax.set_ylabel("groups")
    ax.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, svg_path)
    return [svg_path, csv_path]


def read_log_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def plot_loss_curves(logs: dict[str, list[dict]], out_dir) -> list[Path]:
    """``logs`` maps a run name to its per-epoch rows."""
    out = Path(out_dir)
    terms = ("loss", "group", "individual", "edge")
    csv_path, svg_path = out / "loss_curves.csv", out / "loss_curves.svg"
    rows = [[name, int(r["epoch"]), *(repr(float(r[t])) for t in terms)]
            for name, rs in logs.items() for r in rs]
    _write_csv(csv_path, ["run", "epoch", *terms], rows)
    fig, axes = plt.subplots(1, len(terms), figsize=(12, 3))
    for ax, t in zip(axes, terms):
        for name, rs in logs.items():
            ax.plot([r["epoch"] for r in rs], [r[t] for r in rs], label=name)
        ax.set_title(t)
        ax.set_xlabel("epoch")
    axes[0].legend(fontsize=7)
    fig.tight_layout()
    _save(fig, svg_path)
    return [svg_path, csv_path]


def plot_metric_bars(rates_by_mode: dict[str, dict], out_dir) -> list[Path]:
    out = Path(out_dir)
    metrics = ("membership_acc", "social_acc", "individual_acc")
    modes = list(rates_by_mode)
    csv_path, svg_path = out / "metrics.csv", out / "metrics.svg"
    _write_csv(csv_path, ["mode", *metrics],
               [[m, *(repr(float(rates_by_mode[m][k])) for k in metrics)] for m in modes])
    fig, ax = plt.subplots(figsize=(6, 3.5))
    width = 0.8 / max(len(modes), 1)
    x = np.arange(len(metrics))
    for i, m in enumerate(modes):
        ax.bar(x + i * width, [rates_by_mode[m][k] for k in metrics], width, label=m)
    ax.set_xticks(x + width * (len(modes) - 1) / 2, [k.replace("_acc", "") for k in metrics])
    ax.set_ylim(0, 1)
    ax.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, svg_path)
    return [svg_path, csv_path]
