"""Render learning curves and parameter trajectories from a metrics stream.

Figures are written as PNG files next to the delimited output so a finished
run directory holds metrics.jsonl, summary.csv and figures/*.png.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def load_metrics(path: Union[str, Path]) -> list[dict]:
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line:
            rows.append(json.loads(line))
    return rows


def render_metrics(
    rows_or_path: Union[Sequence[dict], str, Path],
    out_dir: Union[str, Path],
    title: str = "experiment",
) -> list[Path]:
    """Write loss/accuracy curves and parameter trajectories; returns paths."""
    rows = rows_or_path if isinstance(rows_or_path, (list, tuple)) else load_metrics(rows_or_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    iterations = [r["iteration"] for r in rows]
    if not iterations:
        return written

    losses = [r.get("loss") for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(iterations, losses, lw=1.2)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_title(f"{title}: training loss")
    fig.tight_layout()
    path = out_dir / "loss.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    accuracy_rows = [(r["iteration"], r["accuracy"]) for r in rows if "accuracy" in r]
    if accuracy_rows:
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.plot([x for x, _ in accuracy_rows], [y for _, y in accuracy_rows], marker="o", lw=1.2)
        ax.set_xlabel("iteration")
        ax.set_ylabel("accuracy")
        ax.set_ylim(-0.02, 1.02)
        ax.set_title(f"{title}: accuracy")
        fig.tight_layout()
        path = out_dir / "accuracy.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    param_names: list[str] = []
    for r in rows:
        for name in r.get("params", {}):
            if name not in param_names:
                param_names.append(name)
    if param_names:
        fig, ax = plt.subplots(figsize=(5, 3.2))
        for name in param_names:
            series = [(r["iteration"], r["params"][name]) for r in rows if name in r.get("params", {})]
            ax.plot([x for x, _ in series], [y for _, y in series], lw=1.2, label=name)
        ax.set_xlabel("iteration")
        ax.set_ylabel("probability")
        ax.set_ylim(-0.02, 1.02)
        ax.set_title(f"{title}: learned parameters")
        ax.legend(fontsize=7)
        fig.tight_layout()
        path = out_dir / "params.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written
