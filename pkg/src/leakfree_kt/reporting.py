"""Render an experiment's comparison table and a static AUC bar plot."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from .errors import IngestIOError
from .harness import TABLE_COLUMNS


def load_rows(runs_dir):
    path = Path(runs_dir) / "comparison.json"
    if not path.exists():
        raise IngestIOError(f"no comparison table in {runs_dir}; run the experiment first")
    return json.loads(path.read_text())["rows"]


def to_markdown(rows):
    cols = ["model", "window_questions", "test_method", "folds", "auc_mean", "auc_std", "accuracy_mean", "accuracy_std"]
    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    for r in rows:
        cells = [f"{r[c]:.4f}" if isinstance(r[c], float) else str(r[c]) for c in cols]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def to_csv(rows):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=TABLE_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def plot_auc(rows, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(max(4, 1.1 * len(rows)), 3.5))
    names = [r["model"] for r in rows]
    ax.bar(names, [r["auc_mean"] for r in rows], yerr=[r["auc_std"] for r in rows], capsize=4, color="#4c72b0")
    ax.set_ylabel("test AUC")
    ax.set_ylim(0.5, 1.0)
    ax.set_title("test AUC per model (mean ± std over folds)")
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def render_report(runs_dir, fmt="markdown", plot=True):
    rows = load_rows(runs_dir)
    if plot:
        plot_auc(rows, Path(runs_dir) / "auc_by_model.png")
    if fmt == "csv":
        return to_csv(rows)
    if fmt == "json":
        return json.dumps({"version": 1, "rows": rows}, indent=1) + "\n"
    return to_markdown(rows)
