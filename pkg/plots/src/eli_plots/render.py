"""Figures from an alignment report directory.

The input contract is the report writer's documented file set: report.json
plus four CSV files (latents_before.csv and latents_after.csv with columns
x,y,class,task; energy_trace.csv with row,step,energy; dim_delta.csv with
dim,step,delta). Nothing is recomputed from experiment internals; this
package only draws what the files say.

Four figures: an accuracy bar chart, the before/after latent scatter pair,
per-row energy curves over alignment steps, and a dimension-by-step movement
heatmap. An empty dim_delta.csv skips the heatmap with a warning instead of
failing, because short alignment runs legitimately produce no movement rows.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

matplotlib.rcParams["svg.hashsalt"] = "eli-plots"

ACCURACY_KEYS = ("pre_drift", "drifted", "aligned")

CSV_COLUMNS = {
    "latents_before.csv": ("x", "y", "class", "task"),
    "latents_after.csv": ("x", "y", "class", "task"),
    "energy_trace.csv": ("row", "step", "energy"),
    "dim_delta.csv": ("dim", "step", "delta"),
}


class SchemaError(ValueError):
    """A report file is missing, unreadable, or lacks a required column."""


@dataclass
class ReportData:
    """Everything the figures need, already parsed into arrays."""

    seed: int
    accuracies: dict
    before: dict
    after: dict
    trace: dict
    delta: dict


def _read_csv(path: Path, columns: tuple[str, ...]) -> dict:
    """Named float columns from one CSV file; validates the header."""
    if not path.is_file():
        raise SchemaError(f"missing report file: {path.name}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        for col in columns:
            if col not in fields:
                raise SchemaError(f"{path.name}: missing column '{col}'")
        data = {col: [] for col in columns}
        for lineno, row in enumerate(reader, start=2):
            for col in columns:
                try:
                    data[col].append(float(row[col]))
                except (TypeError, ValueError):
                    raise SchemaError(
                        f"{path.name}:{lineno}: column '{col}' is not a number: "
                        f"{row[col]!r}"
                    ) from None
    return {col: np.asarray(vals, dtype=np.float64) for col, vals in data.items()}


def load_report(report_dir) -> ReportData:
    """Parse and validate one report directory."""
    root = Path(report_dir)
    summary_path = root / "report.json"
    if not summary_path.is_file():
        raise SchemaError(f"missing report file: report.json (in {root})")
    try:
        summary = json.loads(summary_path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"report.json is not valid JSON: {exc}") from exc
    if summary.get("format") != "eli-report":
        raise SchemaError(
            f"report.json: expected format 'eli-report', got {summary.get('format')!r}"
        )
    accuracies = summary.get("accuracies", {})
    for key in ACCURACY_KEYS:
        if key not in accuracies:
            raise SchemaError(f"report.json: missing accuracies key '{key}'")

    tables = {
        name: _read_csv(root / name, columns)
        for name, columns in CSV_COLUMNS.items()
    }
    return ReportData(
        seed=int(summary.get("seed", 0)),
        accuracies={k: float(accuracies[k]) for k in ACCURACY_KEYS},
        before=tables["latents_before.csv"],
        after=tables["latents_after.csv"],
        trace=tables["energy_trace.csv"],
        delta=tables["dim_delta.csv"],
    )


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------

def figure_accuracy(data: ReportData):
    """Three labeled bars: task-1 accuracy before drift, after, and realigned."""
    fig, ax = plt.subplots(figsize=(5, 4))
    labels = ["pre-drift", "drifted", "aligned"]
    values = [100.0 * data.accuracies[k] for k in ACCURACY_KEYS]
    bars = ax.bar(labels, values, color=["#4c72b0", "#c44e52", "#55a868"])
    for bar, value in zip(bars, values):
        ax.annotate(f"{value:.1f}", (bar.get_x() + bar.get_width() / 2, value),
                    ha="center", va="bottom", fontsize=10)
    ax.set_ylim(0, 105)
    ax.set_ylabel("task-1 accuracy (%)")
    ax.set_title(f"accuracy, seed {data.seed}")
    fig.tight_layout()
    return fig


def _scatter_panel(ax, table: dict, title: str):
    points = ax.scatter(table["x"], table["y"], c=table["class"],
                        cmap="tab10", s=12, linewidths=0)
    ax.set_title(title)
    ax.set_xlabel("pc 1")
    ax.set_ylabel("pc 2")
    return points


def figure_scatter(data: ReportData):
    """Side-by-side latent scatter, same PCA plane, colored by class."""
    fig, (ax_l, ax_r) = plt.subplots(1, 2, figsize=(10, 4.5), sharex=True, sharey=True)
    _scatter_panel(ax_l, data.before, "before alignment")
    points = _scatter_panel(ax_r, data.after, "after alignment")
    classes = np.unique(np.concatenate([data.before["class"], data.after["class"]]))
    colorbar = fig.colorbar(points, ax=(ax_l, ax_r), ticks=classes, fraction=0.03)
    colorbar.set_label("class")
    fig.suptitle(f"task-1 latents (2D projection), seed {data.seed}")
    return fig


def figure_energy_trace(data: ReportData):
    """One faint energy curve per tracked row, plus the mean curve."""
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    rows = data.trace["row"].astype(np.int64)
    steps = data.trace["step"]
    energies = data.trace["energy"]
    for row in np.unique(rows):
        mask = rows == row
        order = np.argsort(steps[mask])
        ax.plot(steps[mask][order], energies[mask][order],
                color="#4c72b0", alpha=0.05, linewidth=0.8)
    grid = np.unique(steps)
    mean = np.array([energies[steps == s].mean() for s in grid])
    ax.plot(grid, mean, color="#c44e52", linewidth=2.0, label="mean energy")
    ax.set_xlabel("alignment step")
    ax.set_ylabel("energy")
    ax.set_title(f"energy during alignment, seed {data.seed}")
    ax.legend()
    fig.tight_layout()
    return fig


def figure_dim_delta(data: ReportData):
    """Heatmap of per-dimension movement by step; None when there are no rows."""
    if data.delta["dim"].size == 0:
        return None
    dims = data.delta["dim"].astype(np.int64)
    steps = data.delta["step"].astype(np.int64)
    deltas = data.delta["delta"]
    dim_ids = np.unique(dims)
    step_ids = np.unique(steps)
    matrix = np.zeros((dim_ids.size, step_ids.size))
    dim_pos = {d: i for i, d in enumerate(dim_ids)}
    step_pos = {s: j for j, s in enumerate(step_ids)}
    for d, s, v in zip(dims, steps, deltas):
        matrix[dim_pos[d], step_pos[s]] = v
    span = max(float(np.abs(matrix).max()), 1e-12)

    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    image = ax.imshow(matrix, aspect="auto", origin="lower", cmap="RdBu_r",
                      vmin=-span, vmax=span,
                      extent=(step_ids.min() - 0.5, step_ids.max() + 0.5,
                              dim_ids.min() - 0.5, dim_ids.max() + 0.5))
    fig.colorbar(image, ax=ax, label="latent change")
    ax.set_xlabel("alignment step")
    ax.set_ylabel("latent dimension")
    ax.set_title(f"per-dimension movement, seed {data.seed}")
    fig.tight_layout()
    return fig


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

FIGURES = {
    "accuracy": figure_accuracy,
    "latents": figure_scatter,
    "energy_trace": figure_energy_trace,
    "dim_delta": figure_dim_delta,
}


def render_report(report_dir, out_dir=None, fmt: str = "png") -> list[Path]:
    """Write the standard figures for one report; returns the files written.

    `out_dir` defaults to a `figures` directory inside the report. The input
    files are only read, never modified.
    """
    if fmt not in ("png", "svg"):
        raise SchemaError(f"unsupported figure format: {fmt!r}")
    data = load_report(report_dir)
    out = Path(out_dir) if out_dir is not None else Path(report_dir) / "figures"
    out.mkdir(parents=True, exist_ok=True)
    metadata = {"Date": None} if fmt == "svg" else None
    written = []
    for name, build in FIGURES.items():
        fig = build(data)
        if fig is None:
            print(f"warning: dim_delta.csv has no data rows; skipping the "
                  f"{name} heatmap", file=sys.stderr)
            continue
        path = out / f"{name}.{fmt}"
        fig.savefig(path, format=fmt, dpi=150, metadata=metadata)
        plt.close(fig)
        written.append(path)
    return written


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="render_report",
        description="Render the standard figures from an alignment report directory.",
    )
    parser.add_argument("report_dir", help="directory holding report.json and the CSV files")
    parser.add_argument("--out", default=None, help="output directory (default: <report_dir>/figures)")
    parser.add_argument("--format", default="png", choices=("png", "svg"))
    args = parser.parse_args(argv)
    try:
        written = render_report(args.report_dir, out_dir=args.out, fmt=args.format)
    except (SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
