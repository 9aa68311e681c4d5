"""Line plots of normalized error versus context length N or task count T.

One vector-graphic file per (family, axis), plus a tidy CSV of exactly the
points drawn, so results stay inspectable without a plotting stack. Curves
average normalized MSE over seeds. On the T axis (log-scaled), estimator
rows (T = 0) become dashed horizontal references at the matching N.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .trainer import EvalReport, EvalRow

AXIS_LABELS = {"N": "context length N", "T": "pre-training tasks T"}
Y_LABEL = "normalized MSE"


@dataclass(frozen=True)
class Point:
    family: str
    model: str
    T: int
    N: int
    x: int
    mean_normalized_mse: float
    num_seeds: int


def _slug(text: str) -> str:
    out = "".join(ch if ch.isalnum() else "-" for ch in text)
    while "--" in out:
        out = out.replace("--", "-")
    return out.strip("-").lower()


def _mean_over_seeds(rows: Sequence[EvalRow]) -> Tuple[float, int]:
    return float(np.mean([r.normalized_mse for r in rows])), len({r.seed for r in rows})


def _lines_for_axis(rows: Sequence[EvalRow], axis: str) -> Dict[tuple, List[Point]]:
    """Group rows into curves with >= 2 distinct x values, seed-averaged."""
    assert axis in ("N", "T")
    cells: Dict[tuple, List[EvalRow]] = {}
    for r in rows:
        if axis == "T" and r.T == 0:
            continue  # estimators have no task axis; drawn separately
        x = r.T if axis == "T" else r.N
        other = r.N if axis == "T" else r.T
        cells.setdefault((r.model, other, x), []).append(r)
    lines: Dict[tuple, List[Point]] = {}
    for (model, other, x), cell in sorted(cells.items()):
        mean, num_seeds = _mean_over_seeds(cell)
        T, N = (x, other) if axis == "T" else (other, x)
        lines.setdefault((model, other), []).append(Point(
            cell[0].family, model, T, N, x, mean, num_seeds))
    return {key: pts for key, pts in lines.items() if len({p.x for p in pts}) >= 2}


def _estimator_references(rows: Sequence[EvalRow], n_values) -> List[Point]:
    refs: Dict[tuple, List[EvalRow]] = {}
    for r in rows:
        if r.T == 0 and r.N in n_values:
            refs.setdefault((r.model, r.N), []).append(r)
    out = []
    for (model, N), cell in sorted(refs.items()):
        mean, num_seeds = _mean_over_seeds(cell)
        out.append(Point(cell[0].family, model, 0, N, 0, mean, num_seeds))
    return out


def _write_points_csv(path: Path, axis: str, points: Sequence[Point]) -> None:
    import csv

    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["family", "model", "T", "N", "x_axis", "x",
                         "mean_normalized_mse", "num_seeds"])
        for p in points:
            writer.writerow([p.family, p.model, p.T, p.N, axis, p.x,
                             repr(p.mean_normalized_mse), p.num_seeds])


def _draw(path: Path, title: str, axis: str, lines: Dict[tuple, List[Point]],
          references: Sequence[Point]) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for (model, other), pts in sorted(lines.items()):
        pts = sorted(pts, key=lambda p: p.x)
        label = f"{model} (N={other})" if axis == "T" else f"{model} (T={other})"
        ax.plot([p.x for p in pts], [p.mean_normalized_mse for p in pts],
                marker="o", label=label)
    for ref in references:
        ax.axhline(ref.mean_normalized_mse, linestyle="--", linewidth=1.0,
                   color="gray", alpha=0.8)
        ax.annotate(f"{ref.model} (N={ref.N})", xy=(0.02, ref.mean_normalized_mse),
                    xycoords=("axes fraction", "data"), fontsize=7,
                    va="bottom", color="gray")
    if axis == "T":
        ax.set_xscale("log")
    ax.set_xlabel(AXIS_LABELS[axis])
    ax.set_ylabel(Y_LABEL)
    ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_report(report: EvalReport, out_dir, axes: Sequence[str] = ("N", "T"),
                family: Optional[str] = None) -> List[Path]:
    """Emit per-(family, axis) SVG + tidy CSV files; returns written paths."""
    rows = report.rows
    if family is not None:
        rows = [r for r in rows if family in r.family]
    if not rows:
        raise ValueError("no rows to plot" + (f" for family filter {family!r}" if family else ""))
    for axis in axes:
        if axis not in AXIS_LABELS:
            raise ValueError(f"axis must be one of {sorted(AXIS_LABELS)}, got {axis!r}")

    written: List[Path] = []
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    families = sorted({r.family for r in rows})
    for fam in families:
        fam_rows = [r for r in rows if r.family == fam]
        for axis in axes:
            lines = _lines_for_axis(fam_rows, axis)
            if not lines:
                continue
            refs = []
            if axis == "T":
                n_values = {other for (_, other) in lines}
                refs = _estimator_references(fam_rows, n_values)
            base = out_dir / f"{_slug(fam)}-vs-{axis}"
            _draw(base.with_suffix(".svg"), fam, axis, lines, refs)
            points = [p for pts in lines.values() for p in pts] + refs
            _write_points_csv(base.with_suffix(".csv"), axis, points)
            written.extend([base.with_suffix(".svg"), base.with_suffix(".csv")])
    if not written:
        raise ValueError("no curve has two or more points on the requested axes; nothing plotted")
    return written


def plot_csv(csv_path, out_dir, axes: Sequence[str] = ("N", "T"),
             family: Optional[str] = None) -> List[Path]:
    return plot_report(EvalReport.from_csv(csv_path), out_dir, axes, family)
