"""Matplotlib figures for reports: PR curves, similarity heat maps, loss curves, instance overlays.

Everything renders through the Agg backend straight to a file; nothing here
opens a window.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib import colors, ticker  # noqa: E402

from .evaluation import MetricReport  # noqa: E402
from .occupancy import GridSpec, to_image  # noqa: E402
from .segmentation import SegmentationResult  # noqa: E402

STYLE = {
    "axes": dict(labelsize=9, titlesize=10, linewidth=0.6),
    "figure": dict(dpi=110, figsize=(5.0, 3.6), facecolor="white"),
    "font": dict(family="sans-serif", size=9),
    "image": dict(interpolation="nearest", origin="upper"),
    "legend": dict(fontsize=8, frameon=False),
    "lines": dict(linewidth=1.2),
    "savefig": dict(dpi=150, bbox="tight"),
    "xtick.major": dict(size=3, width=0.6),
    "ytick.major": dict(size=3, width=0.6),
}

MISSING_COLOR = "0.8"


def apply_style() -> None:
    for group, values in STYLE.items():
        matplotlib.rc(group, **values)


def _extent(spec: GridSpec):
    x0, y0 = spec.origin
    return (x0, x0 + spec.width * spec.tile_size, y0, y0 + spec.height * spec.tile_size)


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_pr_curves(report: MetricReport, path: str | Path) -> Path:
    """Step plot of each category's precision/recall curve, AP in the legend."""
    apply_style()
    fig, ax = plt.subplots()
    for cat, (rec, prec) in report.curves.items():
        ap = report.rows.get(cat, {}).get("ap")
        label = cat if ap is None else f"{cat} (AP {100 * ap:.1f})"
        if rec:
            ax.step([0.0] + list(rec), [prec[0]] + list(prec), where="post", label=label)
        else:
            ax.plot([], [], label=label)
    ax.set(xlim=(0, 1.02), ylim=(0, 1.05), xlabel="recall", ylabel="precision", title=report.title)
    ax.xaxis.set_major_locator(ticker.MultipleLocator(0.25))
    ax.yaxis.set_major_locator(ticker.MultipleLocator(0.25))
    ax.grid(linestyle=":", linewidth=0.5, color="0.6")
    ax.legend(loc="lower left")
    return _save(fig, path)


def plot_category_bars(report: MetricReport, path: str | Path, metric: str = "f1") -> Path:
    apply_style()
    cats = [c for c, r in report.rows.items() if metric in r]
    vals = [100 * report.rows[c][metric] for c in cats]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.6 * len(cats) + 1.5), 3.6))
    ax.bar(range(len(cats)), vals, color="tab:blue", width=0.7)
    ax.set_xticks(range(len(cats)), cats, rotation=35, ha="right")
    ax.set(ylim=(0, 105), ylabel=metric, title=report.title)
    ax.grid(axis="y", linestyle=":", linewidth=0.5, color="0.6")
    return _save(fig, path)


def plot_similarity_field(field: np.ndarray, spec: GridSpec, path: str | Path,
                          title: str = "", labels: Sequence[tuple[tuple[float, float], str]] = ()) -> Path:
    """Viridis heat map of per-cell similarity; NaN cells (no room) are drawn grey."""
    apply_style()
    cmap = matplotlib.colormaps["viridis"].copy()
    cmap.set_bad(MISSING_COLOR)
    data = np.ma.masked_invalid(to_image(field))
    finite = field[np.isfinite(field)]
    lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    if hi - lo < 1e-9:
        lo, hi = lo - 0.5, hi + 0.5
    fig, ax = plt.subplots()
    im = ax.imshow(data, cmap=cmap, norm=colors.Normalize(lo, hi), extent=_extent(spec))
    for (x, y), text in labels:
        ax.annotate(text, (x, y), ha="center", va="center", fontsize=7, color="white")
    fig.colorbar(im, ax=ax, label="cosine similarity", shrink=0.85)
    ax.set(xlabel="x [m]", ylabel="y [m]", title=title)
    ax.set_aspect("equal")
    return _save(fig, path)


def plot_loss_history(history: Sequence[float], path: str | Path, title: str = "Training loss") -> Path:
    apply_style()
    fig, ax = plt.subplots()
    ax.plot(np.arange(1, len(history) + 1), history, color="tab:red")
    ax.set(xlabel="epoch", ylabel="mean loss", title=title)
    if len(history) and min(history) > 0:
        ax.set_yscale("log")
    ax.grid(linestyle=":", linewidth=0.5, color="0.6")
    return _save(fig, path)


def plot_instances(seg: SegmentationResult, path: str | Path, title: str = "",
                   background: np.ndarray | None = None,
                   edges: Sequence[tuple[tuple[float, float], tuple[float, float]]] = ()) -> Path:
    """Rooms in distinct colours, transitions in black, optional density backdrop and graph edges."""
    apply_style()
    spec = seg.spec
    fig, ax = plt.subplots()
    if background is not None:
        bg = np.log1p(np.asarray(background, dtype=np.float64))
        ax.imshow(to_image(bg), cmap="Greys", extent=_extent(spec), alpha=0.5)
    palette = matplotlib.colormaps["tab20"]
    rgba = np.zeros(spec.shape + (4,))
    for k, m in enumerate(sorted(seg.rooms, key=lambda m: m.instance_id)):
        rgba[m.mask] = palette(k % 20)
        rgba[m.mask, 3] = 0.7
    for m in seg.transitions:
        rgba[m.mask] = (0.0, 0.0, 0.0, 1.0)
    ax.imshow(np.flipud(rgba.transpose(1, 0, 2)), extent=_extent(spec))
    for m in seg.rooms:
        ii, jj = np.nonzero(m.mask)
        x = spec.origin[0] + (ii.mean() + 0.5) * spec.tile_size
        y = spec.origin[1] + (jj.mean() + 0.5) * spec.tile_size
        ax.annotate(str(m.instance_id), (x, y), ha="center", va="center", fontsize=8)
    for (x0, y0), (x1, y1) in edges:
        ax.plot([x0, x1], [y0, y1], color="tab:red", linewidth=1.0, marker="o", markersize=3)
    ax.set(xlabel="x [m]", ylabel="y [m]", title=title)
    ax.set_aspect("equal")
    return _save(fig, path)
