"""
Module for drawing the transformed-pole stereonet as SVG: unit circle, north tick, dip-angle circles, poles coloured by
set (noise grey), optional KDE contours and a legend with each set's mean orientation.
"""

import logging
import os
from pathlib import Path

import matplotlib as mpl
import numpy as np
from matplotlib import patches
from matplotlib.figure import Figure
from matplotlib.lines import Line2D

from discset.evaluation import KdeGrid
from discset.hdbscan import NOISE
from discset.planes import SetStatistics

DIP_CIRCLES = (15, 30, 45, 60, 75)
NOISE_COLOUR = "#9e9e9e"
CONTOUR_FRACTIONS = (0.1, 0.3, 0.5, 0.7, 0.9)


def set_colour(set_id: int) -> tuple:
    if set_id == NOISE:
        return mpl.colors.to_rgba(NOISE_COLOUR)
    return mpl.colormaps["tab20"](set_id % 20)


def _draw_grid(ax) -> None:
    ax.add_patch(patches.Circle((0, 0), 1.0, fill=False, edgecolor="black", linewidth=1.2, gid="boundary"))
    for dip in DIP_CIRCLES:
        radius = np.tan(np.radians(dip) / 2.0)
        ax.add_patch(
            patches.Circle((0, 0), radius, fill=False, edgecolor="#cccccc", linewidth=0.6, gid=f"dip-circle-{dip}")
        )
    ax.add_line(Line2D([0, 0], [1.0, 1.06], color="black", linewidth=1.2, gid="north-tick"))
    ax.text(0, 1.09, "N", ha="center", va="bottom", fontsize=10)


def _draw_contours(ax, grid: KdeGrid) -> None:
    density = np.array(grid.density, dtype=np.float64)
    top = density.max()
    if not np.isfinite(top) or top <= 0:
        return
    gx, gy = np.meshgrid(grid.centres, grid.centres, indexing="xy")
    density[np.hypot(gx, gy) > 1.0] = np.nan
    contours = ax.contour(
        grid.centres, grid.centres, density, levels=[f * top for f in CONTOUR_FRACTIONS], colors="black", linewidths=0.5
    )
    contours.set_gid("kde-contours")


def render_stereonet_svg(
    poles: np.ndarray,
    labels: np.ndarray,
    stats: list[SetStatistics],
    path: str | os.PathLike,
    kde: KdeGrid | None = None,
    max_markers: int | None = 20000,
    seed: int = 0,
) -> Path:
    """
    Draw poles on the transformed unit disk and save as SVG. Output is byte-stable for the same input.

    :param poles: (m, 2) transformed poles (dx, dy), all inside the unit disk.
    :param labels: (m,) set id per pole, NOISE for unclustered poles.
    :param stats: one SetStatistics per set; the legend has one entry per item.
    :param path: SVG file to write.
    :param kde: optional density grid drawn as iso-density contours.
    :param max_markers: above this many poles a seeded random subset is drawn.
    :param seed: seed for the subset.
    :return: path written.
    """
    poles = np.asarray(poles, dtype=np.float64).reshape(-1, 2)
    labels = np.asarray(labels).reshape(-1)
    if labels.shape[0] != poles.shape[0]:
        raise ValueError("Need one label per pole.")
    if poles.size and np.any(np.hypot(poles[:, 0], poles[:, 1]) > 1.0 + 1e-9):
        raise ValueError("Poles must lie inside the unit disk.")

    if max_markers is not None and poles.shape[0] > max_markers:
        keep = np.sort(np.random.default_rng(seed).choice(poles.shape[0], size=max_markers, replace=False))
        logging.debug("Stereonet draws %s of %s poles.", max_markers, poles.shape[0])
        poles, labels = poles[keep], labels[keep]

    fig = Figure(figsize=(7, 6), dpi=100)
    ax = fig.add_subplot(111, aspect="equal")
    ax.set_axis_off()
    ax.set_xlim(-1.15, 1.15)
    ax.set_ylim(-1.15, 1.2)
    _draw_grid(ax)

    noise = labels == NOISE
    if noise.any():
        markers = ax.scatter(poles[noise, 0], poles[noise, 1], s=4, color=NOISE_COLOUR, linewidths=0, zorder=2)
        markers.set_gid("noise")
    for set_id in sorted(np.unique(labels[~noise]).tolist()):
        members = labels == set_id
        markers = ax.scatter(
            poles[members, 0], poles[members, 1], s=6, color=set_colour(set_id), linewidths=0, zorder=3
        )
        markers.set_gid(f"set-{set_id}")

    if kde is not None:
        _draw_contours(ax, kde)

    if stats:
        handles = [
            Line2D(
                [],
                [],
                marker="o",
                linestyle="",
                color=set_colour(s.set_id),
                label=f"Set {s.set_id}: {s.mean_dip:.1f}/{s.mean_dipdir:05.1f}",
            )
            for s in stats
        ]
        legend = ax.legend(
            handles=handles, loc="upper left", bbox_to_anchor=(1.0, 1.0), fontsize=7, frameon=False, title="DA/DD"
        )
        legend.set_gid("legend")

    path = Path(path)
    with mpl.rc_context({"svg.fonttype": "none", "svg.hashsalt": "discset"}):
        fig.savefig(path, format="svg", bbox_inches="tight", metadata={"Date": None})
    logging.info("Stereonet with %s poles and %s sets written to %s", poles.shape[0], len(stats), path)
    return path
