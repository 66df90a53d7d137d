"""
Module for the single-pass planarity filter. Every point's spherical neighbourhood is turned into an elevation vs
azimuth signal; a planar patch gives (close to) one azimuthal cycle, anything else leaves energy in the higher
harmonics. Points whose secondary amplitudes have a standard deviation above the threshold are removed as noise.

A second check catches neighbourhoods cut by a crease: when any neighbour sits further off the local PCA plane than a
set fraction of the support radius, the point is not planar either. Switch it off with max_residual=None.
"""

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from discset.cloud import PointCloud, SpatialIndex, radius_of_influence
from discset.orientation import canonicalise_normals, neighbourhood_frames

FRAMES = ("levelled", "global")
CHUNK_SIZE = 2048


class NeighborAngles(NamedTuple):
    azimuth: np.ndarray
    elevation: np.ndarray


class SpectrumVerdict(NamedTuple):
    secondary_std: float
    is_planar: bool
    residual_ratio: float = float("nan")


@dataclass
class FilterResult:
    """
    Output of one filter pass.

    Attributes:
    mask - bool array; True where the point is planar (retained).
    secondary_std - float array; NaN where the point had too few neighbours for a signal.
    residual_ratio - float array; largest neighbour height off the local plane over the support radius (NaN as above).
    neighbour_counts - int array; distinct neighbours in the support region, self excluded.
    radius - float; the support radius used.
    """

    mask: np.ndarray
    secondary_std: np.ndarray
    residual_ratio: np.ndarray
    neighbour_counts: np.ndarray
    radius: float

    @property
    def retained(self) -> int:
        return int(self.mask.sum())

    @property
    def removed(self) -> int:
        return int(self.mask.size - self.mask.sum())


class _SignalBatch(NamedTuple):
    signals: np.ndarray
    has_signal: np.ndarray
    counts: np.ndarray
    peak_height: np.ndarray


def _angles(offsets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    horizontal = np.hypot(offsets[:, 0], offsets[:, 1])
    elevation = np.degrees(np.arctan2(offsets[:, 2], horizontal))
    azimuth = np.mod(np.degrees(np.arctan2(offsets[:, 1], offsets[:, 0])), 360.0)
    azimuth[azimuth >= 360.0] = 0.0
    return azimuth, elevation


def neighbor_angles(q: np.ndarray, neighbours: np.ndarray, ids: np.ndarray | None = None) -> NeighborAngles:
    """
    Azimuth and elevation (degrees) of every neighbour as seen from q, sorted by azimuth.

    :param q: query point (3,).
    :param neighbours: (k, 3) neighbour coordinates, q itself excluded.
    :param ids: point indices of the neighbours, used to break azimuth ties (default: position in `neighbours`).
    :return: NeighborAngles with azimuth in [0, 360) and elevation in [-90, 90].
    """
    offsets = np.asarray(neighbours, dtype=np.float64).reshape(-1, 3) - np.asarray(q, dtype=np.float64)
    if np.any(np.all(offsets == 0, axis=1)):
        raise ValueError("A neighbour coincides with the query point.")
    if ids is None:
        ids = np.arange(offsets.shape[0])

    azimuth, elevation = _angles(offsets)
    order = np.lexsort((ids, azimuth))
    return NeighborAngles(azimuth[order], elevation[order])


def resample_signal(angles: NeighborAngles, n: int = 64, min_pairs: int = 8) -> np.ndarray:
    """
    Linear interpolation of elevation over azimuth onto n uniform azimuths 360*k/n, wrapping at 360.

    :param angles: NeighborAngles sorted by azimuth.
    :param n: grid size.
    :param min_pairs: fewer angle pairs than this cannot make a signal.
    :return: (n,) elevation samples in degrees.
    """
    azimuth, elevation = np.asarray(angles.azimuth), np.asarray(angles.elevation)
    if azimuth.size < min_pairs:
        raise ValueError(f"Need at least {min_pairs} neighbour angles for a signal, got {azimuth.size}.")

    # One wrapped copy on each side makes the interpolation periodic.
    xp = np.concatenate([[azimuth[-1] - 360.0], azimuth, [azimuth[0] + 360.0]])
    fp = np.concatenate([[elevation[-1]], elevation, [elevation[0]]])
    grid = 360.0 * np.arange(n) / n
    return np.interp(grid, xp, fp)


def amplitude_spectrum(signal: np.ndarray) -> np.ndarray:
    """
    One-sided amplitude spectrum: index 0 is |X0|/N, the rest 2|Xk|/N, so a sinusoid of amplitude a shows a in its bin.
    Works along the last axis, so a stack of signals can be done at once.
    """
    signal = np.asarray(signal, dtype=np.float64)
    n = signal.shape[-1]
    if n < 2 or n & (n - 1):
        raise ValueError(f"Signal length must be a power of two, got {n}.")
    spectrum = np.abs(np.fft.rfft(signal, axis=-1)) * (2.0 / n)
    spectrum[..., 0] /= 2.0
    return spectrum


def secondary_std(spectrum: np.ndarray) -> float | np.ndarray:
    """Population standard deviation of the amplitudes above the fundamental (indices 2 .. N/2)."""
    spectrum = np.asarray(spectrum, dtype=np.float64)
    if spectrum.shape[-1] < 3:
        raise ValueError("Spectrum needs at least 3 amplitudes.")
    std = np.std(spectrum[..., 2:], axis=-1)
    return float(std) if std.ndim == 0 else std


def _periodic_resample(azimuth: np.ndarray, elevation: np.ndarray, counts: np.ndarray, grid_n: int) -> np.ndarray:
    """
    resample_signal for many rows at once. azimuth / elevation are (m, k) and sorted within each row; entries past
    counts[i] are padding.
    """
    m = azimuth.shape[0]
    rows = np.arange(m)
    width = int(counts.max()) + 2
    xp = np.full((m, width), np.inf)
    fp = np.zeros((m, width))
    xp[:, 1 : azimuth.shape[1] + 1] = np.where(np.arange(azimuth.shape[1]) < counts[:, None], azimuth, np.inf)
    fp[:, 1 : elevation.shape[1] + 1] = elevation

    xp[:, 0] = xp[rows, counts] - 360.0
    fp[:, 0] = fp[rows, counts]
    xp[rows, counts + 1] = xp[:, 1] + 360.0
    fp[rows, counts + 1] = fp[:, 1]

    grid = 360.0 * np.arange(grid_n) / grid_n
    # xp[seg] <= grid < xp[seg + 1]; padding is +inf so it never counts
    seg = np.sum(xp[:, :, None] <= grid[None, None, :], axis=1) - 1
    x0 = np.take_along_axis(xp, seg, axis=1)
    x1 = np.take_along_axis(xp, seg + 1, axis=1)
    f0 = np.take_along_axis(fp, seg, axis=1)
    f1 = np.take_along_axis(fp, seg + 1, axis=1)
    return f0 + (grid[None, :] - x0) * (f1 - f0) / (x1 - x0)


def _signal_batch(
    points: np.ndarray, query_ids: np.ndarray, neighbourhoods: list[np.ndarray], frame: str, grid_n: int, min_neighbors: int
) -> _SignalBatch:
    """Signals, distinct neighbour counts and peak off-plane heights for a batch of query points."""
    m = query_ids.size
    frames = neighbourhood_frames(points, neighbourhoods)
    normals = canonicalise_normals(frames.eigenvectors[:, :, 0])

    sizes = np.fromiter((h.size for h in neighbourhoods), dtype=np.intp, count=m)
    members = np.concatenate(neighbourhoods) if sizes.sum() else np.empty(0, dtype=np.intp)
    owner = np.repeat(np.arange(m), sizes)
    offsets = points[members] - points[query_ids[owner]]
    # drops the query point and any duplicate of it
    distinct = np.any(offsets != 0, axis=1)
    owner, members, offsets = owner[distinct], members[distinct], offsets[distinct]
    counts = np.bincount(owner, minlength=m)

    has_signal = counts >= min_neighbors
    signals = np.zeros((m, grid_n))
    peak_height = np.full(m, np.nan)
    if not has_signal.any():
        return _SignalBatch(signals, has_signal, counts, peak_height)

    keep = has_signal[owner]
    owner, members, offsets = owner[keep], members[keep], offsets[keep]
    height = np.einsum("kj,kj->k", offsets, normals[owner])
    if frame == "levelled":
        major = frames.eigenvectors[:, :, 2]
        basis = np.stack([major, np.cross(normals, major), normals], axis=-1)
        offsets = np.einsum("kj,kjl->kl", offsets, basis[owner])
    azimuth, elevation = _angles(offsets)

    order = np.lexsort((members, azimuth, owner))
    owner, azimuth, elevation, height = owner[order], azimuth[order], elevation[order], height[order]

    rows = np.flatnonzero(has_signal)
    row_of = np.full(m, -1, dtype=np.intp)
    row_of[rows] = np.arange(rows.size)
    row_counts = counts[rows]
    starts = np.concatenate([[0], np.cumsum(row_counts)[:-1]])
    slot = np.arange(owner.size) - np.repeat(starts, row_counts)

    shape = (rows.size, int(row_counts.max()))
    padded_azimuth = np.zeros(shape)
    padded_elevation = np.zeros(shape)
    padded_height = np.full(shape, np.nan)
    padded_azimuth[row_of[owner], slot] = azimuth
    padded_elevation[row_of[owner], slot] = elevation
    padded_height[row_of[owner], slot] = height

    signals[rows] = _periodic_resample(padded_azimuth, padded_elevation, row_counts, grid_n)
    median = np.nanmedian(padded_height, axis=1)
    peak_height[rows] = np.nanmax(np.abs(padded_height - median[:, None]), axis=1)
    return _SignalBatch(signals, has_signal, counts, peak_height)


def _verdicts(
    batch: _SignalBatch, radius: float, threshold: float, max_residual: float | None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    std = np.full(batch.has_signal.size, np.nan)
    if batch.has_signal.any():
        std[batch.has_signal] = secondary_std(amplitude_spectrum(batch.signals[batch.has_signal]))
    ratio = batch.peak_height / radius
    planar = batch.has_signal & (np.nan_to_num(std, nan=np.inf) <= threshold)
    if max_residual is not None:
        planar &= np.nan_to_num(ratio, nan=np.inf) <= max_residual
    return planar, std, ratio


def _check_arguments(threshold: float, frame: str, max_residual: float | None) -> None:
    if threshold <= 0:
        raise ValueError("Filter threshold must be positive.")
    if frame not in FRAMES:
        raise ValueError(f"Unknown filter frame '{frame}', expected one of {FRAMES}.")
    if max_residual is not None and max_residual <= 0:
        raise ValueError("max_residual must be positive (or None to switch the check off).")


def classify_point(
    q_index: int,
    cloud: PointCloud,
    index: SpatialIndex,
    ps: float,
    threshold: float = 1.0,
    grid_n: int = 64,
    min_neighbors: int = 8,
    frame: str = "levelled",
    max_residual: float | None = 0.04,
) -> SpectrumVerdict:
    """
    Planarity verdict for a single point.

    :param q_index: index of the point in `cloud`.
    :param cloud: the cloud.
    :param index: spatial index over `cloud`.
    :param ps: point spacing; the support radius is radius_of_influence(ps).
    :param threshold: maximum secondary standard deviation (degrees) of a planar point.
    :param grid_n: FFT grid size.
    :param min_neighbors: neighbour floor; fewer neighbours is non-planar.
    :param frame: 'levelled' (offsets in the neighbourhood's PCA frame) or 'global'.
    :param max_residual: largest neighbour height off the local plane, as a fraction of the support radius; None
        leaves the verdict to the spectrum alone.
    :return: SpectrumVerdict; secondary_std and residual_ratio are NaN when there was no signal.
    """
    _check_arguments(threshold, frame, max_residual)
    radius = radius_of_influence(ps)
    query = np.array([q_index], dtype=np.intp)
    hits = index.query(cloud.points[q_index], radius)
    batch = _signal_batch(cloud.points, query, [hits], frame, grid_n, min_neighbors)
    planar, std, ratio = _verdicts(batch, radius, threshold, max_residual)
    return SpectrumVerdict(float(std[0]), bool(planar[0]), float(ratio[0]))


def filter_cloud(
    cloud: PointCloud,
    index: SpatialIndex | None,
    ps: float,
    threshold: float = 1.0,
    grid_n: int = 64,
    min_neighbors: int = 8,
    frame: str = "levelled",
    max_residual: float | None = 0.04,
) -> FilterResult:
    """
    Classify every point of the cloud. Same arguments as classify_point; mask[i] equals classify_point(i, ...).

    :return: FilterResult.
    """
    _check_arguments(threshold, frame, max_residual)
    radius = radius_of_influence(ps)
    n = cloud.count
    if n == 0:
        empty = np.zeros(0)
        return FilterResult(np.zeros(0, dtype=bool), empty, empty.copy(), np.zeros(0, dtype=np.intp), radius)

    logging.info("Filtering %s points with support radius %.4f m (%s frame).", n, radius, frame)
    points = cloud.points
    neighbourhoods = index.query_many(points, radius)

    mask = np.zeros(n, dtype=bool)
    std = np.full(n, np.nan)
    ratio = np.full(n, np.nan)
    neighbour_counts = np.zeros(n, dtype=np.intp)
    for start in range(0, n, CHUNK_SIZE):
        stop = min(start + CHUNK_SIZE, n)
        batch = _signal_batch(points, np.arange(start, stop), neighbourhoods[start:stop], frame, grid_n, min_neighbors)
        mask[start:stop], std[start:stop], ratio[start:stop] = _verdicts(batch, radius, threshold, max_residual)
        neighbour_counts[start:stop] = batch.counts

    result = FilterResult(mask, std, ratio, neighbour_counts, radius)
    creased = int((np.nan_to_num(std, nan=np.inf) <= threshold).sum()) - result.retained
    logging.info(
        "Planarity filter retained %s and removed %s points (%s below the %s-neighbour floor, %s off-plane).",
        result.retained,
        result.removed,
        int((neighbour_counts < min_neighbors).sum()),
        min_neighbors,
        creased,
    )
    return result
