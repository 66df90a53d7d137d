"""
Module for point orientations: PCA normals over the spherical support region, normal -> dip angle / dip direction and
the cyclic transform of (dip, dip direction) into 2D poles inside the unit disk.

Angles are in degrees throughout. Dip direction is measured clockwise from north (+y).
"""

import logging
from typing import NamedTuple

import numpy as np
import pandas as pd

from discset.cloud import PointCloud, SpatialIndex, radius_of_influence

# Two smallest eigenvalues closer than this (relative to the largest) means no unique normal.
DEGENERATE_EIGEN_TOL = 1e-12
UNIT_TOL = 1e-9
CHUNK_SIZE = 20000

ORIENTATION_COLUMNS = ["index", "nx", "ny", "nz", "dip", "dipdir", "dx", "dy"]


class Orientation(NamedTuple):
    dip: float | np.ndarray
    dipdir: float | np.ndarray


class TransformedPole(NamedTuple):
    dx: float | np.ndarray
    dy: float | np.ndarray


class NeighbourhoodFrames(NamedTuple):
    """Batched PCA of many neighbourhoods. eigenvectors[i][:, 0] is the normal of neighbourhood i."""

    counts: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def degenerate(self) -> np.ndarray:
        w = self.eigenvalues
        return (self.counts < 3) | ((w[:, 1] - w[:, 0]) <= DEGENERATE_EIGEN_TOL * w[:, 2])


def canonicalise_normals(normals: np.ndarray) -> np.ndarray:
    """
    Flip normals into the upper hemisphere (nz >= 0). Horizontal normals (nz == 0) are flipped so the first nonzero of
    (nx, ny) is positive.
    """
    normals = np.array(normals, dtype=np.float64, copy=True)
    nx, ny, nz = normals[..., 0], normals[..., 1], normals[..., 2]
    flip = (nz < 0) | ((nz == 0) & ((nx < 0) | ((nx == 0) & (ny < 0))))
    normals[flip] *= -1.0
    return normals


def neighbourhood_frames(points: np.ndarray, neighbourhoods: list[np.ndarray]) -> NeighbourhoodFrames:
    """
    Eigen-decomposition of the centred covariance of each neighbourhood (offsets taken from a member point so large
    survey coordinates do not cost precision).

    :param points: (n, 3) cloud coordinates.
    :param neighbourhoods: one array of cloud point indices per neighbourhood.
    :return: NeighbourhoodFrames with ascending eigenvalues.
    """
    m = len(neighbourhoods)
    counts = np.fromiter((len(h) for h in neighbourhoods), dtype=np.intp, count=m)
    eigenvalues = np.zeros((m, 3))
    eigenvectors = np.tile(np.eye(3), (m, 1, 1))

    for start in range(0, m, CHUNK_SIZE):
        stop = min(start + CHUNK_SIZE, m)
        chunk_counts = counts[start:stop]
        filled = np.flatnonzero(chunk_counts > 0)
        if filled.size == 0:
            continue
        members = np.concatenate([neighbourhoods[start + i] for i in filled])
        sizes = chunk_counts[filled]
        # Offsets relative to the neighbourhood's first member keep the numbers small.
        firsts = np.array([neighbourhoods[start + i][0] for i in filled], dtype=np.intp)
        offsets = points[members] - points[np.repeat(firsts, sizes)]
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])

        sums = np.add.reduceat(offsets, starts, axis=0)
        outer = np.add.reduceat(offsets[:, :, None] * offsets[:, None, :], starts, axis=0)
        means = sums / sizes[:, None]
        covariance = outer / sizes[:, None, None] - means[:, :, None] * means[:, None, :]
        w, v = np.linalg.eigh(covariance)
        eigenvalues[start + filled] = np.clip(w, 0.0, None)
        eigenvectors[start + filled] = v

    return NeighbourhoodFrames(counts, eigenvalues, eigenvectors)


def estimate_normals(
    cloud: PointCloud, index: SpatialIndex, radius: float, indices: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """
    PCA normals for many points at once.

    :param cloud: the full cloud.
    :param index: spatial index over `cloud`.
    :param radius: support radius (metres).
    :param indices: points to estimate for (default: all).
    :return: (normals (m, 3) canonicalised, NaN where degenerate; degenerate mask (m,)).
    """
    if indices is None:
        indices = np.arange(cloud.count)
    indices = np.asarray(indices, dtype=np.intp)
    if indices.size == 0:
        return np.empty((0, 3)), np.empty(0, dtype=bool)

    neighbourhoods = index.query_many(cloud.points[indices], radius)
    frames = neighbourhood_frames(cloud.points, neighbourhoods)
    degenerate = frames.degenerate
    normals = canonicalise_normals(frames.eigenvectors[:, :, 0])
    normals[degenerate] = np.nan
    return normals, degenerate


def estimate_normal(q_index: int, cloud: PointCloud, index: SpatialIndex, ps: float) -> np.ndarray | None:
    """
    Normal of a single point from the PCA of its support region (query point included).

    :return: canonical unit normal, or None when the neighbourhood is degenerate.
    """
    normals, degenerate = estimate_normals(cloud, index, radius_of_influence(ps), np.array([q_index]))
    return None if degenerate[0] else normals[0]


def _fix_dipdir(dipdir: np.ndarray, dip: np.ndarray) -> np.ndarray:
    dipdir = np.where(dipdir >= 360.0, dipdir - 360.0, dipdir)
    return np.where(dip == 0, 0.0, dipdir)


def _as_output(values: np.ndarray):
    return float(values) if np.ndim(values) == 0 else values


def normal_to_orientation(normal: np.ndarray) -> Orientation:
    """
    Dip angle and dip direction of the plane with the given unit normal(s).

    DA = arccos(nz) (evaluated as atan2(|nxy|, nz), identical for unit vectors), DD = atan2(nx, ny) in [0, 360).
    Downward normals (DA > 90) are corrected to the same plane: DA -> 180 - DA, DD -> DD + 180.

    :param normal: (3,) or (..., 3) unit vector(s).
    :return: Orientation of floats or arrays.
    """
    normal = np.asarray(normal, dtype=np.float64)
    if normal.shape[-1] != 3:
        raise ValueError("Normals must have 3 components.")
    length = np.linalg.norm(normal, axis=-1)
    if np.any(np.abs(length - 1.0) > UNIT_TOL):
        raise ValueError("Normal is not a unit vector.")

    nx, ny, nz = normal[..., 0], normal[..., 1], normal[..., 2]
    dip = np.degrees(np.arctan2(np.hypot(nx, ny), nz))
    dipdir = np.mod(np.degrees(np.arctan2(nx, ny)), 360.0)

    downward = dip > 90.0
    dip = np.where(downward, 180.0 - dip, dip)
    dipdir = np.where(downward, np.mod(dipdir + 180.0, 360.0), dipdir)
    dipdir = _fix_dipdir(dipdir, dip)
    return Orientation(_as_output(dip), _as_output(dipdir))


def orientation_to_normal(dip, dipdir) -> np.ndarray:
    """Upper-hemisphere unit normal (sin DA sin DD, sin DA cos DD, cos DA)."""
    dip = np.radians(np.asarray(dip, dtype=np.float64))
    dipdir = np.radians(np.asarray(dipdir, dtype=np.float64))
    return np.stack([np.sin(dip) * np.sin(dipdir), np.sin(dip) * np.cos(dipdir), np.cos(dip)], axis=-1)


def orientation_to_pole2d(dip, dipdir) -> TransformedPole:
    """
    Cyclic transform into the unit disk: r = sin(DA) / (1 + cos(DA)), dx = r sin(DD), dy = r cos(DD).
    Dip direction 0 and 360 land on the same point, so the seam disappears.
    """
    dip = np.asarray(dip, dtype=np.float64)
    if np.any(dip < 0) or np.any(dip > 90.0 + 1e-9):
        raise ValueError("Dip angle must be within [0, 90] degrees.")
    dip_rad = np.radians(dip)
    dipdir_rad = np.radians(np.asarray(dipdir, dtype=np.float64))
    radius = np.sin(dip_rad) / (1.0 + np.cos(dip_rad))
    return TransformedPole(_as_output(radius * np.sin(dipdir_rad)), _as_output(radius * np.cos(dipdir_rad)))


def pole2d_to_orientation(dx, dy) -> Orientation:
    """Inverse of orientation_to_pole2d: DA = 2 atan(r), DD = atan2(dx, dy)."""
    dx = np.asarray(dx, dtype=np.float64)
    dy = np.asarray(dy, dtype=np.float64)
    radius = np.hypot(dx, dy)
    if np.any(radius > 1.0 + 1e-9):
        raise ValueError("Transformed pole lies outside the unit disk (radius > 1).")
    dip = np.degrees(2.0 * np.arctan(radius))
    dipdir = _fix_dipdir(np.mod(np.degrees(np.arctan2(dx, dy)), 360.0), dip)
    return Orientation(_as_output(dip), _as_output(dipdir))


def compute_orientations(cloud: PointCloud, mask: np.ndarray, index: SpatialIndex, ps: float) -> pd.DataFrame:
    """
    Orientation table for every retained (mask-true) point with a well defined normal.

    :param cloud: the full cloud.
    :param mask: planarity mask from filter_cloud.
    :param index: spatial index over the full cloud.
    :param ps: point spacing; the support radius is the same as the filter's.
    :return: DataFrame with columns index, nx, ny, nz, dip, dipdir, dx, dy in ascending point index order. `index`
        maps rows back to the cloud.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape[0] != cloud.count:
        raise ValueError(f"Mask has {mask.shape[0]} entries for {cloud.count} points.")
    retained = np.flatnonzero(mask)
    if retained.size == 0:
        logging.info("No retained points, orientation table is empty.")
        return pd.DataFrame({c: pd.Series(dtype=np.int64 if c == "index" else np.float64) for c in ORIENTATION_COLUMNS})

    normals, degenerate = estimate_normals(cloud, index, radius_of_influence(ps), retained)
    if degenerate.any():
        logging.info("%s retained points have no unique normal and are excluded.", int(degenerate.sum()))
    keep = ~degenerate
    normals = normals[keep]
    dip, dipdir = normal_to_orientation(normals)
    dx, dy = orientation_to_pole2d(dip, dipdir)

    table = pd.DataFrame(
        {
            "index": retained[keep].astype(np.int64),
            "nx": normals[:, 0],
            "ny": normals[:, 1],
            "nz": normals[:, 2],
            "dip": np.atleast_1d(dip),
            "dipdir": np.atleast_1d(dipdir),
            "dx": np.atleast_1d(dx),
            "dy": np.atleast_1d(dy),
        }
    )
    logging.info("Computed orientations for %s points.", table.shape[0])
    return table
