"""
Module for splitting each orientation set into individual discontinuity planes (spatial DBSCAN), dropping small
planes, fitting the survivors and summarising every set.
"""

import logging
import os
from collections import deque
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from discset import handle_tables
from discset.cloud import PointCloud
from discset.hdbscan import NOISE
from discset.orientation import Orientation, canonicalise_normals, normal_to_orientation

STATISTICS_BASES = ("points", "planes")
COLLINEAR_TOL = 1e-12


class PlaneFit(NamedTuple):
    """Orthogonal least squares plane: unit normal (upper hemisphere), centroid and rms point-to-plane distance."""

    normal: np.ndarray
    centroid: np.ndarray
    rms: float


@dataclass
class PlaneCluster:
    """
    One discontinuity plane.

    Attributes:
    set_id - int; orientation set the plane belongs to.
    plane_id - int; unique over the run once planes are numbered (-1 before).
    members - int array; point indices into the cloud.
    normal, centroid, rms, pole - filled in by fit().
    """

    set_id: int
    members: np.ndarray
    plane_id: int = -1
    normal: np.ndarray | None = None
    centroid: np.ndarray | None = None
    rms: float | None = None
    pole: Orientation | None = None

    @property
    def point_count(self) -> int:
        return int(self.members.size)

    def fit(self, points: np.ndarray) -> "PlaneCluster":
        self.normal, self.centroid, self.rms = fit_plane(points[self.members])
        self.pole = plane_pole(self)
        return self

    def to_dict(self) -> dict:
        return {
            "id": self.plane_id,
            "set_id": self.set_id,
            "point_count": self.point_count,
            "dip": float(self.pole.dip),
            "dipdir": float(self.pole.dipdir),
            "centroid": [float(c) for c in self.centroid],
            "rms": float(self.rms),
        }


@dataclass
class SetStatistics:
    set_id: int
    plane_count: int
    point_count: int
    mean_dip: float
    sd_dip: float
    mean_dipdir: float
    sd_dipdir: float

    def to_dict(self) -> dict:
        return {
            "id": self.set_id,
            "point_count": self.point_count,
            "plane_count": self.plane_count,
            "mean_dip": self.mean_dip,
            "sd_dip": self.sd_dip,
            "mean_dipdir": self.mean_dipdir,
            "sd_dipdir": self.sd_dipdir,
        }


##########
# DBSCAN #
##########


def dbscan(points: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """
    Density based spatial clustering. A core point has at least min_pts points (itself included) within eps.
    Clusters grow breadth first from the lowest unlabelled core point, visiting neighbours in ascending index order;
    a border point joins the first cluster that reaches it.

    :param points: (n, 3) coordinates.
    :param eps: neighbourhood radius, > 0.
    :param min_pts: core threshold, >= 1.
    :return: labels 0..k-1 in order of discovery, NOISE (-1) elsewhere.
    """
    if eps <= 0:
        raise ValueError("DBSCAN eps must be positive.")
    if min_pts < 1:
        raise ValueError("DBSCAN min_pts must be at least 1.")
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = points.shape[0]
    labels = np.full(n, NOISE, dtype=np.intp)
    if n == 0:
        return labels

    neighbourhoods = [
        np.asarray(h, dtype=np.intp)
        for h in cKDTree(points).query_ball_point(points, eps, return_sorted=True, workers=-1)
    ]
    is_core = np.fromiter((h.size >= min_pts for h in neighbourhoods), dtype=bool, count=n)

    cluster = 0
    for seed in np.flatnonzero(is_core):
        if labels[seed] != NOISE:
            continue
        labels[seed] = cluster
        queue = deque([seed])
        while queue:
            neighbours = neighbourhoods[queue.popleft()]
            fresh = neighbours[labels[neighbours] == NOISE]
            labels[fresh] = cluster
            queue.extend(fresh[is_core[fresh]].tolist())
        cluster += 1
    return labels


#################
# Plane fitting #
#################


def fit_plane(points: np.ndarray) -> PlaneFit:
    """
    Orthogonal (total) least squares plane through the points.

    :param points: (m, 3), at least 3 non-collinear points.
    :return: PlaneFit(normal, centroid, rms).
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if points.shape[0] < 3:
        raise ValueError("A plane fit needs at least 3 points.")
    centroid = points.mean(axis=0)
    centred = points - centroid
    w, v = np.linalg.eigh(centred.T @ centred / points.shape[0])
    if w[1] <= COLLINEAR_TOL * max(w[2], np.finfo(float).tiny):
        raise ValueError("Plane fit points are collinear or coincident.")
    normal = canonicalise_normals(v[None, :, 0])[0]
    rms = float(np.sqrt(np.mean((centred @ normal) ** 2)))
    return PlaneFit(normal, centroid, rms)


def plane_pole(cluster: PlaneCluster) -> Orientation:
    if cluster.normal is None:
        raise ValueError("Plane has not been fitted.")
    dip, dipdir = normal_to_orientation(cluster.normal)
    return Orientation(float(dip), float(dipdir))


def segment_planes(
    cloud: PointCloud, set_labels: np.ndarray, ps: float, eps_factor: float = 2.0, min_pts: int = 20
) -> list[PlaneCluster]:
    """
    Split every set into spatially separate planes with DBSCAN (eps = eps_factor * ps). DBSCAN noise is dropped.

    :param cloud: the full cloud.
    :param set_labels: per-point set id, NOISE for points in no set.
    :param ps: point spacing.
    :return: unfitted PlaneClusters ordered by set id, then by DBSCAN label.
    """
    set_labels = np.asarray(set_labels)
    eps = eps_factor * ps
    clusters = []
    for set_id in np.unique(set_labels[set_labels != NOISE]).tolist():
        members = np.flatnonzero(set_labels == set_id)
        labels = dbscan(cloud.points[members], eps, min_pts)
        found = int(labels.max()) + 1 if labels.size else 0
        for plane in range(found):
            clusters.append(PlaneCluster(set_id=set_id, members=members[labels == plane]))
        logging.debug(
            "Set %s: %s points, %s DBSCAN clusters, %s noise.", set_id, members.size, found, int((labels == NOISE).sum())
        )
    return clusters


def filter_small_planes(clusters: list[PlaneCluster], min_points: int = 100) -> list[PlaneCluster]:
    return [c for c in clusters if c.point_count >= min_points]


##############
# Statistics #
##############


def circular_mean_sd(angles: np.ndarray) -> tuple[float, float]:
    """Circular mean in [0, 360) and circular standard deviation sqrt(-2 ln R) of angles in degrees."""
    radians = np.radians(np.asarray(angles, dtype=np.float64))
    s, c = np.sin(radians).mean(), np.cos(radians).mean()
    mean = float(np.mod(np.degrees(np.arctan2(s, c)), 360.0))
    if mean >= 360.0:
        mean = 0.0
    resultant = min(float(np.hypot(s, c)), 1.0)
    sd = float(np.degrees(np.sqrt(-2.0 * np.log(resultant)))) if resultant > 0 else float("inf")
    return mean, sd


def _summarise(set_id: int, plane_count: int, point_count: int, dip: np.ndarray, dipdir: np.ndarray) -> SetStatistics:
    mean_dipdir, sd_dipdir = circular_mean_sd(dipdir)
    return SetStatistics(
        set_id=set_id,
        plane_count=plane_count,
        point_count=point_count,
        mean_dip=float(np.mean(dip)),
        sd_dip=float(np.std(dip)),
        mean_dipdir=mean_dipdir,
        sd_dipdir=sd_dipdir,
    )


def set_statistics(planes: list[PlaneCluster], orientations: pd.DataFrame, basis: str = "points") -> list[SetStatistics]:
    """
    Mean and spread of dip and dip direction per set (dip arithmetic, dip direction circular).

    :param planes: fitted, retained planes.
    :param orientations: orientation table (compute_orientations) holding every member point.
    :param basis: 'points' (member point orientations) or 'planes' (one pole per plane).
    :return: SetStatistics in ascending set id.
    """
    if basis not in STATISTICS_BASES:
        raise ValueError(f"Unknown statistics basis '{basis}', expected one of {STATISTICS_BASES}.")
    by_set: dict[int, list[PlaneCluster]] = {}
    for plane in planes:
        by_set.setdefault(plane.set_id, []).append(plane)

    lookup = pd.Series(np.arange(orientations.shape[0]), index=orientations["index"].to_numpy())
    dips = orientations["dip"].to_numpy()
    dipdirs = orientations["dipdir"].to_numpy()

    stats = []
    for set_id in sorted(by_set):
        members = by_set[set_id]
        point_count = sum(p.point_count for p in members)
        if basis == "points":
            rows = lookup.loc[np.concatenate([p.members for p in members])].to_numpy()
            stats.append(_summarise(set_id, len(members), point_count, dips[rows], dipdirs[rows]))
        else:
            dip = np.array([p.pole.dip for p in members])
            dipdir = np.array([p.pole.dipdir for p in members])
            stats.append(_summarise(set_id, len(members), point_count, dip, dipdir))
    return stats


class PlaneExtractor:
    """
    Class for turning clustered points into planes and set statistics.

    The main methods are:
    plane_table - the retained planes as a dataframe (returns pd.DataFrame).
    set_table - the set statistics as a dataframe (returns pd.DataFrame).
    plane_labels - per-point plane id for the whole cloud (returns np.ndarray).
    reported_set_labels - per-point set id with dropped sets turned into noise (returns np.ndarray).
    save_outputs_to_csv - write both tables to file (returns None).

    Attributes:
    candidates - list of PlaneCluster; everything DBSCAN found, before the size filter.
    planes - list of PlaneCluster; fitted planes that survived the size filter, numbered 0..P-1.
    set_stats - list of SetStatistics; one per set that kept at least one plane.
    dropped_sets - list of int; sets left without planes.

    :param cloud: the full PointCloud.
    :param orientations: orientation table from compute_orientations.
    :param set_labels: per-point set id (NOISE outside sets), aligned with the cloud.
    :param ps: point spacing.
    :param eps_factor: DBSCAN eps in multiples of ps.
    :param min_pts: DBSCAN core threshold.
    :param min_plane_points: smallest plane kept.
    :param statistics_basis: 'points' or 'planes'.
    """

    def __init__(
        self,
        cloud: PointCloud,
        orientations: pd.DataFrame,
        set_labels: np.ndarray,
        ps: float,
        eps_factor: float = 2.0,
        min_pts: int = 20,
        min_plane_points: int = 100,
        statistics_basis: str = "points",
    ):
        self.cloud = cloud
        self.orientations = orientations
        self.set_labels = np.asarray(set_labels)

        self.candidates: list[PlaneCluster] = segment_planes(cloud, self.set_labels, ps, eps_factor, min_pts)
        self.planes: list[PlaneCluster] = self._fit_planes(filter_small_planes(self.candidates, min_plane_points))
        logging.info(
            "Kept %s of %s candidate planes with at least %s points.",
            len(self.planes),
            len(self.candidates),
            min_plane_points,
        )

        self.set_stats: list[SetStatistics] = set_statistics(self.planes, orientations, statistics_basis)
        kept = {s.set_id for s in self.set_stats}
        self.dropped_sets: list[int] = [
            s for s in np.unique(self.set_labels[self.set_labels != NOISE]).tolist() if s not in kept
        ]
        for set_id in self.dropped_sets:
            logging.warning("Set %s has no plane with at least %s points and is left out.", set_id, min_plane_points)

    def _fit_planes(self, planes: list[PlaneCluster]) -> list[PlaneCluster]:
        fitted = []
        for plane in planes:
            try:
                plane.fit(self.cloud.points)
            except ValueError as e:
                logging.warning("Skipping a plane of set %s: %s", plane.set_id, e)
                continue
            plane.plane_id = len(fitted)
            fitted.append(plane)
        return fitted

    def plane_labels(self) -> np.ndarray:
        labels = np.full(self.cloud.count, NOISE, dtype=np.intp)
        for plane in self.planes:
            labels[plane.members] = plane.plane_id
        return labels

    def reported_set_labels(self) -> np.ndarray:
        labels = self.set_labels.copy()
        labels[np.isin(labels, self.dropped_sets)] = NOISE
        return labels

    def plane_table(self) -> pd.DataFrame:
        records = []
        for plane in self.planes:
            record = plane.to_dict()
            record["cx"], record["cy"], record["cz"] = record.pop("centroid")
            records.append(record)
        columns = ["id", "set_id", "point_count", "dip", "dipdir", "cx", "cy", "cz", "rms"]
        return pd.DataFrame.from_records(records, columns=columns)

    def set_table(self) -> pd.DataFrame:
        columns = ["id", "point_count", "plane_count", "mean_dip", "sd_dip", "mean_dipdir", "sd_dipdir"]
        return pd.DataFrame.from_records([s.to_dict() for s in self.set_stats], columns=columns)

    def save_outputs_to_csv(self, results_dir: str | os.PathLike) -> None:
        handle_tables.write_df_to_csv(df=self.plane_table(), filename="planes", results_dir=results_dir)
        handle_tables.write_df_to_csv(df=self.set_table(), filename="sets", results_dir=results_dir)
