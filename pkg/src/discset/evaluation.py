"""
Module for checking identified sets: kernel density of the transformed poles (with its peaks) and the comparison of
set statistics against a reference list (mean absolute error and dispersion error).
"""

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import stats
from scipy.ndimage import maximum_filter

from discset.orientation import orientation_to_normal, pole2d_to_orientation
from discset.planes import SetStatistics

REQUIRED_SET_COLUMNS = ["id", "mean_dip", "sd_dip", "mean_dipdir", "sd_dipdir"]


#######
# KDE #
#######


@dataclass
class KdeGrid:
    """
    Density over the square [-1, 1]^2 holding the unit disk.

    Attributes:
    centres - (grid_n,) cell centre coordinates, shared by both axes.
    density - (grid_n, grid_n) array indexed [iy, ix].
    method - 'scott', 'fixed' or 'isotropic' (fallback for degenerate pole sets).
    factor - bandwidth factor (scipy convention) or the isotropic sigma.
    """

    centres: np.ndarray
    density: np.ndarray
    method: str
    factor: float

    @property
    def cell_area(self) -> float:
        return float((self.centres[1] - self.centres[0]) ** 2) if self.centres.size > 1 else 4.0

    def integral(self) -> float:
        return float(self.density.sum() * self.cell_area)


def _isotropic_density(poles: np.ndarray, centres: np.ndarray, sigma: float) -> np.ndarray:
    gx = np.exp(-((centres[:, None] - poles[None, :, 0]) ** 2) / (2.0 * sigma**2))
    gy = np.exp(-((centres[:, None] - poles[None, :, 1]) ** 2) / (2.0 * sigma**2))
    return (gy @ gx.T) / (poles.shape[0] * 2.0 * np.pi * sigma**2)


def kde_density(
    poles: np.ndarray, bandwidth: str | float = "scott", grid_n: int = 128, max_poles: int | None = None, seed: int = 0
) -> KdeGrid:
    """
    Gaussian kernel density of 2D poles on a grid_n x grid_n grid.

    :param poles: (m, 2) transformed poles (dx, dy), m >= 2.
    :param bandwidth: 'scott' or a positive bandwidth factor (scipy gaussian_kde convention).
    :param grid_n: cells per axis.
    :param max_poles: above this many poles a seeded random subset is used.
    :param seed: seed for the subset.
    :return: KdeGrid.
    """
    poles = np.asarray(poles, dtype=np.float64).reshape(-1, 2)
    if poles.shape[0] < 2:
        raise ValueError("Kernel density needs at least 2 poles.")
    if not isinstance(bandwidth, str) and bandwidth <= 0:
        raise ValueError("Bandwidth must be positive.")
    if max_poles is not None and poles.shape[0] > max_poles:
        keep = np.sort(np.random.default_rng(seed).choice(poles.shape[0], size=max_poles, replace=False))
        logging.debug("KDE on %s of %s poles.", max_poles, poles.shape[0])
        poles = poles[keep]

    edges = np.linspace(-1.0, 1.0, grid_n + 1)
    centres = (edges[:-1] + edges[1:]) / 2.0
    try:
        kde = stats.gaussian_kde(poles.T, bw_method=bandwidth)
        gx, gy = np.meshgrid(centres, centres, indexing="xy")
        density = kde(np.vstack([gx.ravel(), gy.ravel()])).reshape(grid_n, grid_n)
        method = "scott" if isinstance(bandwidth, str) else "fixed"
        factor = float(kde.factor)
    except np.linalg.LinAlgError:
        # Coincident or collinear poles have no 2D covariance.
        sigma = 2.0 / grid_n
        logging.info("Pole covariance is singular, using an isotropic kernel of one cell (%.4f).", sigma)
        density = _isotropic_density(poles, centres, sigma)
        method, factor = "isotropic", sigma
    return KdeGrid(centres, density, method, factor)


def kde_peaks(grid: KdeGrid, peak_fraction: float = 0.05) -> pd.DataFrame:
    """
    Local maxima of the density (3x3 neighbourhood) inside the unit disk holding at least peak_fraction of the
    highest density.

    :return: DataFrame with columns dx, dy, density, dip, dipdir, strongest first.
    """
    density = grid.density
    is_peak = (density == maximum_filter(density, size=3, mode="constant", cval=0.0)) & (density > 0)
    is_peak &= density >= peak_fraction * density.max()
    iy, ix = np.nonzero(is_peak)
    dx, dy = grid.centres[ix], grid.centres[iy]
    inside = np.hypot(dx, dy) <= 1.0
    peaks = pd.DataFrame({"dx": dx[inside], "dy": dy[inside], "density": density[iy, ix][inside]})
    if peaks.empty:
        return peaks.assign(dip=pd.Series(dtype=float), dipdir=pd.Series(dtype=float))
    dip, dipdir = pole2d_to_orientation(peaks["dx"].to_numpy(), peaks["dy"].to_numpy())
    peaks["dip"], peaks["dipdir"] = dip, dipdir
    return peaks.sort_values(["density", "dy", "dx"], ascending=[False, True, True]).reset_index(drop=True)


##############
# Evaluation #
##############


@dataclass
class EvaluationResult:
    """
    Attributes:
    pairs - DataFrame with identified, reference, angle, d_dip, d_dipdir, d_sd_dip, d_sd_dipdir per matched pair.
    mae_dip, mae_dipdir - mean absolute error of the set means (degrees).
    disp_dip, disp_dipdir - mean absolute error of the set standard deviations (degrees).
    unmatched_reference, unmatched_identified - set ids with no partner.
    """

    pairs: pd.DataFrame
    mae_dip: float
    mae_dipdir: float
    disp_dip: float
    disp_dipdir: float
    unmatched_reference: list[int] = field(default_factory=list)
    unmatched_identified: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        pair_columns = ["identified", "reference", "d_dip", "d_dipdir", "d_sd_dip", "d_sd_dipdir"]
        return {
            "pairs": self.pairs[pair_columns].to_dict(orient="records"),
            "mae_dip": self.mae_dip,
            "mae_dipdir": self.mae_dipdir,
            "disp_dip": self.disp_dip,
            "disp_dipdir": self.disp_dipdir,
            "unmatched_reference": self.unmatched_reference,
            "unmatched_identified": self.unmatched_identified,
        }


def angular_difference(a, b) -> np.ndarray:
    """|a - b| on the circle, in [0, 180]."""
    diff = np.mod(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)), 360.0)
    return np.minimum(diff, 360.0 - diff)


def axial_angle(dip_a, dipdir_a, dip_b, dipdir_b) -> np.ndarray:
    """Angle (degrees, 0..90) between the planes, i.e. between their normals up to sign."""
    cosine = np.abs(np.sum(orientation_to_normal(dip_a, dipdir_a) * orientation_to_normal(dip_b, dipdir_b), axis=-1))
    return np.degrees(np.arccos(np.clip(cosine, 0.0, 1.0)))


def evaluate_against_reference(
    identified: list[SetStatistics], reference: list[SetStatistics], match_threshold: float = 20.0
) -> EvaluationResult:
    """
    Match identified sets to reference sets greedily by ascending angle between mean poles (ties: lower list
    positions first), leave pairs beyond match_threshold unmatched, then average the absolute differences.

    :param identified: sets found by the pipeline.
    :param reference: reference sets (non-empty).
    :param match_threshold: largest angle (degrees) of a valid match.
    :return: EvaluationResult. MAE values are NaN when nothing matched.
    """
    if not reference:
        raise ValueError("Reference set list is empty.")

    candidates = []
    for i, ident in enumerate(identified):
        for j, ref in enumerate(reference):
            angle = float(axial_angle(ident.mean_dip, ident.mean_dipdir, ref.mean_dip, ref.mean_dipdir))
            candidates.append((angle, i, j))
    candidates.sort()

    used_identified, used_reference, records = set(), set(), []
    for angle, i, j in candidates:
        if angle > match_threshold or i in used_identified or j in used_reference:
            continue
        used_identified.add(i)
        used_reference.add(j)
        ident, ref = identified[i], reference[j]
        records.append(
            {
                "identified": ident.set_id,
                "reference": ref.set_id,
                "angle": angle,
                "d_dip": abs(ident.mean_dip - ref.mean_dip),
                "d_dipdir": float(angular_difference(ident.mean_dipdir, ref.mean_dipdir)),
                "d_sd_dip": abs(ident.sd_dip - ref.sd_dip),
                "d_sd_dipdir": abs(ident.sd_dipdir - ref.sd_dipdir),
            }
        )

    columns = ["identified", "reference", "angle", "d_dip", "d_dipdir", "d_sd_dip", "d_sd_dipdir"]
    pairs = pd.DataFrame.from_records(records, columns=columns).sort_values("reference").reset_index(drop=True)

    def mean_of(column: str) -> float:
        return float(pairs[column].mean()) if not pairs.empty else float("nan")

    result = EvaluationResult(
        pairs=pairs,
        mae_dip=mean_of("d_dip"),
        mae_dipdir=mean_of("d_dipdir"),
        disp_dip=mean_of("d_sd_dip"),
        disp_dipdir=mean_of("d_sd_dipdir"),
        unmatched_reference=[ref.set_id for j, ref in enumerate(reference) if j not in used_reference],
        unmatched_identified=[ident.set_id for i, ident in enumerate(identified) if i not in used_identified],
    )
    logging.info(
        "Matched %s of %s reference sets: MAE %.2f / %.2f, dispersion error %.2f / %.2f (dip / dip direction).",
        pairs.shape[0],
        len(reference),
        result.mae_dip,
        result.mae_dipdir,
        result.disp_dip,
        result.disp_dipdir,
    )
    return result


########################
# Reading set listings #
########################


def sets_from_dataframe(df: pd.DataFrame) -> list[SetStatistics]:
    missing = [c for c in REQUIRED_SET_COLUMNS if c not in df.columns]
    if missing:
        raise ValueError(f"Set table is missing columns: {', '.join(missing)}")
    return [
        SetStatistics(
            set_id=int(row["id"]),
            plane_count=int(row.get("plane_count", 0) or 0),
            point_count=int(row.get("point_count", 0) or 0),
            mean_dip=float(row["mean_dip"]),
            sd_dip=float(row["sd_dip"]),
            mean_dipdir=float(row["mean_dipdir"]),
            sd_dipdir=float(row["sd_dipdir"]),
        )
        for row in df.to_dict(orient="records")
    ]


def read_sets(path: str | os.PathLike) -> list[SetStatistics]:
    """
    Read a set listing: a CSV with columns id, mean_dip, sd_dip, mean_dipdir, sd_dipdir (point_count and plane_count
    optional) or a run report JSON (its 'sets' list).
    """
    path = Path(path)
    if path.suffix.lower() == ".json":
        with path.open("r") as handle:
            report = json.load(handle)
        if "sets" not in report:
            raise ValueError(f"{path} has no 'sets' list.")
        df = pd.DataFrame(report["sets"], columns=[*REQUIRED_SET_COLUMNS, "point_count", "plane_count"])
    else:
        df = pd.read_csv(path)
    return sets_from_dataframe(df)
