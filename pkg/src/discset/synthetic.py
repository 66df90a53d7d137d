"""
Deterministic fixture generators with machine readable ground truth: the subdivided icosphere, the two plane fans,
noisy planes, a two-plane ridge and a ball of volumetric noise.

All randomness comes from numpy's PCG64 generator (np.random.default_rng(seed)), drawn in a fixed order.
"""

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from discset.cloud import PointCloud
from discset.orientation import canonicalise_normals, normal_to_orientation, orientation_to_normal

NOISE_FACE = -1
FAN_CASES = {
    "fixed_dip_45": [(45.0, float(dd)) for dd in range(0, 360, 30)],
    "fixed_dd_90": [(float(da), 90.0) for da in range(0, 91, 15)],
}
ANTIPARALLEL_TOL_DEG = 1e-6


@dataclass
class GroundTruth:
    """
    Attributes:
    faces - DataFrame with one row per face/plane: id, pair_id, dip, dipdir, nx, ny, nz (mesh normal, outward).
    point_face - int array; face id of every generated point (NOISE_FACE for noise).
    """

    faces: pd.DataFrame
    point_face: np.ndarray

    @property
    def n_sets(self) -> int:
        return int(self.faces["pair_id"].nunique())

    def set_orientations(self) -> pd.DataFrame:
        """One row per set (pair_id): dip, dipdir of the set's first face."""
        first = self.faces.sort_values("id").drop_duplicates("pair_id")
        return first[["pair_id", "dip", "dipdir"]].sort_values("pair_id").reset_index(drop=True)

    def to_dict(self) -> dict:
        faces = [
            {"id": int(r.id), "pair_id": int(r.pair_id), "dip": float(r.dip), "dipdir": float(r.dipdir)}
            for r in self.faces.itertuples()
        ]
        return {"faces": faces, "point_face": self.point_face.tolist()}


def write_ground_truth_json(truth: GroundTruth, path: str | os.PathLike) -> Path:
    path = Path(path)
    with path.open("w") as handle:
        json.dump(truth.to_dict(), handle, indent=2)
    return path


def _face_table(normals: np.ndarray, pair_ids: np.ndarray, orientations: list[tuple[float, float]] | None = None):
    if orientations is None:
        dip, dipdir = normal_to_orientation(normals)
    else:
        dip = np.array([o[0] for o in orientations])
        dipdir = np.array([o[1] for o in orientations])
    return pd.DataFrame(
        {
            "id": np.arange(normals.shape[0]),
            "pair_id": pair_ids,
            "dip": np.atleast_1d(dip),
            "dipdir": np.atleast_1d(dipdir),
            "nx": normals[:, 0],
            "ny": normals[:, 1],
            "nz": normals[:, 2],
        }
    )


#############
# Icosphere #
#############


def icosahedron() -> tuple[np.ndarray, np.ndarray]:
    """
    Unit icosahedron with a vertex at each pole and two rings of five at z = +-1/sqrt(5). No face is vertical.

    :return: (vertices (12, 3), faces (20, 3) vertex indices).
    """
    h = 1.0 / np.sqrt(5.0)
    r = 2.0 / np.sqrt(5.0)
    upper = [(r * np.cos(np.radians(72 * k)), r * np.sin(np.radians(72 * k)), h) for k in range(5)]
    lower = [(r * np.cos(np.radians(36 + 72 * k)), r * np.sin(np.radians(36 + 72 * k)), -h) for k in range(5)]
    vertices = np.array([(0.0, 0.0, 1.0), *upper, *lower, (0.0, 0.0, -1.0)])

    top, bottom = 0, 11
    faces = []
    for k in range(5):
        u0, u1 = 1 + k, 1 + (k + 1) % 5
        l0, l1 = 6 + k, 6 + (k + 1) % 5
        faces += [(top, u0, u1), (u0, l0, u1), (u1, l0, l1), (bottom, l1, l0)]
    return vertices, np.array(faces)


def subdivide(vertices: np.ndarray, faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split every triangle into four; new midpoints are pushed out to the unit sphere and shared between faces."""
    vertices = [tuple(v) for v in vertices]
    midpoint_of: dict[tuple[int, int], int] = {}

    def midpoint(a: int, b: int) -> int:
        key = (min(a, b), max(a, b))
        if key not in midpoint_of:
            m = (np.array(vertices[a]) + np.array(vertices[b])) / 2.0
            vertices.append(tuple(m / np.linalg.norm(m)))
            midpoint_of[key] = len(vertices) - 1
        return midpoint_of[key]

    new_faces = []
    for a, b, c in faces.tolist():
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
    return np.array(vertices), np.array(new_faces)


def icosphere_mesh(radius: float = 10.0, subdivisions: int = 1) -> tuple[np.ndarray, np.ndarray]:
    if subdivisions < 0:
        raise ValueError("subdivisions must be >= 0.")
    vertices, faces = icosahedron()
    for _ in range(subdivisions):
        vertices, faces = subdivide(vertices, faces)
    return vertices * radius, faces


def _allocate(total: int, weights: np.ndarray) -> np.ndarray:
    """Split `total` proportionally to weights; largest remainders (then lowest index) get the leftovers."""
    raw = total * weights / weights.sum()
    counts = np.floor(raw).astype(np.intp)
    leftover = total - counts.sum()
    order = np.lexsort((np.arange(weights.size), -(raw - counts)))
    counts[order[:leftover]] += 1
    return counts


def _sample_triangles(corners: np.ndarray, counts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples on triangles (k, 3, 3) by the square-root barycentric rule."""
    u = rng.random((int(counts.sum()), 2))
    a, b, c = (np.repeat(corners[:, i], counts, axis=0) for i in range(3))
    s = np.sqrt(u[:, :1])
    return (1.0 - s) * a + s * (1.0 - u[:, 1:]) * b + s * u[:, 1:] * c


def _pair_antipodal(normals: np.ndarray) -> np.ndarray:
    pair_ids = np.full(normals.shape[0], -1, dtype=np.intp)
    next_pair = 0
    for i in range(normals.shape[0]):
        if pair_ids[i] >= 0:
            continue
        j = int(np.argmin(normals @ normals[i]))
        pair_ids[i] = pair_ids[j] = next_pair
        next_pair += 1
    return pair_ids


def generate_icosphere(
    radius: float = 10.0, subdivisions: int = 1, total_points: int = 168_000, seed: int = 0
) -> tuple[PointCloud, GroundTruth]:
    """
    Points sampled on the flat faces of a subdivided icosahedron, allocated by face area.

    :param radius: circumscribed radius (m).
    :param subdivisions: 1 gives 80 faces in 40 antipodal pairs.
    :param total_points: points over all faces.
    :param seed: PCG64 seed.
    :return: (PointCloud, GroundTruth) with pair_id as the set of each face.
    """
    if total_points < 1:
        raise ValueError("total_points must be at least 1.")
    vertices, faces = icosphere_mesh(radius, subdivisions)
    corners = vertices[faces]
    cross = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
    areas = np.linalg.norm(cross, axis=1) / 2.0
    normals = cross / np.linalg.norm(cross, axis=1, keepdims=True)
    outward = np.sign(np.einsum("ij,ij->i", normals, corners.mean(axis=1)))
    normals *= outward[:, None]

    counts = _allocate(total_points, areas)
    rng = np.random.default_rng(seed)
    points = _sample_triangles(corners, counts, rng)
    point_face = np.repeat(np.arange(faces.shape[0]), counts)

    truth = GroundTruth(_face_table(normals, _pair_antipodal(normals)), point_face)
    logging.info(
        "Generated icosphere: %s faces, %s points (%s to %s per face).",
        faces.shape[0],
        total_points,
        counts.min(),
        counts.max(),
    )
    return PointCloud(points), truth


def validate_icosphere(truth: GroundTruth, min_separation_deg: float = 10.0) -> dict:
    """
    Check the icosphere ground truth: two faces per pair with antiparallel normals, distinct pair orientations at
    least min_separation_deg apart and no vertical face.

    :return: dict with faces, pairs, min_separation_deg, min_abs_nz. Raises ValueError on a failed check.
    """
    faces = truth.faces
    normals = faces[["nx", "ny", "nz"]].to_numpy()
    for pair_id, group in faces.groupby("pair_id"):
        if group.shape[0] != 2:
            raise ValueError(f"Pair {pair_id} has {group.shape[0]} faces, expected 2.")
        a, b = normals[group["id"].to_numpy()]
        angle = np.degrees(np.arccos(np.clip(a @ b, -1.0, 1.0)))
        if abs(angle - 180.0) > ANTIPARALLEL_TOL_DEG:
            raise ValueError(f"Pair {pair_id} normals are {angle:.6f} degrees apart, expected 180.")

    set_normals = canonicalise_normals(normals[faces.drop_duplicates("pair_id")["id"].to_numpy()])
    cosines = np.abs(set_normals @ set_normals.T)
    np.fill_diagonal(cosines, -1.0)
    separation = float(np.degrees(np.arccos(np.clip(cosines.max(), -1.0, 1.0))))
    if separation <= min_separation_deg:
        raise ValueError(f"Closest pair orientations are {separation:.3f} degrees apart.")
    min_abs_nz = float(np.abs(normals[:, 2]).min())
    if min_abs_nz <= 0.02:
        raise ValueError("A face is vertical; its pole would straddle the dip direction seam.")
    return {
        "faces": int(faces.shape[0]),
        "pairs": truth.n_sets,
        "min_separation_deg": separation,
        "min_abs_nz": min_abs_nz,
    }


##########
# Planes #
##########


def plane_basis(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two unit vectors spanning the plane: along strike, then down dip."""
    normal = np.asarray(normal, dtype=np.float64)
    strike = np.cross([0.0, 0.0, 1.0], normal)
    if np.linalg.norm(strike) < 1e-12:
        strike = np.array([1.0, 0.0, 0.0])
    strike /= np.linalg.norm(strike)
    return strike, np.cross(normal, strike)


def _patch(
    dip: float, dipdir: float, centre: np.ndarray, uv: np.ndarray, offsets: np.ndarray | None = None
) -> np.ndarray:
    normal = orientation_to_normal(dip, dipdir)
    strike, down = plane_basis(normal)
    points = centre + uv[:, :1] * strike + uv[:, 1:] * down
    if offsets is not None:
        points += offsets[:, None] * normal
    return points


def generate_plane_fan(
    case: str = "fixed_dip_45", points_per_plane: int = 4000, extent: float = 2.0, seed: int = 0
) -> tuple[PointCloud, GroundTruth]:
    """
    Square patches (side `extent`) at the orientations of one fan case, centred 3 * extent apart along x so no two
    patches meet.

    :param case: 'fixed_dip_45' (12 planes, DA 45, DD 0..330 step 30) or 'fixed_dd_90' (7 planes, DD 90, DA 0..90
        step 15).
    :return: (PointCloud, GroundTruth), one set per plane.
    """
    if case not in FAN_CASES:
        raise ValueError(f"Unknown plane fan case '{case}', expected one of {list(FAN_CASES)}.")
    if points_per_plane < 1 or extent <= 0:
        raise ValueError("points_per_plane and extent must be positive.")
    orientations = FAN_CASES[case]
    rng = np.random.default_rng(seed)

    patches = []
    for k, (dip, dipdir) in enumerate(orientations):
        uv = rng.uniform(-extent / 2.0, extent / 2.0, size=(points_per_plane, 2))
        patches.append(_patch(dip, dipdir, np.array([3.0 * extent * k, 0.0, 0.0]), uv))

    normals = canonicalise_normals(np.array([orientation_to_normal(d, dd) for d, dd in orientations]))
    truth = GroundTruth(
        _face_table(normals, np.arange(len(orientations)), orientations),
        np.repeat(np.arange(len(orientations)), points_per_plane),
    )
    return PointCloud(np.concatenate(patches)), truth


def generate_noisy_plane(
    dip: float = 30.0,
    dipdir: float = 120.0,
    extent: float = 2.0,
    density: float = 1600.0,
    sigma: float = 0.0,
    seed: int = 0,
) -> tuple[PointCloud, GroundTruth]:
    """
    Jittered grid on a square patch through the origin with Gaussian out-of-plane noise.

    :param extent: side of the square (m).
    :param density: points per square metre.
    :param sigma: standard deviation of the out-of-plane displacement (m).
    :return: (PointCloud, GroundTruth) with a single face.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0.")
    if extent <= 0 or density <= 0:
        raise ValueError("extent and density must be positive.")
    per_side = max(int(round(extent * np.sqrt(density))), 1)
    step = extent / per_side
    ticks = -extent / 2.0 + step * (np.arange(per_side) + 0.5)
    grid = np.stack(np.meshgrid(ticks, ticks, indexing="ij"), axis=-1).reshape(-1, 2)

    rng = np.random.default_rng(seed)
    uv = grid + rng.uniform(-step / 4.0, step / 4.0, size=grid.shape)
    offsets = rng.normal(0.0, sigma, size=grid.shape[0]) if sigma > 0 else None
    points = _patch(dip, dipdir, np.zeros(3), uv, offsets)

    normal = canonicalise_normals(orientation_to_normal(dip, dipdir)[None])
    truth = GroundTruth(_face_table(normal, np.array([0]), [(dip, dipdir)]), np.zeros(points.shape[0], dtype=np.intp))
    return PointCloud(points), truth


def generate_ridge(
    angle_deg: float = 90.0, extent: float = 2.0, density: float = 1600.0, seed: int = 0
) -> tuple[PointCloud, GroundTruth]:
    """
    Two half-planes meeting along the y axis at `angle_deg`, each extending `extent` away from the ridge line and
    `extent` along it. Jittered grid sampling as in generate_noisy_plane.

    :return: (PointCloud, GroundTruth); point_face is 0/1 per half-plane and the cloud carries each point's distance
        to the ridge line as attribute 'ridge_distance'.
    """
    if not 0 < angle_deg < 180:
        raise ValueError("Ridge angle must be in (0, 180) degrees.")
    per_side = max(int(round(extent * np.sqrt(density))), 1)
    step = extent / per_side
    away = step * (np.arange(per_side) + 0.5)
    along = -extent / 2.0 + step * (np.arange(per_side) + 0.5)
    grid = np.stack(np.meshgrid(away, along, indexing="ij"), axis=-1).reshape(-1, 2)

    rng = np.random.default_rng(seed)
    tilt = np.radians((180.0 - angle_deg) / 2.0)
    halves, distances = [], []
    for sign in (1.0, -1.0):
        uv = grid + rng.uniform(-step / 4.0, step / 4.0, size=grid.shape)
        direction = np.array([sign * np.cos(tilt), 0.0, np.sin(tilt)])
        halves.append(uv[:, :1] * direction + uv[:, 1:] * np.array([0.0, 1.0, 0.0]))
        distances.append(uv[:, 0])

    normals = np.array([[-np.sin(tilt), 0.0, np.cos(tilt)], [np.sin(tilt), 0.0, np.cos(tilt)]])
    truth = GroundTruth(_face_table(normals, np.array([0, 1])), np.repeat([0, 1], grid.shape[0]))
    cloud = PointCloud(np.concatenate(halves), {"ridge_distance": np.concatenate(distances)})
    return cloud, truth


def generate_noise_ball(radius: float = 1.0, count: int = 5000, seed: int = 0) -> PointCloud:
    """Points uniform in the volume of a ball centred on the origin."""
    if radius <= 0 or count < 1:
        raise ValueError("radius and count must be positive.")
    rng = np.random.default_rng(seed)
    directions = rng.normal(size=(count, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return PointCloud(directions * radius * np.cbrt(rng.random(count))[:, None])


def sample_fisher_orientations(
    mean_dip: float, mean_dipdir: float, kappa: float, count: int, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """
    Orientations scattered about a mean pole with a Fisher distribution of concentration kappa.

    :return: (dip, dipdir) arrays in degrees (upper hemisphere form).
    """
    if kappa <= 0 or count < 1:
        raise ValueError("kappa and count must be positive.")
    rng = np.random.default_rng(seed)
    u = rng.random(count)
    cos_theta = 1.0 + np.log(u + (1.0 - u) * np.exp(-2.0 * kappa)) / kappa
    sin_theta = np.sqrt(np.clip(1.0 - cos_theta**2, 0.0, None))
    phi = rng.uniform(0.0, 2.0 * np.pi, count)

    mean = orientation_to_normal(mean_dip, mean_dipdir)
    a, b = plane_basis(mean)
    normals = (
        cos_theta[:, None] * mean + (sin_theta * np.cos(phi))[:, None] * a + (sin_theta * np.sin(phi))[:, None] * b
    )
    dip, dipdir = normal_to_orientation(canonicalise_normals(normals))
    return np.asarray(dip), np.asarray(dipdir)
