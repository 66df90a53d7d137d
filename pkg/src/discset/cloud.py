"""
Module for the point cloud itself: reading and writing xyz/ply files, the point spacing estimate, the spatial index and
the adaptive support radius that every per-point stage uses.
"""

import logging
import os
from dataclasses import dataclass, field
from io import StringIO
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from discset.errors import CloudFormatError

# Upper end of the point spacing range where 5*PS - 16*PS^2 is still a positive radius.
MAX_RADIUS_PS = 5.0 / 16.0

PLY_TYPES = {
    "char": "i1",
    "int8": "i1",
    "uchar": "u1",
    "uint8": "u1",
    "short": "i2",
    "int16": "i2",
    "ushort": "u2",
    "uint16": "u2",
    "int": "i4",
    "int32": "i4",
    "uint": "u4",
    "uint32": "u4",
    "float": "f4",
    "float32": "f4",
    "double": "f8",
    "float64": "f8",
}

# numpy dtype kind+size -> ply type name used when writing
PLY_NAMES = {"i1": "char", "u1": "uchar", "i2": "short", "u2": "ushort", "i4": "int", "u4": "uint", "f4": "float", "f8": "double"}


@dataclass(frozen=True)
class PointCloud:
    """
    Immutable cloud of 3D points (metres) with optional per-point attribute columns.

    :param points: array-like of shape (n, 3).
    :param attributes: dict of column name -> array of length n (e.g. labels read from a ply).
    """

    points: np.ndarray
    attributes: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        points = np.array(self.points, dtype=np.float64, copy=True).reshape(-1, 3)
        if not np.all(np.isfinite(points)):
            raise ValueError("Point cloud contains NaN or infinite coordinates.")
        points.setflags(write=False)
        object.__setattr__(self, "points", points)

        attributes = {}
        for name, column in self.attributes.items():
            column = np.array(column, copy=True)
            if column.shape[0] != points.shape[0]:
                raise ValueError(f"Attribute '{name}' has {column.shape[0]} values for {points.shape[0]} points.")
            column.setflags(write=False)
            attributes[name] = column
        object.__setattr__(self, "attributes", attributes)

    @property
    def count(self) -> int:
        return int(self.points.shape[0])

    def subset(self, indices: np.ndarray) -> "PointCloud":
        """New cloud holding only `indices` (attributes follow)."""
        indices = np.asarray(indices, dtype=np.intp)
        return PointCloud(self.points[indices], {k: v[indices] for k, v in self.attributes.items()})


class SpatialIndex:
    """
    Read-only KD-tree over a PointCloud. Radius queries return point indices in ascending order so every stage that
    walks a neighbourhood sees the same order on every run.
    """

    def __init__(self, cloud: PointCloud):
        if cloud.count < 1:
            raise ValueError("Cannot index an empty cloud.")
        self.cloud = cloud
        self.tree = cKDTree(cloud.points)

    def query(self, q: np.ndarray, r: float) -> np.ndarray:
        if r <= 0:
            raise ValueError("Query radius must be positive.")
        hits = self.tree.query_ball_point(np.asarray(q, dtype=np.float64), r, return_sorted=True)
        return np.asarray(hits, dtype=np.intp)

    def query_many(self, queries: np.ndarray, r: float) -> list[np.ndarray]:
        """Radius query for every row of `queries`; list of sorted index arrays."""
        if r <= 0:
            raise ValueError("Query radius must be positive.")
        hits = self.tree.query_ball_point(np.asarray(queries, dtype=np.float64), r, return_sorted=True, workers=-1)
        return [np.asarray(h, dtype=np.intp) for h in hits]


def build_spatial_index(cloud: PointCloud) -> SpatialIndex:
    return SpatialIndex(cloud)


def radius_query(index: SpatialIndex, q: np.ndarray, r: float) -> np.ndarray:
    """
    Indices of every point p with |p - q| <= r, ascending. The query point itself is included when it is in the cloud.
    """
    return index.query(q, r)


def estimate_point_spacing(cloud: PointCloud, warn_max: float = 0.15) -> float:
    """
    Average point spacing (PS): mean distance from each point to its single nearest neighbour.

    :param cloud: PointCloud with at least 2 points.
    :param warn_max: spacing above which a warning is logged (structure mapping wants PS < 0.15 m).
    :return: PS in metres.
    """
    if cloud.count < 2:
        raise ValueError("Point spacing needs at least 2 points.")
    distances, _ = cKDTree(cloud.points).query(cloud.points, k=2, workers=-1)
    ps = float(np.mean(distances[:, 1]))
    if ps <= 0:
        raise ValueError("Point spacing is zero: every point has a duplicate.")
    if ps >= warn_max:
        logging.warning("Point spacing %.4f m is outside the structure mapping range (< %s m).", ps, warn_max)
    logging.debug("Estimated point spacing %.5f m from %s points.", ps, cloud.count)
    return ps


def radius_of_influence(ps: float) -> float:
    """Radius of the spherical support region: 5*PS - 16*PS^2 (metres)."""
    if not 0 < ps < MAX_RADIUS_PS:
        raise ValueError("radius formula out of valid range: PS must be in (0, %s), got %s" % (MAX_RADIUS_PS, ps))  # noqa
    return 5.0 * ps - 16.0 * ps**2


###########
# Reading #
###########


def load_cloud(path: str | os.PathLike, fmt: str = "xyz") -> PointCloud:
    """
    Read a point cloud from file.

    :param path: path to the file.
    :param fmt: 'xyz' (ascii x y z per line, '#' comments) or 'ply' (ascii or binary little endian).
    :return: PointCloud. For ply, extra vertex properties are kept as attributes.
    """
    path = Path(path)
    if not path.exists():
        raise CloudFormatError(f"Input file {path} not found.")
    if fmt == "xyz":
        cloud = _read_xyz(path)
    elif fmt == "ply":
        cloud = _read_ply(path)
    else:
        raise CloudFormatError(f"Unknown cloud format '{fmt}', expected xyz or ply.")

    if cloud.count == 0:
        raise CloudFormatError("empty cloud")
    logging.info("Read %s points from %s", cloud.count, path)
    return cloud


def _read_xyz(path: Path) -> PointCloud:
    try:
        df = pd.read_csv(
            path,
            sep=r"\s+",
            comment="#",
            header=None,
            usecols=[0, 1, 2],
            dtype=np.float64,
            skip_blank_lines=True,
            float_precision="round_trip",
        )
        points = df.to_numpy()
        if np.all(np.isfinite(points)):
            return PointCloud(points)
    except pd.errors.EmptyDataError:
        return PointCloud(np.empty((0, 3)))
    except (ValueError, pd.errors.ParserError) as e:
        logging.debug("Fast xyz parse failed (%s), scanning lines to locate the problem.", e)

    # Ragged or broken files: walk the lines, raising with the line number of the first bad one.
    with path.open("r") as handle:
        return PointCloud(_parse_xyz_lines(handle))


def _parse_xyz_lines(lines) -> np.ndarray:
    rows = []
    for line_number, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = stripped.split()
        if len(fields) < 3:
            raise CloudFormatError("malformed xyz line, expected 'x y z'", line_number)
        try:
            xyz = [float(value) for value in fields[:3]]
        except ValueError as e:
            raise CloudFormatError(f"malformed xyz line: {e}", line_number) from e
        if not all(np.isfinite(xyz)):
            raise CloudFormatError("non-finite coordinate", line_number)
        rows.append(xyz)
    return np.asarray(rows, dtype=np.float64).reshape(-1, 3)


def _read_ply_header(handle) -> tuple[str, int, list[tuple[str, str]], int]:
    """Returns (format, vertex count, vertex properties [(name, dtype)], header line count)."""
    if handle.readline().strip() != b"ply":
        raise CloudFormatError("not a ply file (missing 'ply' magic)", 1)

    fmt = None
    vertex_count = None
    properties: list[tuple[str, str]] = []
    current_element = None
    line_number = 1
    while True:
        raw = handle.readline()
        line_number += 1
        if not raw:
            raise CloudFormatError("ply header has no end_header", line_number)
        words = raw.decode("ascii", errors="replace").split()
        if not words or words[0] in ("comment", "obj_info"):
            continue
        if words[0] == "format":
            fmt = words[1]
        elif words[0] == "element":
            if current_element is None and words[1] != "vertex":
                raise CloudFormatError("ply files must list the vertex element first", line_number)
            current_element = words[1]
            if current_element == "vertex":
                vertex_count = int(words[2])
        elif words[0] == "property" and current_element == "vertex":
            if words[1] == "list":
                raise CloudFormatError("list properties on vertices are not supported", line_number)
            if words[1] not in PLY_TYPES:
                raise CloudFormatError(f"unknown ply property type '{words[1]}'", line_number)
            properties.append((words[2], PLY_TYPES[words[1]]))
        elif words[0] == "end_header":
            break

    if fmt not in ("ascii", "binary_little_endian"):
        raise CloudFormatError(f"unsupported ply format '{fmt}'")
    if vertex_count is None:
        raise CloudFormatError("ply header has no vertex element")
    names = [name for name, _ in properties]
    if not all(axis in names for axis in ("x", "y", "z")):
        raise CloudFormatError("ply vertex element needs x, y and z properties")
    return fmt, vertex_count, properties, line_number


def _read_ply(path: Path) -> PointCloud:
    with path.open("rb") as handle:
        fmt, count, properties, header_lines = _read_ply_header(handle)
        body = handle.read()

    if fmt == "binary_little_endian":
        dtype = np.dtype([(name, "<" + code) for name, code in properties])
        complete = len(body) // dtype.itemsize
        if complete < count:
            raise CloudFormatError("truncated binary ply vertex data", complete + 1)
        table = pd.DataFrame(np.frombuffer(body, dtype=dtype, count=count))
    else:
        lines = body.decode("ascii", errors="replace").splitlines()[:count]
        if len(lines) < count:
            raise CloudFormatError("ascii ply ends before all vertices were read", header_lines + len(lines) + 1)
        table = _parse_ascii_vertices(lines, properties, header_lines)

    points = table[["x", "y", "z"]].to_numpy(dtype=np.float64)
    bad = ~np.all(np.isfinite(points), axis=1)
    if bad.any():
        first = int(np.flatnonzero(bad)[0])
        raise CloudFormatError("non-finite coordinate in ply vertex", first + 1)
    attributes = {name: table[name].to_numpy() for name, _ in properties if name not in ("x", "y", "z")}
    return PointCloud(points, attributes)


def _parse_ascii_vertices(lines: list[str], properties: list[tuple[str, str]], header_lines: int) -> pd.DataFrame:
    names = [name for name, _ in properties]
    try:
        text = StringIO("\n".join(lines))
        table = pd.read_csv(text, sep=r"\s+", header=None, names=names, float_precision="round_trip")
        if table.shape[0] == len(lines) and not table.isna().any().any():
            return table.astype({name: code for name, code in properties})
    except (ValueError, pd.errors.ParserError) as e:
        logging.debug("Fast ascii ply parse failed (%s), scanning lines.", e)

    for offset, line in enumerate(lines):
        fields = line.split()
        if len(fields) != len(names):
            raise CloudFormatError(f"expected {len(names)} vertex values, got {len(fields)}", header_lines + offset + 1)
        try:
            [float(value) for value in fields]
        except ValueError as e:
            raise CloudFormatError(f"malformed ply vertex: {e}", header_lines + offset + 1) from e
    raise CloudFormatError("could not parse ascii ply vertices")


###########
# Writing #
###########


def write_ply(
    path: str | os.PathLike,
    cloud: PointCloud,
    attributes: dict[str, np.ndarray] | None = None,
    binary: bool = True,
) -> Path:
    """
    Write the cloud to ply with x, y, z as doubles plus any attribute columns (cloud attributes, then `attributes`).

    :param path: output file path.
    :param cloud: PointCloud to write.
    :param attributes: extra per-point columns; 64-bit integers are written as 32-bit 'int'.
    :param binary: binary little endian if True, otherwise ascii.
    :return: path written.
    """
    columns = {"x": cloud.points[:, 0], "y": cloud.points[:, 1], "z": cloud.points[:, 2]}
    columns.update(cloud.attributes)
    columns.update(attributes or {})

    fields = []
    for name, column in columns.items():
        column = np.asarray(column)
        if column.dtype.kind in "iu" and column.dtype.itemsize > 4:
            column = column.astype(np.int32)
        elif column.dtype.kind == "b":
            column = column.astype(np.uint8)
        elif column.dtype.kind == "f" and column.dtype.itemsize not in (4, 8):
            column = column.astype(np.float64)
        columns[name] = column
        fields.append((name, column.dtype.str.lstrip("<>|=")))

    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0", f"element vertex {cloud.count}"]
    header += [f"property {PLY_NAMES[code]} {name}" for name, code in fields]
    header.append("end_header")

    path = Path(path)
    with path.open("wb") as handle:
        handle.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            table = np.empty(cloud.count, dtype=[(name, "<" + code) for name, code in fields])
            for name, _ in fields:
                table[name] = columns[name]
            handle.write(table.tobytes())
        else:
            df = pd.DataFrame({name: columns[name] for name, _ in fields})
            handle.write(df.to_csv(sep=" ", header=False, index=False, float_format="%.17g").encode("ascii"))
    return path


def write_xyz(path: str | os.PathLike, cloud: PointCloud) -> Path:
    """Write x y z per line, full double precision. Attributes are not written."""
    path = Path(path)
    df = pd.DataFrame(cloud.points, columns=["x", "y", "z"])
    df.to_csv(path, sep=" ", header=False, index=False, float_format="%.17g")
    return path


def write_cloud(path: str | os.PathLike, cloud: PointCloud, attributes: dict[str, np.ndarray] | None = None) -> Path:
    """Write ply when the suffix is .ply, otherwise xyz."""
    if Path(path).suffix.lower() == ".ply":
        return write_ply(path, cloud, attributes)
    return write_xyz(path, cloud)
