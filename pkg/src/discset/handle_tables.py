import json
import math
import os
from pathlib import Path

import numpy as np
import pandas as pd

from discset.cloud import PointCloud, write_ply

##################
# Output tables #
##################


def write_df_to_csv(*, df: pd.DataFrame, filename: str, results_dir: str | os.PathLike) -> os.PathLike:
    """
    Write results dataframe to csv (no index column).
    :param df: dataframe of results to save.
    :param filename: str, unique name of file WITHOUT extension. (csv gets added).
    :param results_dir: Directory to save results to.
    :returns: os.path of saved csv file.
    """

    result_file_path = Path(results_dir) / f"{filename}.csv"

    df.to_csv(result_file_path, index=False)

    return result_file_path


def _json_safe(value):
    """numpy scalars/arrays to plain python, non-finite floats to None (JSON has no NaN)."""
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, list | tuple):
        return [_json_safe(v) for v in value]
    if isinstance(value, np.ndarray):
        return _json_safe(value.tolist())
    if isinstance(value, np.integer | np.bool_):
        return value.item()
    if isinstance(value, float | np.floating):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def write_json(payload: dict, path: str | os.PathLike) -> Path:
    """
    Write a dictionary as indented JSON with a stable key order.
    :param payload: the dictionary; numpy values are converted.
    :param path: file to write.
    :returns: path of the written file.
    """
    path = Path(path)
    with path.open("w") as handle:
        json.dump(_json_safe(payload), handle, indent=2)
        handle.write("\n")
    return path


def write_report_json(report: dict, path: str | os.PathLike) -> Path:
    missing = [k for k in ("input", "filter", "sets", "planes", "timings_ms") if k not in report]
    if missing:
        raise ValueError(f"Report is missing keys: {', '.join(missing)}")
    return write_json(report, path)


def write_evaluation_json(result, path: str | os.PathLike) -> Path:
    """Write an EvaluationResult (anything with to_dict) as JSON."""
    return write_json(result.to_dict(), path)


def write_labeled_ply(
    cloud: PointCloud, set_labels: np.ndarray, plane_labels: np.ndarray, path: str | os.PathLike, binary: bool = True
) -> Path:
    """
    Write the cloud with int32 vertex properties set_id and plane_id (-1 for none).
    :param cloud: the cloud as loaded.
    :param set_labels: per-point set id.
    :param plane_labels: per-point plane id.
    :param path: file to write.
    :returns: path of the written file.
    """
    set_labels, plane_labels = np.asarray(set_labels), np.asarray(plane_labels)
    if set_labels.shape != (cloud.count,) or plane_labels.shape != (cloud.count,):
        raise ValueError("Label arrays must have one entry per point.")
    extra = {"set_id": set_labels.astype(np.int32), "plane_id": plane_labels.astype(np.int32)}
    return write_ply(path, cloud, attributes=extra, binary=binary)
