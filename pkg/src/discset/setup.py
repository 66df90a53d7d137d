import logging
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import yaml

from discset.cloud import MAX_RADIUS_PS
from discset.errors import ConfigError
from discset.hdbscan import MST_ALGORITHMS, SELECTIONS
from discset.planarity import FRAMES
from discset.planes import STATISTICS_BASES

INPUT_FORMATS = ("xyz", "ply")

EXPECTED_KEYS = {
    "cloud": ["ps", "spacing_warn_max"],
    "filter": ["threshold_deg", "grid_n", "min_neighbors", "frame", "max_residual"],
    "cluster": ["min_cluster_size", "min_samples", "selection", "mst_algorithm"],
    "planes": ["eps_factor", "min_pts", "min_plane_points", "statistics_basis"],
    "kde": ["enabled", "bandwidth", "grid_n", "max_poles", "peak_fraction"],
    "evaluation": ["match_threshold_deg"],
    "output": ["write_filter_debug", "write_orientations", "write_condensed_tree", "write_stereonet", "timing"],
}
TOP_LEVEL_KEYS = ["seed"]


@dataclass(frozen=True)
class PipelineConfig:
    """Every setting of one `run`, after defaults, config file and command line have been merged."""

    input_path: Path
    input_format: str
    output_dir: Path
    ps: float | None = None
    spacing_warn_max: float = 0.15
    filter_threshold: float = 1.0
    filter_grid_n: int = 64
    min_neighbors: int = 8
    filter_frame: str = "levelled"
    filter_max_residual: float | None = 0.04
    min_cluster_size: int = 10000
    min_samples: int = 100
    selection: str = "eom"
    mst_algorithm: str = "boruvka"
    eps_factor: float = 2.0
    min_pts: int = 20
    min_plane_points: int = 100
    statistics_basis: str = "points"
    kde_enabled: bool = True
    kde_bandwidth: str | float = "scott"
    kde_grid_n: int = 128
    kde_max_poles: int | None = 20000
    kde_peak_fraction: float = 0.05
    match_threshold: float = 20.0
    write_filter_debug: bool = False
    write_orientations: bool = True
    write_condensed_tree: bool = False
    write_stereonet: bool = True
    timing: bool = True
    seed: int = 0


# config file (section, key) -> PipelineConfig field
FIELD_MAP = {
    ("cloud", "ps"): "ps",
    ("cloud", "spacing_warn_max"): "spacing_warn_max",
    ("filter", "threshold_deg"): "filter_threshold",
    ("filter", "grid_n"): "filter_grid_n",
    ("filter", "min_neighbors"): "min_neighbors",
    ("filter", "frame"): "filter_frame",
    ("filter", "max_residual"): "filter_max_residual",
    ("cluster", "min_cluster_size"): "min_cluster_size",
    ("cluster", "min_samples"): "min_samples",
    ("cluster", "selection"): "selection",
    ("cluster", "mst_algorithm"): "mst_algorithm",
    ("planes", "eps_factor"): "eps_factor",
    ("planes", "min_pts"): "min_pts",
    ("planes", "min_plane_points"): "min_plane_points",
    ("planes", "statistics_basis"): "statistics_basis",
    ("kde", "enabled"): "kde_enabled",
    ("kde", "bandwidth"): "kde_bandwidth",
    ("kde", "grid_n"): "kde_grid_n",
    ("kde", "max_poles"): "kde_max_poles",
    ("kde", "peak_fraction"): "kde_peak_fraction",
    ("evaluation", "match_threshold_deg"): "match_threshold",
    ("output", "write_filter_debug"): "write_filter_debug",
    ("output", "write_orientations"): "write_orientations",
    ("output", "write_condensed_tree"): "write_condensed_tree",
    ("output", "write_stereonet"): "write_stereonet",
    ("output", "timing"): "timing",
}


def check_keys(expected: list[str], section: dict, section_name: str) -> int:
    """
    Checks that a config section holds exactly the expected keys. Unknown keys are rejected and missing keys are
    required, both are logged as errors and give exitcode 1.

    :param expected: list of strings: the keys expected in the section.
    :param section: the section dictionary.
    :param section_name: name used in the log messages.
    :return: exitcode (int)
    """
    exitcode = 0
    # First check for keys in the section compared to expected (extras)
    for k1 in section:
        if k1 not in expected:
            logging.error("Unknown key '%s' in config section '%s'." % (k1, section_name))  # noqa
            exitcode = 1

    # Second check for keys not in the section that are expected (missing)
    for k2 in expected:
        if k2 not in section:
            logging.error("Key '%s' is missing from config section '%s'." % (k2, section_name))  # noqa
            exitcode = 1
    return exitcode


def _load_yaml(config_file: str | os.PathLike) -> dict:
    with Path(config_file).open("r") as file:
        settings = yaml.safe_load(file) or {}
    if not isinstance(settings, dict):
        raise ConfigError(f"Config file {config_file} does not hold a mapping.")
    return settings


def read_default_config() -> dict:
    with resources.as_file(resources.files("discset.data").joinpath("default_config.yaml")) as config_file:
        return _load_yaml(config_file)


def read_config_file(config_file: str | os.PathLike | None = None) -> tuple[dict, list]:
    """
    Read the packaged defaults and, if given, a custom yaml file on top of them (section by section). Check every
    section for unknown and missing keys.
    :param config_file: optional path to a yaml file with some or all settings.
    :returns: dict, nested dictionary of settings and list of exit codes (list of ints)
    :raises FileNotFoundError: the custom file does not exist.
    """
    exit_codes = []
    settings = read_default_config()

    if config_file is not None:
        custom = _load_yaml(config_file)
        for name, values in custom.items():
            if name in TOP_LEVEL_KEYS:
                settings[name] = values
            elif name in EXPECTED_KEYS and isinstance(values, dict):
                settings[name] = {**settings.get(name, {}), **values}
            else:
                logging.error("Unknown config section '%s'." % (name))  # noqa
                exit_codes.append(1)

    for name, expected in EXPECTED_KEYS.items():
        exit_codes.append(check_keys(expected, settings.get(name, {}), name))
    return settings, exit_codes


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


def validate_config(config: PipelineConfig) -> PipelineConfig:
    """Check every value against what the stages accept. Raises ConfigError naming the first bad value."""
    _require(config.input_format in INPUT_FORMATS, f"format must be one of {INPUT_FORMATS}")
    _require(config.ps is None or 0 < config.ps < MAX_RADIUS_PS, f"ps must be in (0, {MAX_RADIUS_PS}) m")
    _require(config.spacing_warn_max > 0, "cloud.spacing_warn_max must be positive")
    _require(config.filter_threshold > 0, "filter.threshold_deg must be positive")
    n = config.filter_grid_n
    _require(n >= 4 and n & (n - 1) == 0, "filter.grid_n must be a power of two >= 4")
    _require(config.min_neighbors >= 3, "filter.min_neighbors must be at least 3")
    _require(config.filter_frame in FRAMES, f"filter.frame must be one of {FRAMES}")
    _require(
        config.filter_max_residual is None or 0 < config.filter_max_residual <= 1,
        "filter.max_residual must be in (0, 1] or null",
    )
    _require(config.min_cluster_size >= 2, "cluster.min_cluster_size must be at least 2")
    _require(config.min_samples >= 1, "cluster.min_samples must be at least 1")
    _require(config.selection in SELECTIONS, f"cluster.selection must be one of {SELECTIONS}")
    _require(config.mst_algorithm in MST_ALGORITHMS, f"cluster.mst_algorithm must be one of {MST_ALGORITHMS}")
    _require(config.eps_factor > 0, "planes.eps_factor must be positive")
    _require(config.min_pts >= 1, "planes.min_pts must be at least 1")
    _require(config.min_plane_points >= 3, "planes.min_plane_points must be at least 3")
    _require(config.statistics_basis in STATISTICS_BASES, f"planes.statistics_basis must be one of {STATISTICS_BASES}")
    bandwidth = config.kde_bandwidth
    _require(
        bandwidth == "scott" or (not isinstance(bandwidth, str | bool) and bandwidth > 0),
        "kde.bandwidth must be 'scott' or a positive number",
    )
    _require(config.kde_grid_n >= 8, "kde.grid_n must be at least 8")
    _require(config.kde_max_poles is None or config.kde_max_poles >= 2, "kde.max_poles must be at least 2")
    _require(0 <= config.kde_peak_fraction <= 1, "kde.peak_fraction must be in [0, 1]")
    _require(0 < config.match_threshold <= 90, "evaluation.match_threshold_deg must be in (0, 90]")
    _require(isinstance(config.seed, int) and config.seed >= 0, "seed must be a non-negative integer")
    return config


def build_config(
    settings: dict,
    input_path: str | os.PathLike,
    output_dir: str | os.PathLike,
    input_format: str = "xyz",
    overrides: dict | None = None,
) -> PipelineConfig:
    """
    Flatten the settings dictionary into a PipelineConfig, apply command line overrides last and validate.

    :param settings: nested settings from read_config_file.
    :param input_path: point cloud file.
    :param output_dir: directory for the run outputs.
    :param input_format: 'xyz' or 'ply'.
    :param overrides: PipelineConfig field -> value; None values are ignored.
    :return: validated PipelineConfig.
    """
    values = {}
    for (section, key), name in FIELD_MAP.items():
        if key in settings.get(section, {}):
            values[name] = settings[section][key]
    if "seed" in settings:
        values["seed"] = settings["seed"]
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})

    unknown = set(values) - set(PipelineConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"Unknown settings: {', '.join(sorted(unknown))}")
    config = PipelineConfig(
        input_path=Path(input_path), input_format=input_format, output_dir=Path(output_dir), **values
    )
    return validate_config(config)


def setup_outdir(outdir: str | os.PathLike) -> None:
    """
    Handle the output directory, using either the default or commandline arg. Create dir
    if needed.
    :param outdir: the outdir argument from commandline.
    :return: None.
    """
    outdir_path = Path(outdir)
    outdir_path.mkdir(parents=True, exist_ok=True)

    return None
