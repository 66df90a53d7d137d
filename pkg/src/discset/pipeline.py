"""
Module that runs the whole mapping: load, point spacing, spatial index, planarity filter, orientations, set
clustering, plane extraction, KDE and writing the outputs.
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from discset import evaluation, handle_tables, plotting
from discset.cloud import (
    PointCloud,
    SpatialIndex,
    build_spatial_index,
    estimate_point_spacing,
    load_cloud,
    radius_of_influence,
)
from discset.errors import DiscsetError, PipelineError
from discset.hdbscan import NOISE, HdbscanResult, fit_hdbscan
from discset.orientation import compute_orientations
from discset.planarity import FilterResult, filter_cloud
from discset.planes import PlaneExtractor
from discset.setup import PipelineConfig, setup_outdir

REPORT_FILE = "report.json"
LABELED_PLY_FILE = "labeled.ply"
ORIENTATIONS_FILE = "orientations"
FILTER_DEBUG_FILE = "filter_debug"
CONDENSED_TREE_FILE = "condensed_tree.json"
STEREONET_FILE = "stereonet.svg"


@dataclass
class RunReport:
    """
    Machine readable summary of one run; to_dict() is what goes into report.json.

    Attributes:
    input - count, ps, radius.
    filter - retained, removed.
    sets - list of set statistics dictionaries.
    planes - list of plane dictionaries.
    timings_ms - stage name -> milliseconds (empty when timing is off).
    accounting - where every input point ended up; the values add up to input count.
    kde - bandwidth, method, peaks and the settings that drew it, or None when the KDE did not run.
    """

    input: dict
    filter: dict
    sets: list[dict] = field(default_factory=list)
    planes: list[dict] = field(default_factory=list)
    timings_ms: dict[str, float] = field(default_factory=dict)
    accounting: dict[str, int] = field(default_factory=dict)
    kde: dict | None = None

    def to_dict(self) -> dict:
        return {
            "input": self.input,
            "filter": self.filter,
            "sets": self.sets,
            "planes": self.planes,
            "timings_ms": self.timings_ms,
            "accounting": self.accounting,
            "kde": self.kde,
        }


class DiscontinuityPipeline:
    """
    Class for one run over one point cloud.

    The main methods are:
    run - execute every stage and write the outputs (returns RunReport).
    point_table - per-point orientation, set and plane (returns pd.DataFrame).

    Attributes:
    config - PipelineConfig.
    cloud - PointCloud as loaded.
    ps, radius - point spacing and support radius.
    index - SpatialIndex over the cloud.
    filter_result - FilterResult.
    orientations - orientation table of retained points with a normal.
    clustering - HdbscanResult, or None when there were too few poles.
    set_labels - per-point set id (NOISE outside sets).
    extractor - PlaneExtractor.
    kde_grid, kde_peaks - KDE products, or None.
    timings_ms - stage name -> milliseconds.
    written - files written so far in this run.

    :param config: validated PipelineConfig.
    """

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.cloud: PointCloud | None = None
        self.ps: float | None = None
        self.radius: float | None = None
        self.index: SpatialIndex | None = None
        self.filter_result: FilterResult | None = None
        self.orientations: pd.DataFrame | None = None
        self.clustering: HdbscanResult | None = None
        self.set_labels: np.ndarray | None = None
        self.extractor: PlaneExtractor | None = None
        self.kde_grid: evaluation.KdeGrid | None = None
        self.kde_peaks: pd.DataFrame | None = None
        self.timings_ms: dict[str, float] = {}
        self.written: list[Path] = []

    def _stage(self, name: str, func, *args, **kwargs):
        logging.info("Stage '%s' started.", name)
        start = time.perf_counter()
        try:
            result = func(*args, **kwargs)
        except DiscsetError:
            raise
        except Exception as e:
            raise PipelineError(name, e) from e
        self.timings_ms[name] = round((time.perf_counter() - start) * 1000.0, 3)
        logging.info("Stage '%s' finished in %.1f ms.", name, self.timings_ms[name])
        return result

    def run(self) -> RunReport:
        try:
            self._stage("outdir", setup_outdir, self.config.output_dir)
            self._stage("load", self._load)
            self._stage("spacing", self._spacing)
            self.index = self._stage("index", build_spatial_index, self.cloud)
            self._stage("filter", self._filter)
            self._stage("orientation", self._orient)
            self._stage("cluster", self._cluster)
            self._stage("planes", self._planes)
            self._stage("kde", self._kde)
            report = self._stage("report", self.report)
            self._stage("emit", self._emit, report)
        except DiscsetError:
            self._remove_written()
            raise
        return report

    ##########
    # Stages #
    ##########

    def _load(self) -> None:
        self.cloud = load_cloud(self.config.input_path, self.config.input_format)
        logging.info("Loaded %s points from %s", self.cloud.count, self.config.input_path)

    def _spacing(self) -> None:
        if self.config.ps is not None:
            self.ps = float(self.config.ps)
            logging.info("Using point spacing %.5f m from the configuration.", self.ps)
        else:
            self.ps = estimate_point_spacing(self.cloud, self.config.spacing_warn_max)
            logging.info("Estimated point spacing %.5f m.", self.ps)
        self.radius = radius_of_influence(self.ps)

    def _filter(self) -> None:
        self.filter_result = filter_cloud(
            self.cloud,
            self.index,
            self.ps,
            threshold=self.config.filter_threshold,
            grid_n=self.config.filter_grid_n,
            min_neighbors=self.config.min_neighbors,
            frame=self.config.filter_frame,
            max_residual=self.config.filter_max_residual,
        )

    def _orient(self) -> None:
        self.orientations = compute_orientations(self.cloud, self.filter_result.mask, self.index, self.ps)

    def _cluster(self) -> None:
        self.set_labels = np.full(self.cloud.count, NOISE, dtype=np.intp)
        poles = self.orientations[["dx", "dy"]].to_numpy()
        needed = self.config.min_samples + 1
        if poles.shape[0] < needed:
            logging.warning("Only %s poles, clustering needs at least %s. No sets are reported.", poles.shape[0], needed)
            return
        self.clustering = fit_hdbscan(
            poles,
            self.config.min_cluster_size,
            self.config.min_samples,
            selection=self.config.selection,
            mst_algorithm=self.config.mst_algorithm,
        )
        self.set_labels[self.orientations["index"].to_numpy()] = self.clustering.labels

    def _planes(self) -> None:
        self.extractor = PlaneExtractor(
            self.cloud,
            self.orientations,
            self.set_labels,
            self.ps,
            eps_factor=self.config.eps_factor,
            min_pts=self.config.min_pts,
            min_plane_points=self.config.min_plane_points,
            statistics_basis=self.config.statistics_basis,
        )
        logging.info("%s sets with %s planes.", len(self.extractor.set_stats), len(self.extractor.planes))

    def _kde(self) -> None:
        if not self.config.kde_enabled:
            return
        poles = self.orientations[["dx", "dy"]].to_numpy()
        if poles.shape[0] < 2:
            logging.info("Fewer than 2 poles, no KDE.")
            return
        self.kde_grid = evaluation.kde_density(
            poles,
            bandwidth=self.config.kde_bandwidth,
            grid_n=self.config.kde_grid_n,
            max_poles=self.config.kde_max_poles,
            seed=self.config.seed,
        )
        self.kde_peaks = evaluation.kde_peaks(self.kde_grid, self.config.kde_peak_fraction)
        logging.info("KDE has %s peaks for %s sets.", self.kde_peaks.shape[0], len(self.extractor.set_stats))

    ###########
    # Outputs #
    ###########

    def accounting(self) -> dict[str, int]:
        oriented = self.orientations.shape[0]
        clustered = int((self.set_labels != NOISE).sum())
        plane_member = sum(p.point_count for p in self.extractor.planes)
        return {
            "filtered_out": self.filter_result.removed,
            "degenerate_normal": self.filter_result.retained - oriented,
            "cluster_noise": oriented - clustered,
            "plane_noise": clustered - plane_member,
            "plane_member": plane_member,
        }

    def report(self) -> RunReport:
        kde = None
        if self.kde_grid is not None:
            kde = {
                "bandwidth": self.kde_grid.factor,
                "method": self.kde_grid.method,
                "peaks": self.kde_peaks.to_dict(orient="records"),
                "settings": {
                    "bandwidth": self.config.kde_bandwidth,
                    "grid_n": self.config.kde_grid_n,
                    "max_poles": self.config.kde_max_poles,
                    "seed": self.config.seed,
                },
            }
        return RunReport(
            input={"count": self.cloud.count, "ps": self.ps, "radius": self.radius},
            filter={"retained": self.filter_result.retained, "removed": self.filter_result.removed},
            sets=[s.to_dict() for s in self.extractor.set_stats],
            planes=[p.to_dict() for p in self.extractor.planes],
            timings_ms=dict(self.timings_ms) if self.config.timing else {},
            accounting=self.accounting(),
            kde=kde,
        )

    def point_table(self) -> pd.DataFrame:
        table = self.orientations.copy()
        rows = table["index"].to_numpy()
        table["set_id"] = self.extractor.reported_set_labels()[rows]
        table["plane_id"] = self.extractor.plane_labels()[rows]
        return table

    def _emit(self, report: RunReport) -> None:
        outdir = Path(self.config.output_dir)

        if self.config.write_orientations:
            self._track(outdir / f"{ORIENTATIONS_FILE}.csv")
            handle_tables.write_df_to_csv(df=self.point_table(), filename=ORIENTATIONS_FILE, results_dir=outdir)

        if self.config.write_filter_debug:
            debug = pd.DataFrame(
                {
                    "index": np.arange(self.cloud.count),
                    "neighbours": self.filter_result.neighbour_counts,
                    "secondary_std": self.filter_result.secondary_std,
                    "residual_ratio": self.filter_result.residual_ratio,
                    "planar": self.filter_result.mask,
                }
            )
            self._track(outdir / f"{FILTER_DEBUG_FILE}.csv")
            handle_tables.write_df_to_csv(df=debug, filename=FILTER_DEBUG_FILE, results_dir=outdir)

        if self.config.write_condensed_tree and self.clustering is not None:
            tree_path = self._track(outdir / CONDENSED_TREE_FILE)
            handle_tables.write_json(self.clustering.condensed_tree.to_dict(), tree_path)

        self._track(outdir / "planes.csv")
        self._track(outdir / "sets.csv")
        self.extractor.save_outputs_to_csv(outdir)

        if self.config.write_stereonet:
            rows = self.orientations["index"].to_numpy()
            plotting.render_stereonet_svg(
                self.orientations[["dx", "dy"]].to_numpy(),
                self.extractor.reported_set_labels()[rows],
                self.extractor.set_stats,
                self._track(outdir / STEREONET_FILE),
                kde=self.kde_grid,
                seed=self.config.seed,
            )

        ply_path = self._track(outdir / LABELED_PLY_FILE)
        handle_tables.write_labeled_ply(
            self.cloud, self.extractor.reported_set_labels(), self.extractor.plane_labels(), ply_path
        )
        # Written last, so a report on disk means the run completed.
        handle_tables.write_report_json(report.to_dict(), self._track(outdir / REPORT_FILE))
        logging.info("Run outputs written to %s", outdir)

    def _track(self, path) -> Path:
        path = Path(path)
        if path not in self.written:
            self.written.append(path)
        return path

    def _remove_written(self) -> None:
        for path in self.written:
            if path.exists():
                path.unlink()
                logging.info("Removed partial output %s", path)
        self.written = []


def run_pipeline(config: PipelineConfig) -> RunReport:
    """
    Run every stage for one config. Raises PipelineError naming the failing stage (CloudFormatError for unreadable
    input); files written by a failed run are removed.
    """
    return DiscontinuityPipeline(config).run()
