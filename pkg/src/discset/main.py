#!/usr/bin/env python3

"""
Command line entry point. `run` maps discontinuity sets in a point cloud; `icosphere`, `planes` and `noisy-plane` write
synthetic clouds with their ground truth; `eval` scores a set listing against a reference; `plot` redraws the
stereonet of a finished run.
"""

import argparse
import json
import logging
import sys
from datetime import datetime
from pathlib import Path

import numpy as np
import pandas as pd

from discset import __version__, evaluation, handle_tables, pipeline, plotting, setup, synthetic
from discset.cloud import write_cloud
from discset.errors import ConfigError, DiscsetError
from discset.hdbscan import NOISE

today = datetime.today().strftime("%Y-%m-%d-%H%M")


# Arg parse setup
def get_args(argv=None):
    parser = argparse.ArgumentParser(
        prog="discset",
        description="""
        DiscSet: the friendly discontinuity set mapper that filters, clusters and reports structural discontinuity
        sets in rock-face point clouds.
        """,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "--log-file",
        "-l",
        dest="log_file",
        type=str,
        required=False,
        help="Optional - Path to log file. Default is 'discset_/date-time/.log' next to the outputs.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    # run
    run = subparsers.add_parser("run", help="Map the discontinuity sets of a point cloud.")
    run.add_argument("--input", "-i", dest="input", type=str, required=True, help="Point cloud file.")
    run.add_argument("--format", "-f", dest="format", choices=list(setup.INPUT_FORMATS), default="xyz")
    run.add_argument(
        "--out",
        "-o",
        dest="output_dir",
        type=str,
        required=True,
        help="Path to directory where results will be saved to. Directory will be created if it does not exist.",
    )
    run.add_argument(
        "--config", "-c", dest="config", type=str, required=False, help="Optional - Path to yaml file with settings."
    )
    run.add_argument("--ps", dest="ps", type=float, help="Point spacing (m); estimated from the cloud if not given.")
    run.add_argument("--filter-threshold", dest="filter_threshold", type=float)
    run.add_argument(
        "--max-residual",
        dest="filter_max_residual",
        type=float,
        help="Largest neighbour height off the local plane, as a fraction of the support radius.",
    )
    run.add_argument("--min-cluster-size", dest="min_cluster_size", type=int)
    run.add_argument("--min-samples", dest="min_samples", type=int)
    run.add_argument("--eps-factor", dest="eps_factor", type=float)
    run.add_argument("--min-pts", dest="min_pts", type=int)
    run.add_argument("--min-plane-points", dest="min_plane_points", type=int)
    run.add_argument("--seed", dest="seed", type=int)
    run.add_argument(
        "--no-timing", dest="no_timing", action="store_true", help="Leave stage timings out of the report."
    )

    # synthetic clouds
    icosphere = subparsers.add_parser("icosphere", help="Write a once subdivided icosphere cloud.")
    icosphere.add_argument("--out", "-o", dest="out", type=str, required=True, help="Cloud file (.xyz or .ply).")
    icosphere.add_argument("--radius", type=float, default=10.0)
    icosphere.add_argument("--subdivisions", type=int, default=1)
    icosphere.add_argument("--total-points", dest="total_points", type=int, default=168_000)
    icosphere.add_argument("--seed", type=int, default=0)
    icosphere.add_argument("--truth", type=str, help="Ground truth JSON (default: <out stem>_truth.json).")

    planes = subparsers.add_parser("planes", help="Write a fan of planar patches.")
    planes.add_argument("--case", choices=list(synthetic.FAN_CASES), default="fixed_dip_45")
    planes.add_argument("--out", "-o", dest="out", type=str, required=True, help="Cloud file (.xyz or .ply).")
    planes.add_argument("--points-per-plane", dest="points_per_plane", type=int, default=4000)
    planes.add_argument("--extent", type=float, default=2.0)
    planes.add_argument("--seed", type=int, default=0)
    planes.add_argument("--truth", type=str, help="Ground truth JSON (default: <out stem>_truth.json).")

    noisy = subparsers.add_parser("noisy-plane", help="Write one plane with out-of-plane noise.")
    noisy.add_argument("--out", "-o", dest="out", type=str, required=True, help="Cloud file (.xyz or .ply).")
    noisy.add_argument("--dip", type=float, default=30.0)
    noisy.add_argument("--dipdir", type=float, default=120.0)
    noisy.add_argument("--extent", type=float, default=2.0)
    noisy.add_argument("--density", type=float, default=1600.0)
    noisy.add_argument("--sigma", type=float, default=0.0)
    noisy.add_argument("--seed", type=int, default=0)
    noisy.add_argument("--truth", type=str, help="Ground truth JSON (default: <out stem>_truth.json).")

    # analysis
    evaluate = subparsers.add_parser("eval", help="Score identified sets against reference sets.")
    evaluate.add_argument("--identified", type=str, required=True, help="report.json or sets csv.")
    evaluate.add_argument("--reference", type=str, required=True, help="Reference sets csv (or report.json).")
    evaluate.add_argument("--threshold", type=float, default=20.0, help="Largest matching angle (degrees).")
    evaluate.add_argument("--out", "-o", dest="out", type=str, help="Optional - evaluation JSON file.")

    plot = subparsers.add_parser("plot", help="Redraw the stereonet of a finished run.")
    plot.add_argument("--run-dir", dest="run_dir", type=str, required=True, help="Output directory of a `run`.")
    plot.add_argument("--out", "-o", dest="out", type=str, help="SVG file (default: <run-dir>/stereonet.svg).")
    plot.add_argument("--no-kde", dest="no_kde", action="store_true", help="Leave out the density contours.")

    return parser.parse_args(argv)


# Logger set up
def set_up_logger(log_filepath):
    """All logging messages go to the log file (append mode, so older runs are kept); warnings and errors are also
    echoed to stderr. Handlers from an earlier call in the same process are replaced.
    """
    logger = logging.getLogger()
    logger.setLevel(logging.DEBUG)
    formatter = logging.Formatter("[%(asctime)s] %(levelname)s: %(message)s")

    for handler in [h for h in logger.handlers if getattr(h, "discset", False)]:
        logger.removeHandler(handler)
        handler.close()

    out_handler = logging.FileHandler(log_filepath, mode="a")
    out_handler.setFormatter(formatter)
    err_handler = logging.StreamHandler(sys.stderr)
    err_handler.setLevel(logging.WARNING)
    err_handler.setFormatter(formatter)
    for handler in (out_handler, err_handler):
        handler.discset = True
        logger.addHandler(handler)

    return logger


def _log_dir(args) -> Path:
    if args.command == "run":
        return Path(args.output_dir)
    if args.command == "plot":
        return Path(args.run_dir)
    if getattr(args, "out", None):
        return Path(args.out).parent
    return Path()


def _truth_path(args) -> Path:
    out = Path(args.out)
    return Path(args.truth) if args.truth else out.with_name(f"{out.stem}_truth.json")


############
# Commands #
############


def run_command(args) -> int:
    # Set up settings: packaged defaults, then custom yaml, then command line.
    if args.config:
        logging.info("Reading the settings from custom yaml file provided: %s" % (args.config))  # noqa
    else:
        logging.info("No custom settings yaml file specified, using default parameters from included file.")
    try:
        settings, exit_codes = setup.read_config_file(args.config)
    # --> Exit if config file not found:
    except FileNotFoundError:
        logging.error("Specified settings yaml file %s not found, exiting program." % (args.config))  # noqa
        return ConfigError.exitcode
    # --> Exit if any issues with the config (logging happens in check_keys):
    if any(exit_codes):
        return ConfigError.exitcode

    overrides = {
        "ps": args.ps,
        "filter_threshold": args.filter_threshold,
        "filter_max_residual": args.filter_max_residual,
        "min_cluster_size": args.min_cluster_size,
        "min_samples": args.min_samples,
        "eps_factor": args.eps_factor,
        "min_pts": args.min_pts,
        "min_plane_points": args.min_plane_points,
        "seed": args.seed,
        "timing": False if args.no_timing else None,
    }
    config = setup.build_config(settings, args.input, args.output_dir, args.format, overrides)

    report = pipeline.run_pipeline(config)
    logging.info(
        "Found %s sets and %s planes, report written to %s"  # noqa
        % (len(report.sets), len(report.planes), Path(args.output_dir) / pipeline.REPORT_FILE)
    )
    return 0


def synthetic_command(args) -> int:
    if args.command == "icosphere":
        cloud, truth = synthetic.generate_icosphere(args.radius, args.subdivisions, args.total_points, args.seed)
        if args.subdivisions == 1:
            checks = synthetic.validate_icosphere(truth)
            logging.info("Icosphere checks passed: %s", checks)
    elif args.command == "planes":
        cloud, truth = synthetic.generate_plane_fan(args.case, args.points_per_plane, args.extent, args.seed)
    else:
        cloud, truth = synthetic.generate_noisy_plane(
            args.dip, args.dipdir, args.extent, args.density, args.sigma, args.seed
        )

    out = Path(args.out)
    setup.setup_outdir(out.parent)
    write_cloud(out, cloud)
    truth_path = synthetic.write_ground_truth_json(truth, _truth_path(args))
    logging.info("Wrote %s points to %s and ground truth to %s", cloud.count, out, truth_path)
    return 0


def eval_command(args) -> int:
    try:
        identified = evaluation.read_sets(args.identified)
        reference = evaluation.read_sets(args.reference)
    except (OSError, ValueError) as e:
        logging.error("Cannot read set listing: %s" % (e))  # noqa
        return 3
    if not reference:
        logging.error("Reference set listing %s is empty." % (args.reference))  # noqa
        return 3

    result = evaluation.evaluate_against_reference(identified, reference, args.threshold)
    if args.out:
        setup.setup_outdir(Path(args.out).parent)
        handle_tables.write_evaluation_json(result, args.out)
        logging.info("Evaluation written to %s", args.out)
    print(
        f"MAE dip {result.mae_dip:.2f} +/- {result.disp_dip:.2f}, "
        f"MAE dip direction {result.mae_dipdir:.2f} +/- {result.disp_dipdir:.2f} "
        f"({result.pairs.shape[0]} of {len(reference)} reference sets matched)"
    )
    return 0


def plot_command(args) -> int:
    run_dir = Path(args.run_dir)
    orientations_path = run_dir / f"{pipeline.ORIENTATIONS_FILE}.csv"
    report_path = run_dir / pipeline.REPORT_FILE
    for required in (orientations_path, report_path):
        if not required.exists():
            logging.error("%s not found; plot needs a run written with orientations." % (required))  # noqa
            return 3

    points = pd.read_csv(orientations_path)
    stats = evaluation.read_sets(report_path)
    with report_path.open() as handle:
        run_kde = json.load(handle).get("kde")
    poles = points[["dx", "dy"]].to_numpy()
    labels = points["set_id"].to_numpy() if "set_id" in points else np.full(poles.shape[0], NOISE)

    # the run's own KDE settings; packaged defaults for runs that had the KDE switched off
    if run_kde and "settings" in run_kde:
        kde_settings = run_kde["settings"]
    else:
        defaults, _ = setup.read_config_file()
        kde_settings = {**defaults["kde"], "seed": defaults["seed"]}

    kde = None
    if not args.no_kde and poles.shape[0] >= 2:
        kde = evaluation.kde_density(
            poles,
            bandwidth=kde_settings["bandwidth"],
            grid_n=kde_settings["grid_n"],
            max_poles=kde_settings["max_poles"],
            seed=kde_settings["seed"],
        )
    out = Path(args.out) if args.out else run_dir / pipeline.STEREONET_FILE
    plotting.render_stereonet_svg(poles, labels, stats, out, kde=kde, seed=kde_settings["seed"])
    return 0


COMMANDS = {
    "run": run_command,
    "icosphere": synthetic_command,
    "planes": synthetic_command,
    "noisy-plane": synthetic_command,
    "eval": eval_command,
    "plot": plot_command,
}


# Main function
def main(argv=None):
    """Run one command and return its exit code: 0 success, 2 config error, 3 input error, 4 pipeline error."""

    #########
    # Setup #
    #########
    args = get_args(argv)

    # Set up log file:
    log_dir = _log_dir(args)
    setup.setup_outdir(log_dir)
    log_file = Path(args.log_file) if args.log_file else log_dir / f"discset_{today}.log"
    set_up_logger(log_file)
    logging.info("discset %s: %s" % (__version__, args.command))  # noqa

    ####################
    # The Actual Thing #
    ####################
    try:
        main_exitcode = COMMANDS[args.command](args)
    except DiscsetError as e:
        # --> Exit with the code of the error class (config 2, input 3, pipeline 4):
        logging.error("%s" % (e))  # noqa
        main_exitcode = e.exitcode
    except ValueError as e:
        # Bad generator or evaluation arguments
        logging.error("Invalid arguments: %s" % (e))  # noqa
        main_exitcode = ConfigError.exitcode

    ########
    # End! #
    ########
    return main_exitcode


# Run
if __name__ == "__main__":
    sys.exit(main())
