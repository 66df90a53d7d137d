import json
import logging

import pandas as pd
import pytest
import yaml

from discset import evaluation, main, synthetic
from discset.cloud import load_cloud, write_cloud


@pytest.fixture(autouse=True)
def release_log_handlers():
    yield
    logger = logging.getLogger()
    for handler in [h for h in logger.handlers if getattr(h, "discset", False)]:
        logger.removeHandler(handler)
        handler.close()


class TestGenerators:
    def test_planes(self, tmp_path):
        out = tmp_path / "clouds" / "fan.xyz"
        code = main.main(["planes", "--case", "fixed_dd_90", "--out", str(out), "--points-per-plane", "50"])
        assert code == 0, f"Expected exit code 0, got {code}"
        assert load_cloud(out).count == 350
        truth = json.loads((tmp_path / "clouds" / "fan_truth.json").read_text())
        assert len(truth["faces"]) == 7

    def test_icosphere(self, tmp_path):
        out = tmp_path / "ico.ply"
        truth = tmp_path / "truth.json"
        args = ["icosphere", "--out", str(out), "--total-points", "8000", "--truth", str(truth)]
        assert main.main(args) == 0
        assert load_cloud(out, "ply").count == 8000
        assert len(json.loads(truth.read_text())["faces"]) == 80

    def test_noisy_plane(self, tmp_path):
        out = tmp_path / "noisy.xyz"
        args = ["noisy-plane", "--out", str(out), "--extent", "1", "--density", "400", "--sigma", "0.005"]
        assert main.main(args) == 0
        assert load_cloud(out).count == 400

    def test_bad_generator_argument(self, tmp_path):
        assert main.main(["noisy-plane", "--out", str(tmp_path / "p.xyz"), "--sigma", "-1"]) == 2


@pytest.fixture(scope="module")
def small_ridge_file(tmp_path_factory):
    """Right-angle ridge, 1 x 1 m per half-plane, about 3200 points."""
    cloud, _ = synthetic.generate_ridge(angle_deg=90.0, extent=1.0, density=1600.0, seed=0)
    return write_cloud(tmp_path_factory.mktemp("ridge") / "ridge.xyz", cloud)


class TestRun:
    @pytest.fixture(autouse=True)
    def ridge_file(self, tmp_path, small_ridge_file):
        self.input = small_ridge_file
        self.outdir = tmp_path / "out"
        self.args = ["run", "--input", str(self.input), "--out", str(self.outdir), "--min-cluster-size", "200"]
        self.args += ["--min-samples", "10", "--eps-factor", "4", "--no-timing"]

    def test_success_writes_report_and_log(self):
        assert main.main(self.args) == 0
        report = json.loads((self.outdir / "report.json").read_text())
        assert len(report["sets"]) == 2
        assert report["timings_ms"] == {}
        logs = list(self.outdir.glob("discset_*.log"))
        assert len(logs) == 1
        assert "Stage 'filter' finished" in logs[0].read_text()

    def test_missing_input_is_input_error(self, tmp_path):
        args = ["run", "--input", str(tmp_path / "absent.xyz"), "--out", str(self.outdir)]
        assert (code := main.main(args)) == 3, f"Expected exit code 3, got {code}"

    def test_bad_value_is_config_error(self):
        assert main.main([*self.args, "--eps-factor", "-1"]) == 2

    def test_missing_config_file(self, tmp_path):
        assert main.main([*self.args, "--config", str(tmp_path / "absent.yaml")]) == 2

    def test_unknown_config_key(self, tmp_path, caplog):
        config = tmp_path / "custom.yaml"
        config.write_text(yaml.safe_dump({"cluster": {"min_size": 10}}))
        with caplog.at_level(logging.ERROR):
            code = main.main([*self.args, "--config", str(config)])
        assert code == 2
        assert "Unknown key 'min_size'" in caplog.text

    def test_log_file_option(self, tmp_path):
        log_file = tmp_path / "run.log"
        assert main.main(["--log-file", str(log_file), *self.args]) == 0
        assert "discset" in log_file.read_text()

    def test_plot_redraws_stereonet(self, tmp_path):
        assert main.main(self.args) == 0
        out = tmp_path / "redrawn.svg"
        assert main.main(["plot", "--run-dir", str(self.outdir), "--out", str(out), "--no-kde"]) == 0
        assert out.read_text().lstrip().startswith("<?xml")

    def test_plot_uses_the_run_kde_settings(self, tmp_path, monkeypatch):
        config = tmp_path / "custom.yaml"
        config.write_text(yaml.safe_dump({"kde": {"grid_n": 32, "bandwidth": 0.2}, "seed": 7}))
        assert main.main([*self.args, "--config", str(config)]) == 0

        calls = []
        kde_density = evaluation.kde_density

        def recording(poles, **kwargs):
            calls.append(kwargs)
            return kde_density(poles, **kwargs)

        monkeypatch.setattr(evaluation, "kde_density", recording)
        assert main.main(["plot", "--run-dir", str(self.outdir), "--out", str(tmp_path / "redrawn.svg")]) == 0
        assert calls == [{"bandwidth": 0.2, "grid_n": 32, "max_poles": 20000, "seed": 7}], f"Got {calls}"

    def test_max_residual_option(self):
        assert main.main([*self.args, "--max-residual", "0"]) == 2
        assert main.main([*self.args, "--max-residual", "0.1"]) == 0
        report = json.loads((self.outdir / "report.json").read_text())
        assert len(report["sets"]) == 2

    def test_plot_without_run(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        assert main.main(["plot", "--run-dir", str(empty)]) == 3


class TestEval:
    def test_table1(self, tmp_path, capsys):
        out = tmp_path / "evaluation.json"
        args = ["eval", "--identified", "tests/table1_proposed.csv", "--reference", "tests/table1_virtual_compass.csv"]
        assert main.main([*args, "--out", str(out)]) == 0
        printed = capsys.readouterr().out
        assert "MAE dip 1.9" in printed, f"Unexpected summary: {printed}"
        assert "6 of 6 reference sets matched" in printed
        assert json.loads(out.read_text())["mae_dipdir"] == pytest.approx(2.20, abs=0.01)

    def test_unreadable_listing(self, tmp_path):
        bad = tmp_path / "bad.csv"
        pd.DataFrame({"id": [1]}).to_csv(bad, index=False)
        args = ["--log-file", str(tmp_path / "eval.log"), "eval", "--identified", str(bad)]
        args += ["--reference", "tests/table1_virtual_compass.csv"]
        assert main.main(args) == 3
