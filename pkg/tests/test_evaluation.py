import json

import numpy as np
import pandas as pd
import pytest

from discset import evaluation as de
from discset.planes import SetStatistics


def make_set(set_id, dip, dipdir, sd_dip=0.0, sd_dipdir=0.0):
    return SetStatistics(set_id, 1, 100, dip, sd_dip, dipdir, sd_dipdir)


class TestReferenceComparison:
    @pytest.fixture(autouse=True)
    def table1(self, table1_reference, table1_proposed):
        self.reference = de.sets_from_dataframe(table1_reference)
        self.proposed = de.sets_from_dataframe(table1_proposed)

    def test_table1_errors(self):
        result = de.evaluate_against_reference(self.proposed, self.reference)
        print(f"\nMatched pairs:\n{result.pairs}")
        assert result.pairs["identified"].tolist() == result.pairs["reference"].tolist() == [1, 2, 3, 4, 5, 6]
        assert (mae := result.mae_dip) == pytest.approx(1.95, abs=0.01), f"Expected MAE dip 1.95, got {mae}"
        assert (mae := result.mae_dipdir) == pytest.approx(2.20, abs=0.01), f"Expected MAE dip direction 2.20, got {mae}"
        assert result.disp_dip == pytest.approx(2.34, abs=0.01)
        assert result.disp_dipdir == pytest.approx(2.90, abs=0.01)
        assert not result.unmatched_reference
        assert not result.unmatched_identified

    def test_identical_lists_have_no_error(self):
        result = de.evaluate_against_reference(self.reference, self.reference)
        assert result.mae_dip == result.mae_dipdir == result.disp_dip == result.disp_dipdir == 0.0

    def test_symmetric(self):
        forward = de.evaluate_against_reference(self.proposed, self.reference)
        backward = de.evaluate_against_reference(self.reference, self.proposed)
        assert forward.mae_dip == pytest.approx(backward.mae_dip)
        assert forward.mae_dipdir == pytest.approx(backward.mae_dipdir)
        assert forward.disp_dipdir == pytest.approx(backward.disp_dipdir)

    def test_to_dict(self):
        payload = de.evaluate_against_reference(self.proposed, self.reference).to_dict()
        assert set(payload["pairs"][0]) == {"identified", "reference", "d_dip", "d_dipdir", "d_sd_dip", "d_sd_dipdir"}
        assert len(payload["pairs"]) == 6


def test_dip_direction_error_across_north():
    result = de.evaluate_against_reference([make_set(0, 60.0, 359.0)], [make_set(0, 60.0, 1.0)])
    assert (d := result.mae_dipdir) == pytest.approx(2.0), f"Expected 2 degrees across north, got {d}"


def test_far_sets_stay_unmatched():
    identified = [make_set(0, 45.0, 0.0), make_set(1, 45.0, 180.0)]
    reference = [make_set(7, 46.0, 2.0)]
    result = de.evaluate_against_reference(identified, reference)
    assert result.pairs.shape[0] == 1
    assert result.unmatched_identified == [1]
    assert result.unmatched_reference == []


def test_nothing_matched_gives_nan():
    result = de.evaluate_against_reference([make_set(0, 10.0, 0.0)], [make_set(0, 80.0, 90.0)])
    assert np.isnan(result.mae_dip)
    assert result.unmatched_reference == [0]


def test_greedy_matching_takes_the_closest_pair_first():
    identified = [make_set(0, 50.0, 100.0), make_set(1, 50.0, 110.0)]
    reference = [make_set(0, 50.0, 108.0)]
    result = de.evaluate_against_reference(identified, reference)
    assert result.pairs["identified"].tolist() == [1]


def test_empty_reference():
    with pytest.raises(ValueError, match="empty"):
        de.evaluate_against_reference([make_set(0, 10.0, 0.0)], [])


def test_angle_helpers():
    assert de.angular_difference(350.0, 10.0) == pytest.approx(20.0)
    assert de.angular_difference(0.0, 180.0) == pytest.approx(180.0)
    # a vertical plane seen from either side is the same plane
    assert de.axial_angle(90.0, 0.0, 90.0, 180.0) == pytest.approx(0.0, abs=1e-6)


class TestReadSets:
    def test_csv(self):
        sets = de.read_sets("tests/table1_virtual_compass.csv")
        assert [s.set_id for s in sets] == [1, 2, 3, 4, 5, 6]
        assert sets[0].mean_dip == pytest.approx(82.73)
        assert sets[0].sd_dipdir == pytest.approx(8.53)

    def test_report_json(self, tmp_path):
        path = tmp_path / "report.json"
        sets = [make_set(0, 30.0, 120.0, 1.0, 2.0).to_dict()]
        path.write_text(json.dumps({"sets": sets}))
        loaded = de.read_sets(path)
        assert loaded[0].mean_dipdir == pytest.approx(120.0)
        assert loaded[0].point_count == 100

    def test_report_without_sets(self, tmp_path):
        path = tmp_path / "report.json"
        path.write_text(json.dumps({"planes": []}))
        with pytest.raises(ValueError, match="no 'sets'"):
            de.read_sets(path)

    def test_missing_columns(self):
        with pytest.raises(ValueError, match="mean_dipdir"):
            de.sets_from_dataframe(pd.DataFrame({"id": [1], "mean_dip": [2.0], "sd_dip": [0.0], "sd_dipdir": [0.0]}))


class TestKde:
    def test_integral_is_one(self):
        poles = np.random.default_rng(0).normal(0.0, 0.1, size=(500, 2))
        grid = de.kde_density(poles, grid_n=128)
        assert grid.method == "scott"
        assert (total := grid.integral()) == pytest.approx(1.0, abs=0.02), f"Expected a unit integral, got {total}"
        assert np.all(grid.density >= 0)

    def test_two_groups_give_two_peaks(self):
        rng = np.random.default_rng(1)
        poles = np.vstack([rng.normal((-0.5, 0.0), 0.1, size=(300, 2)), rng.normal((0.5, 0.0), 0.1, size=(300, 2))])
        peaks = de.kde_peaks(de.kde_density(poles, grid_n=64), peak_fraction=0.5)
        print(f"\nPeaks:\n{peaks}")
        assert (n := peaks.shape[0]) == 2, f"Expected 2 peaks, got {n}"
        assert np.allclose(np.sort(peaks["dx"]), [-0.5, 0.5], atol=0.1)
        assert list(peaks.columns) == ["dx", "dy", "density", "dip", "dipdir"]

    def test_identical_poles_use_isotropic_kernel(self):
        # both coordinates sit on cell centres of the 100-cell grid
        poles = np.tile([[0.31, -0.21]], (50, 1))
        grid = de.kde_density(poles, grid_n=100)
        assert grid.method == "isotropic"
        iy, ix = np.unravel_index(np.argmax(grid.density), grid.density.shape)
        assert grid.centres[ix] == pytest.approx(0.31) and grid.centres[iy] == pytest.approx(-0.21)
        peaks = de.kde_peaks(grid)
        assert peaks.shape[0] == 1

    def test_fixed_bandwidth_and_subsample(self):
        poles = np.random.default_rng(2).uniform(-0.5, 0.5, size=(1000, 2))
        grid = de.kde_density(poles, bandwidth=0.2, grid_n=32, max_poles=200, seed=3)
        again = de.kde_density(poles, bandwidth=0.2, grid_n=32, max_poles=200, seed=3)
        assert grid.method == "fixed"
        assert grid.factor == pytest.approx(0.2)
        assert np.array_equal(grid.density, again.density)

    def test_bad_input(self):
        with pytest.raises(ValueError, match="at least 2"):
            de.kde_density(np.zeros((1, 2)))
        with pytest.raises(ValueError, match="positive"):
            de.kde_density(np.zeros((5, 2)), bandwidth=-1.0)
