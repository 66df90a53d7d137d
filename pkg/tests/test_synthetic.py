import json

import numpy as np
import pytest

from discset import synthetic
from discset.orientation import orientation_to_normal


class TestIcosphere:
    @pytest.fixture(autouse=True)
    def icosphere(self):
        self.cloud, self.truth = synthetic.generate_icosphere(total_points=16_000, seed=0)

    def test_faces_and_pairs(self):
        summary = synthetic.validate_icosphere(self.truth)
        print(f"\nIcosphere check: {summary}")
        assert summary["faces"] == 80
        assert (pairs := summary["pairs"]) == 40, f"Expected 40 antipodal pairs, got {pairs}"
        assert summary["min_separation_deg"] > 10.0

    def test_points_lie_on_their_faces(self):
        for face in self.truth.faces.itertuples():
            heights = self.cloud.points[self.truth.point_face == face.id] @ np.array([face.nx, face.ny, face.nz])
            assert np.ptp(heights) < 1e-9, f"Points of face {face.id} are not coplanar"
            assert heights.min() > 0
        assert np.all(np.linalg.norm(self.cloud.points, axis=1) <= 10.0 + 1e-9)

    def test_point_allocation(self):
        assert self.cloud.count == 16_000
        counts = np.bincount(self.truth.point_face, minlength=80)
        assert counts.sum() == 16_000
        assert counts.min() > 0

    def test_deterministic(self):
        cloud, truth = synthetic.generate_icosphere(total_points=16_000, seed=0)
        assert np.array_equal(cloud.points, self.cloud.points)
        assert truth.faces.equals(self.truth.faces)
        other, _ = synthetic.generate_icosphere(total_points=16_000, seed=1)
        assert not np.array_equal(other.points, self.cloud.points)

    def test_set_orientations(self):
        sets = self.truth.set_orientations()
        assert sets.shape == (40, 3)
        assert sets["dip"].between(0.0, 90.0).all()
        assert set(self.truth.faces.set_index("id").loc[np.unique(self.truth.point_face), "pair_id"]) == set(range(40))

    def test_ground_truth_json(self, tmp_path):
        path = synthetic.write_ground_truth_json(self.truth, tmp_path / "truth.json")
        with path.open() as handle:
            payload = json.load(handle)
        assert len(payload["faces"]) == 80
        assert len(payload["point_face"]) == 16_000
        assert set(payload["faces"][0]) == {"id", "pair_id", "dip", "dipdir"}


def test_icosahedron_has_no_vertical_face():
    _, truth = synthetic.generate_icosphere(subdivisions=0, total_points=200)
    assert truth.faces.shape[0] == 20
    assert synthetic.validate_icosphere(truth)["min_abs_nz"] > 0.02


def test_validate_icosphere_rejects_unpaired_faces():
    _, truth = synthetic.generate_plane_fan("fixed_dip_45", points_per_plane=10)
    with pytest.raises(ValueError, match="expected 2"):
        synthetic.validate_icosphere(truth)


class TestPlaneFan:
    @pytest.mark.parametrize("case, count", [("fixed_dip_45", 12), ("fixed_dd_90", 7)])
    def test_cases(self, case, count):
        cloud, truth = synthetic.generate_plane_fan(case, points_per_plane=100)
        assert cloud.count == 100 * count
        assert truth.n_sets == count
        assert truth.faces[["dip", "dipdir"]].to_records(index=False).tolist() == synthetic.FAN_CASES[case]

    def test_patches_are_flat_and_oriented(self):
        cloud, truth = synthetic.generate_plane_fan("fixed_dd_90", points_per_plane=200, seed=3)
        for row in truth.faces.itertuples():
            points = cloud.points[truth.point_face == row.id]
            normal = orientation_to_normal(row.dip, row.dipdir)
            offsets = (points - points.mean(axis=0)) @ normal
            assert np.max(np.abs(offsets)) < 1e-9, f"Plane {row.id} is not flat"

    def test_unknown_case(self):
        with pytest.raises(ValueError, match="Unknown plane fan case"):
            synthetic.generate_plane_fan("fixed_dip_30")


class TestNoisyPlane:
    def test_density_and_spread(self):
        cloud, truth = synthetic.generate_noisy_plane(dip=50.0, dipdir=300.0, extent=1.0, density=2500.0, sigma=0.01)
        assert (n := cloud.count) == 2500, f"Expected a 50 x 50 grid, got {n} points"
        offsets = cloud.points @ orientation_to_normal(50.0, 300.0)
        assert np.std(offsets) == pytest.approx(0.01, rel=0.1)
        assert truth.set_orientations().loc[0, "dipdir"] == 300.0

    def test_noise_free_is_flat(self, flat_plane):
        cloud, _ = flat_plane
        offsets = cloud.points @ orientation_to_normal(30.0, 120.0)
        assert np.max(np.abs(offsets)) < 1e-12

    def test_bad_arguments(self):
        with pytest.raises(ValueError, match="sigma"):
            synthetic.generate_noisy_plane(sigma=-0.1)
        with pytest.raises(ValueError, match="positive"):
            synthetic.generate_noisy_plane(density=0.0)


def test_ridge_distance_attribute(ridge):
    cloud, truth = ridge
    distance = cloud.attributes["ridge_distance"]
    assert np.allclose(distance, np.hypot(cloud.points[:, 0], cloud.points[:, 2]))
    assert truth.faces.shape[0] == 2
    # at 90 degrees each half-plane dips 45 degrees
    assert np.allclose(truth.faces["dip"], 45.0)


def test_noise_ball_inside_radius(noise_ball):
    assert noise_ball.count == 5000
    assert np.linalg.norm(noise_ball.points, axis=1).max() <= 1.0


class TestFisherSampler:
    def test_concentration_about_mean(self):
        dip, dipdir = synthetic.sample_fisher_orientations(40.0, 200.0, kappa=200.0, count=4000, seed=5)
        normals = orientation_to_normal(dip, dipdir)
        mean = normals.mean(axis=0)
        mean /= np.linalg.norm(mean)
        angle = np.degrees(np.arccos(mean @ orientation_to_normal(40.0, 200.0)))
        assert angle < 0.5, f"Sample mean is {angle:.3f} degrees off"
        # for a Fisher distribution E[1 - cos(theta)] is about 1 / kappa
        spread = np.mean(1.0 - normals @ orientation_to_normal(40.0, 200.0))
        assert spread == pytest.approx(1.0 / 200.0, rel=0.1)

    def test_bad_kappa(self):
        with pytest.raises(ValueError):
            synthetic.sample_fisher_orientations(40.0, 200.0, kappa=0.0, count=10)
