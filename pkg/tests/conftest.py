import numpy as np
import pandas as pd
import pytest

from discset import synthetic
from discset.cloud import PointCloud

pd.set_option("display.max_columns", None)


@pytest.fixture(scope="module")
def flat_plane():
    """Noise-free plane, dip 30 / dip direction 120, about 1600 points per square metre over 2 x 2 m."""
    cloud, truth = synthetic.generate_noisy_plane(dip=30.0, dipdir=120.0, extent=2.0, density=1600.0, seed=0)
    return cloud, truth


@pytest.fixture(scope="module")
def noise_ball():
    return synthetic.generate_noise_ball(radius=1.0, count=5000, seed=0)


@pytest.fixture(scope="module")
def ridge():
    return synthetic.generate_ridge(angle_deg=90.0, extent=2.0, density=1600.0, seed=0)


@pytest.fixture(scope="module")
def fan_case_1():
    return synthetic.generate_plane_fan("fixed_dip_45", points_per_plane=2500, extent=2.0, seed=0)


@pytest.fixture
def unit_grid():
    """5 x 5 grid in the xy plane, spacing 0.1 m."""
    ticks = np.arange(5) * 0.1
    xx, yy = np.meshgrid(ticks, ticks, indexing="ij")
    return PointCloud(np.column_stack([xx.ravel(), yy.ravel(), np.zeros(25)]))


@pytest.fixture
def table1_reference():
    return pd.read_csv("tests/table1_virtual_compass.csv")


@pytest.fixture
def table1_proposed():
    return pd.read_csv("tests/table1_proposed.csv")
