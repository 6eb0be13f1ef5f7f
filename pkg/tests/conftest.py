"""Shared small-problem fixtures.

The "tiny" problem is a 16x16 grid with 24 views, small enough that every
module test runs in milliseconds but real enough that data, subsets and
objective all behave like the desk-scale studies.
"""

import numpy as np
import pytest

import petrecon as pr


@pytest.fixture(scope="session")
def tiny_geometry():
    return pr.ScannerGeometry(image_shape=(16, 16), pixel_size_mm=12.5,
                              fov_mm=200.0, n_angles=24, n_radial=24,
                              detector_width_mm=8.0, rays_per_bin=4)


@pytest.fixture(scope="session")
def tiny_system(tiny_geometry):
    return pr.build_system_matrix(tiny_geometry)


@pytest.fixture(scope="session")
def tiny_phantom(tiny_geometry):
    return pr.uniform_disk_phantom(tiny_geometry.image_shape,
                                   tiny_geometry.pixel_size_mm)


@pytest.fixture(scope="session")
def tiny_data(tiny_system, tiny_phantom):
    spec = pr.SimulationSpec(total_counts=5e4, seed=7)
    return pr.simulate_data(tiny_system, tiny_phantom, spec)


@pytest.fixture()
def tiny_spec(tiny_geometry, tiny_system, tiny_data):
    partition = pr.partition_subsets(tiny_geometry, 4)
    return pr.ObjectiveSpec(tiny_system, tiny_data.counts, tiny_data.background,
                            beta=0.05, partition=partition, gamma_r=2.0,
                            epsilon=1e-9)
