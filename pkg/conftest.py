"""
Shared fixtures: sample meshes and a scratch run directory
"""
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import pytest

from quadlayout.core.sample_meshes import clifford_torus, double_torus, icosahedron, torus_grid


@pytest.fixture(scope="session")
def ico():
    return icosahedron()


@pytest.fixture(scope="session")
def torus():
    return torus_grid()


@pytest.fixture(scope="session")
def flat_torus():
    return clifford_torus()


@pytest.fixture(scope="session")
def genus2():
    return double_torus()


@pytest.fixture
def run_dir(tmp_path):
    path = tmp_path / "run"
    path.mkdir()
    return path
