"""
Shared fixtures: small meshes with known geometry and an isolated
cache / log / registry location for every test session.
"""
import os
import tempfile

# Settings are read at import time; point them at a scratch directory first
_SCRATCH = tempfile.mkdtemp(prefix="patchmatch-tests-")
os.environ.setdefault("PATCHMATCH_CACHE", os.path.join(_SCRATCH, "cache"))
os.environ.setdefault("LOG_DIR", os.path.join(_SCRATCH, "logs"))
os.environ.setdefault("LOG_LEVEL", "WARNING")

import numpy as np
import pytest

from app import database
from models.mesh import TriMesh
from schemas.config import RunConfig
from services import synthetic


def pytest_collection_modifyitems(config, items):
    if os.environ.get("PATCHMATCH_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="set PATCHMATCH_SLOW=1 to run acceptance-scale tests")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def grid_mesh(nx: int, ny: int, spacing: float = 1.0, name: str = "grid") -> TriMesh:
    """Flat nx x ny vertex grid in the z = 0 plane, two triangles per cell"""
    xs, ys = np.meshgrid(np.arange(nx) * spacing, np.arange(ny) * spacing)
    vertices = np.column_stack([xs.ravel(), ys.ravel(), np.zeros(nx * ny)])
    faces = []
    for j in range(ny - 1):
        for i in range(nx - 1):
            a = j * nx + i
            b = a + 1
            c = a + nx
            d = c + 1
            faces.append((a, b, d))
            faces.append((a, d, c))
    return TriMesh(vertices, faces, name=name)


def random_mesh(rng: np.random.Generator, nx: int, ny: int) -> TriMesh:
    """Grid connectivity with jittered positions and a random height field"""
    mesh = grid_mesh(nx, ny)
    v = mesh.vertices + rng.uniform(-0.3, 0.3, size=mesh.vertices.shape)
    return mesh.with_vertices(v, name="random")


@pytest.fixture
def tetrahedron() -> TriMesh:
    vertices = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    faces = [[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]]
    return TriMesh(vertices, faces, name="tetrahedron")


@pytest.fixture
def strip() -> TriMesh:
    """2 x 6 triangle strip along x with unit spacing"""
    return grid_mesh(6, 2, name="strip")


@pytest.fixture
def grid() -> TriMesh:
    return grid_mesh(5, 5)


@pytest.fixture
def sphere() -> TriMesh:
    """Icosphere with 42 vertices"""
    return synthetic.icosphere(1)


@pytest.fixture
def tube() -> TriMesh:
    return synthetic.cylinder(n_around=8, n_along=4, radius=0.25, length=1.0)


@pytest.fixture
def toy_config() -> RunConfig:
    return RunConfig(
        patch_counts=[6],
        feature_dims=4,
        tau=0.5,
        epochs=2,
        steps_per_epoch=3,
        geometric_seeding=False,
        seed=3,
    )


@pytest.fixture
def registry(tmp_path):
    """Fresh SQLite registry per test"""
    database.configure(f"sqlite:///{(tmp_path / 'runs.db').as_posix()}")
    database.create_tables()
    yield database
    database.configure()
