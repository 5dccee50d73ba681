"""Shared fixtures: flat reference patches and tube-point sampling."""

import numpy as np
import pytest

from surfdg.geometry import eval_phi, grad_phi, make_plane, project_points
from surfdg.mesh import SurfaceMesh, build_edges
from surfdg.problems import TestProblem

# a domain dataclass, not a test case
TestProblem.__test__ = False

# normal offsets used when sampling points near each surface; kept well
# inside the reach so the closest point stays unique
TUBE_WIDTH = {"sphere": 0.2, "dziuk": 0.05, "enzensberger-stern": 0.01}


def flat_grid(cells: int) -> SurfaceMesh:
    """Structured triangulation of [0,1]^2 in the z = 0 plane.

    Every cell is split along its (0,0)-(1,1) diagonal, giving
    2 * cells**2 triangles.
    """
    n = cells + 1
    xs = np.linspace(0.0, 1.0, n)
    gx, gy = np.meshgrid(xs, xs, indexing="xy")
    verts = np.column_stack([gx.ravel(), gy.ravel(), np.zeros(n * n)])
    tris = []
    for j in range(cells):
        for i in range(cells):
            v00 = j * n + i
            v10 = v00 + 1
            v01 = v00 + n
            v11 = v01 + 1
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    mesh = SurfaceMesh(vertices=verts,
                       triangles=np.asarray(tris, dtype=np.int64),
                       levels=np.zeros(len(tris), dtype=np.int32),
                       allow_boundary=True)
    return build_edges(mesh)


def flat_pair() -> SurfaceMesh:
    """Unit square split along the main diagonal into two triangles.

    Vertex order matches the hand-computed 6x6 assembly oracle: triangle 0
    covers 0 <= y <= x <= 1, triangle 1 covers 0 <= x <= y <= 1.
    """
    verts = np.array([[0.0, 0.0, 0.0],
                      [1.0, 0.0, 0.0],
                      [1.0, 1.0, 0.0],
                      [0.0, 1.0, 0.0]])
    tris = np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int64)
    mesh = SurfaceMesh(vertices=verts, triangles=tris,
                       levels=np.zeros(2, dtype=np.int32),
                       allow_boundary=True)
    return build_edges(mesh)


def tube_points(surface, n=100, seed=0, width=None):
    """n random points in a thin tube around phi = 0.

    Seeds are drawn from [-1.5, 1.5]^3, projected onto the surface, and
    pushed off along the normal by a uniform offset within the tube width.
    """
    if width is None:
        width = TUBE_WIDTH.get(surface.name, 0.05)
    rng = np.random.default_rng(seed)
    base = np.empty((0, 3))
    while len(base) < n:
        seeds = rng.uniform(-1.5, 1.5, size=(4 * n, 3))
        proj = project_points(surface, seeds)
        ok = np.abs(eval_phi(surface, proj.points)) <= 1e-8
        base = np.vstack([base, proj.points[ok]])
    base = base[:n]
    g = grad_phi(surface, base)
    nu = g / np.linalg.norm(g, axis=1, keepdims=True)
    t = rng.uniform(-width, width, size=(n, 1))
    return base + t * nu


@pytest.fixture
def plane():
    return make_plane()


@pytest.fixture
def square2():
    return flat_pair()


@pytest.fixture
def square128():
    return flat_grid(8)
