"""
Synthetic test shapes: icosphere, open cylinder, smooth bending and rigid
motions. Deformed copies keep the vertex order, so the ground-truth map is
the identity.
"""
import logging
from typing import Optional

import numpy as np

from models.mesh import TriMesh

logger = logging.getLogger(__name__)

PHI = (1.0 + np.sqrt(5.0)) / 2.0

ICOSAHEDRON_VERTICES = np.array([
    [-1, PHI, 0], [1, PHI, 0], [-1, -PHI, 0], [1, -PHI, 0],
    [0, -1, PHI], [0, 1, PHI], [0, -1, -PHI], [0, 1, -PHI],
    [PHI, 0, -1], [PHI, 0, 1], [-PHI, 0, -1], [-PHI, 0, 1],
])

ICOSAHEDRON_FACES = np.array([
    [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
    [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
    [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
    [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
])


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> TriMesh:
    """
    Subdivided icosahedron projected onto a sphere.
    Vertex counts: 12, 42, 162, 642, 2562 for 0..4 subdivisions.
    """
    vertices = [v / np.linalg.norm(v) for v in ICOSAHEDRON_VERTICES.astype(np.float64)]
    faces = [tuple(f) for f in ICOSAHEDRON_FACES]
    for _ in range(subdivisions):
        midpoints = {}
        refined = []
        for a, b, c in faces:
            mids = []
            for v0, v1 in ((a, b), (b, c), (c, a)):
                key = (min(v0, v1), max(v0, v1))
                if key not in midpoints:
                    mid = 0.5 * (vertices[v0] + vertices[v1])
                    midpoints[key] = len(vertices)
                    vertices.append(mid / np.linalg.norm(mid))
                mids.append(midpoints[key])
            m0, m1, m2 = mids
            refined.extend([(a, m0, m2), (m0, b, m1), (m2, m1, c), (m0, m1, m2)])
        faces = refined
    return TriMesh(np.asarray(vertices) * radius, np.asarray(faces), name=f"icosphere{subdivisions}")


def cylinder(n_around: int = 32, n_along: int = 32, radius: float = 0.25, length: float = 2.0) -> TriMesh:
    """Open tube along z from 0 to `length`, rings of `n_around` vertices"""
    if n_around < 3 or n_along < 1:
        raise ValueError("a cylinder needs n_around >= 3 and n_along >= 1")
    theta = 2.0 * np.pi * np.arange(n_around) / n_around
    z = np.linspace(0.0, length, n_along + 1)
    ring = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)
    vertices = np.concatenate([np.column_stack([ring, np.full(n_around, zk)]) for zk in z])
    faces = []
    for k in range(n_along):
        for j in range(n_around):
            a = k * n_around + j
            b = k * n_around + (j + 1) % n_around
            c = a + n_around
            d = b + n_around
            faces.append((a, b, d))
            faces.append((a, d, c))
    return TriMesh(vertices, np.asarray(faces), name="cylinder")


def bend(mesh: TriMesh, angle: float, length: Optional[float] = None) -> TriMesh:
    """
    Bend a shape lying along z around the y axis so that the z extent
    [0, length] wraps onto an arc of `angle` radians. Near-isometric for
    thin shapes; angle 0 returns the same positions.
    """
    if angle == 0:
        return mesh.with_vertices(mesh.vertices.copy(), name=f"{mesh.name}_bent")
    v = mesh.vertices
    length = float(v[:, 2].max() - v[:, 2].min()) if length is None else length
    r_bend = length / angle
    s = (v[:, 2] - v[:, 2].min()) / r_bend
    reach = r_bend - v[:, 0]
    bent = np.column_stack([r_bend - reach * np.cos(s), v[:, 1], v[:, 2].min() + reach * np.sin(s)])
    return mesh.with_vertices(bent, name=f"{mesh.name}_bent")


def rotation_matrix(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis"""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def rigid_motion(mesh: TriMesh, rotation, translation) -> TriMesh:
    """x -> R x + t with unchanged connectivity"""
    rotation = np.asarray(rotation, dtype=np.float64)
    translation = np.asarray(translation, dtype=np.float64)
    return mesh.with_vertices(mesh.vertices @ rotation.T + translation, name=f"{mesh.name}_moved")
