"""Procedural test meshes: icosphere, cube, quad plane, crumpled sphere.

These are the corpus generators used by the test-suite and the CLI demos;
they produce deterministic connectivity so landmark indices stay stable.
"""

import numpy as np

from .mesh import TriMesh


def icosahedron():
    """Unit icosahedron (12 vertices, 20 faces), CCW outward winding."""
    p = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, p, 0], [1, p, 0], [-1, -p, 0], [1, -p, 0],
            [0, -1, p], [0, 1, p], [0, -1, -p], [0, 1, -p],
            [p, 0, -1], [p, 0, 1], [-p, 0, -1], [-p, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1)[:, None]
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    return verts, faces


def _subdivide(verts, faces):
    """One midpoint-split pass; new midpoints projected to the unit sphere."""
    verts = list(verts)
    cache = {}

    def midpoint(a, b):
        key = (a, b) if a < b else (b, a)
        if key in cache:
            return cache[key]
        m = (np.asarray(verts[a]) + np.asarray(verts[b])) / 2.0
        m /= np.linalg.norm(m)
        verts.append(m)
        cache[key] = len(verts) - 1
        return cache[key]

    new_faces = []
    for a, b, c in faces:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        new_faces.extend([(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)])
    return np.asarray(verts), np.asarray(new_faces, dtype=np.int64)


def _spherical_uvs(verts, faces):
    """Per-corner lat/long UVs; seam faces are left split (no wrap fixing)."""
    tri = verts[faces]
    u = 0.5 + np.arctan2(tri[..., 2], tri[..., 0]) / (2.0 * np.pi)
    v = 0.5 + np.arcsin(np.clip(tri[..., 1], -1.0, 1.0)) / np.pi
    return np.stack([u, v], axis=-1)


def icosphere(subdivisions=3, radius=1.0, with_uvs=True, name="icosphere"):
    """Icosphere with 20 * 4**subdivisions faces (3 -> 642 verts, 1280 faces)."""
    verts, faces = icosahedron()
    for _ in range(subdivisions):
        verts, faces = _subdivide(verts, faces)
    uv = _spherical_uvs(verts, faces) if with_uvs else None
    return TriMesh(verts * radius, faces, uv_coords=uv, name=name)


def cube(half_extent=1.0, name="cube"):
    """Axis-aligned cube centered at the origin, 8 vertices, 12 faces."""
    h = half_extent
    verts = np.array(
        [
            [-h, -h, -h], [h, -h, -h], [h, h, -h], [-h, h, -h],
            [-h, -h, h], [h, -h, h], [h, h, h], [-h, h, h],
        ],
        dtype=np.float64,
    )
    faces = np.array(
        [
            [0, 2, 1], [0, 3, 2],  # z-
            [4, 5, 6], [4, 6, 7],  # z+
            [0, 1, 5], [0, 5, 4],  # y-
            [2, 3, 7], [2, 7, 6],  # y+
            [1, 2, 6], [1, 6, 5],  # x+
            [3, 0, 4], [3, 4, 7],  # x-
        ],
        dtype=np.int64,
    )
    return TriMesh(verts, faces, name=name)


def quad_plane_obj(nx=4, ny=3, size=1.0):
    """OBJ text for a z=0 plane meshed with quads (exercises fan triangulation)."""
    lines = ["o quad_plane"]
    for j in range(ny + 1):
        for i in range(nx + 1):
            x = size * (i / nx - 0.5)
            y = size * (j / ny - 0.5)
            lines.append(f"v {x:.9g} {y:.9g} 0")
    for j in range(ny):
        for i in range(nx):
            a = j * (nx + 1) + i + 1
            b = a + 1
            c = a + nx + 2
            d = a + nx + 1
            lines.append(f"f {a} {b} {c} {d}")
    return "\n".join(lines) + "\n"


def crumpled_sphere(subdivisions=2, amplitude=0.1, seed=7, name="crumpled"):
    """Icosphere with seeded 3D vertex noise.

    Radial-only noise keeps the surface star-shaped (never self-intersecting);
    full 3D displacement crosses faces once the amplitude passes ~0.15 at
    subdivision 2, which the intersection-metric tests rely on.
    """
    base = icosphere(subdivisions, with_uvs=False, name=name)
    rng = np.random.default_rng(seed)
    displacement = amplitude * rng.normal(size=base.vertices.shape)
    return TriMesh(base.vertices + displacement, base.faces, name=name)


def single_triangle(name="triangle"):
    """The unit right triangle in the z=0 plane."""
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=np.float64)
    faces = np.array([[0, 1, 2]], dtype=np.int64)
    return TriMesh(verts, faces, name=name)
