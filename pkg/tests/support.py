"""Shared constructed meshes for metric and acceptance tests."""

import numpy as np

from warpfield.mesh import TriMesh


def crossing_pair(offset=(0.0, 0.0, 0.0)):
    """Two triangles crossing at their interiors (no shared vertices)."""
    off = np.asarray(offset, dtype=np.float64)
    t1 = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]) + off
    t2 = np.array([[0.2, 0.2, -0.5], [0.8, 0.2, 0.5], [0.2, 0.8, 0.5]]) + off
    return t1, t2


def two_crossing_triangles():
    t1, t2 = crossing_pair()
    verts = np.concatenate([t1, t2])
    faces = np.array([[0, 1, 2], [3, 4, 5]])
    return TriMesh(verts, faces, name="crossing_pair")


def seven_pair_mesh():
    """18 faces: 7 interpenetrating pairs plus 4 clean spectator faces.

    Each pair is isolated from every other pair, so exactly 7 unordered
    face pairs intersect (14 distinct faces involved).
    """
    verts = []
    faces = []
    for k in range(7):
        t1, t2 = crossing_pair(offset=(2.5 * k, 0.0, 0.0))
        base = len(verts)
        verts.extend(t1)
        verts.extend(t2)
        faces.append([base, base + 1, base + 2])
        faces.append([base + 3, base + 4, base + 5])
    for k in range(4):
        base = len(verts)
        verts.extend(
            np.array([[0.0, 0.0, 0.0], [0.5, 0.0, 0.0], [0.0, 0.5, 0.0]])
            + np.array([2.5 * k, 5.0, 0.0])
        )
        faces.append([base, base + 1, base + 2])
    return TriMesh(np.asarray(verts), np.asarray(faces), name="seven_pairs")


def needle_triangle_mesh():
    """One needle triangle with angles of roughly 1, 1, and 178 degrees."""
    apex_height = np.tan(np.radians(1.0))
    verts = np.array([[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, apex_height, 0.0]])
    return TriMesh(verts, [[0, 1, 2]], name="needle")
