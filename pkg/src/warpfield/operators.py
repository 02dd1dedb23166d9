"""Per-face differential operators and reflection-symmetry correspondence."""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateFaceError, SymmetryMismatchError
from .mesh import DEGENERATE_AREA_REL
from .sparsela import SparseMatrix


@dataclass(frozen=True)
class FaceGradientOperator:
    """Sparse operator taking per-vertex values to per-face gradients.

    ``matrix`` has shape (3m, n); rows come in triples, one per face, so
    that ``matrix @ phi`` stacks the 3-vector gradient of the scalar field
    ``phi`` on every face.  Applied to an (n, 3) vertex block it stacks the
    transposed 3x3 Jacobian of the map on every face.
    """

    matrix: SparseMatrix
    face_areas: np.ndarray

    @property
    def n_faces(self):
        return self.face_areas.shape[0]

    @property
    def mass(self):
        """Diagonal of the face-area mass matrix, each area repeated 3x."""
        return np.repeat(self.face_areas, 3)

    def apply(self, vertex_values):
        return self.matrix @ np.asarray(vertex_values, dtype=np.float64)


def build_gradient_operator(mesh):
    """Assemble the per-face gradient operator of a manifold triangle mesh.

    For face (v0, v1, v2) with area A and unit normal n, the gradient of a
    per-vertex scalar phi on that face is

        sum_k phi_k * (n x e_k) / (2 A)

    where e_k is the edge opposite corner k.  The operator annihilates
    constants and reproduces the tangential part of linear functions.
    """
    normals, areas = mesh.face_normals_and_areas()
    threshold = DEGENERATE_AREA_REL * mesh.bbox_diagonal ** 2
    if np.any(areas <= threshold):
        bad = np.flatnonzero(areas <= threshold)
        raise DegenerateFaceError(
            f"cannot build gradient operator: {bad.size} degenerate face(s)",
            face_indices=bad,
        )
    tri = mesh.corner_positions()
    m = mesh.n_faces
    # edge opposite corner k: e_k = v_{k+2} - v_{k+1}
    rows = np.empty(9 * m, dtype=np.int64)
    cols = np.empty(9 * m, dtype=np.int64)
    vals = np.empty(9 * m, dtype=np.float64)
    base = 3 * np.arange(m)
    for k in range(3):
        e_k = tri[:, (k + 2) % 3] - tri[:, (k + 1) % 3]
        coeff = np.cross(normals, e_k) / (2.0 * areas[:, None])
        for axis in range(3):
            idx = slice((3 * k + axis) * m, (3 * k + axis + 1) * m)
            rows[idx] = base + axis
            cols[idx] = mesh.faces[:, k]
            vals[idx] = coeff[:, axis]
    matrix = SparseMatrix.from_arrays(3 * m, mesh.n_vertices, rows, cols, vals)
    areas = areas.copy()
    areas.flags.writeable = False
    return FaceGradientOperator(matrix=matrix, face_areas=areas)


@dataclass(frozen=True)
class ReflectionPlane:
    """Mirror plane ``normal . x = offset`` with unit normal."""

    normal: np.ndarray
    offset: float

    @classmethod
    def axis(cls, axis, offset=0.0):
        normal = np.zeros(3)
        normal["xyz".index(axis)] = 1.0
        return cls(normal=normal, offset=float(offset))

    @classmethod
    def from_spec(cls, normal, offset):
        normal = np.asarray(normal, dtype=np.float64)
        norm = np.linalg.norm(normal)
        if norm == 0.0:
            raise ValueError("reflection plane normal must be nonzero")
        return cls(normal=normal / norm, offset=float(offset))

    def _axis(self):
        """(index, plane position) when the normal is exactly +-e_k, else None."""
        for k in range(3):
            expected = np.zeros(3)
            expected[k] = 1.0
            if np.array_equal(self.normal, expected):
                return k, self.offset
            if np.array_equal(self.normal, -expected):
                return k, -self.offset
        return None

    def signed_height(self, points):
        return np.asarray(points) @ self.normal - self.offset

    def reflect(self, points):
        """Mirror points across the plane.

        Axis-aligned planes use coordinate arithmetic so that with offset 0
        the map is a bitwise involution (required for exact idempotence of
        the symmetry projection).
        """
        points = np.asarray(points, dtype=np.float64)
        axis = self._axis()
        if axis is not None:
            k, c = axis
            out = points.copy()
            out[..., k] = 2.0 * c - points[..., k]  # 2*c is exact
            return out
        h = self.signed_height(points)
        return points - 2.0 * h[..., None] * self.normal

    def reflection_matrix(self):
        return np.eye(3) - 2.0 * np.outer(self.normal, self.normal)

    def snap(self, points):
        """Project points exactly onto the plane."""
        points = np.asarray(points, dtype=np.float64)
        axis = self._axis()
        if axis is not None:
            k, c = axis
            out = points.copy()
            out[..., k] = c
            return out
        h = self.signed_height(points)
        return points - h[..., None] * self.normal


@dataclass(frozen=True)
class SymmetryMap:
    """Vertex correspondence under a reflection plane.

    ``pairs`` lists (i, j) with i < j and reflect(v_i) ~ v_j; ``fixed``
    lists vertices lying on the plane; ``unmatched`` lists vertices with no
    counterpart within tolerance (at most 5% of the mesh, else construction
    fails).
    """

    plane: ReflectionPlane
    pairs: np.ndarray
    fixed: np.ndarray
    unmatched: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def pair_permutation(self, n_vertices):
        """Full permutation sending each vertex to its mirror image."""
        perm = np.arange(n_vertices)
        if self.pairs.size:
            perm[self.pairs[:, 0]] = self.pairs[:, 1]
            perm[self.pairs[:, 1]] = self.pairs[:, 0]
        return perm


def build_symmetry_map(mesh, plane=None, tolerance=None):
    """Pair mesh vertices with their mirror images under a reflection plane.

    Parameters
    ----------
    mesh : TriMesh
        Mesh assumed approximately mirror-symmetric about the plane.
    plane : ReflectionPlane, optional
        Defaults to the sagittal plane x = centroid_x.
    tolerance : float, optional
        Distance below which a vertex counts as on-plane, and the maximum
        allowed reflection-matching distance.  Defaults to 1e-4 of the
        bounding-box diagonal.

    Raises
    ------
    SymmetryMismatchError
        If more than 5% of the vertices have no counterpart; the error
        names the worst offenders.
    """
    if plane is None:
        plane = ReflectionPlane.axis("x", offset=float(mesh.centroid[0]))
    if tolerance is None:
        tolerance = 1e-4 * mesh.bbox_diagonal

    v = mesh.vertices
    n = mesh.n_vertices
    height = plane.signed_height(v)
    on_plane = np.abs(height) <= tolerance
    reflected = plane.reflect(v)

    tree = cKDTree(v)
    dist, nearest = tree.query(reflected, k=1)

    partner = np.full(n, -1, dtype=np.int64)
    candidates = np.flatnonzero(~on_plane & (dist <= tolerance))
    partner[candidates] = nearest[candidates]
    # keep only mutual matches so the pairing is an involution
    mutual = np.zeros(n, dtype=bool)
    mutual[candidates] = partner[partner[candidates]] == candidates
    partner[~mutual] = -1

    unmatched = np.flatnonzero(~on_plane & (partner < 0))
    if unmatched.size > 0.05 * n:
        worst = unmatched[np.argsort(dist[unmatched])[::-1][:8]]
        details = ", ".join(
            f"v{int(i)} (miss {dist[i]:.3g})" for i in worst
        )
        raise SymmetryMismatchError(
            f"{unmatched.size}/{n} vertices have no mirror counterpart "
            f"within {tolerance:.3g}; worst: {details}",
            unmatched=unmatched,
        )

    idx = np.flatnonzero(partner >= 0)
    lo = idx[idx < partner[idx]]
    pairs = np.stack([lo, partner[lo]], axis=1) if lo.size else np.zeros((0, 2), dtype=np.int64)
    return SymmetryMap(
        plane=plane,
        pairs=pairs,
        fixed=np.flatnonzero(on_plane),
        unmatched=unmatched,
    )


def build_face_symmetry(mesh, sym_map):
    """Face-level correspondence induced by a vertex symmetry map.

    Returns (pairs, self_mirrored): index pairs of faces that are mirror
    images of each other, and faces mapping to themselves.  Faces whose
    mirrored vertex triple is not a face of the mesh are skipped.
    """
    perm = sym_map.pair_permutation(mesh.n_vertices)
    lookup = {}
    for i, f in enumerate(mesh.faces):
        lookup[tuple(sorted(f))] = i
    pairs = []
    self_mirrored = []
    seen = set()
    for i, f in enumerate(mesh.faces):
        if i in seen:
            continue
        key = tuple(sorted(perm[f]))
        j = lookup.get(key)
        if j is None:
            continue
        if j == i:
            self_mirrored.append(i)
            seen.add(i)
        elif j not in seen:
            pairs.append((i, j))
            seen.add(i)
            seen.add(j)
    pairs = np.asarray(pairs, dtype=np.int64) if pairs else np.zeros((0, 2), dtype=np.int64)
    return pairs, np.asarray(self_mirrored, dtype=np.int64)
