"""Triangle mesh data model and OBJ / sidecar file I/O.

The mesh is the unit everything else operates on: an indexed triangle mesh
with optional per-corner UVs, vertex-indexed landmarks, and per-vertex
region labels.  Topology is frozen after construction; deformation only
ever replaces the vertex array.
"""

import numpy as np

from .errors import (
    DegenerateFaceError,
    EmptyMeshError,
    NonManifoldError,
    ObjParseError,
)
from .validation import as_float_array, as_index_array

# Faces with area below this fraction of the squared bounding-box diagonal
# are rejected; relative so the check is unit-independent.
DEGENERATE_AREA_REL = 1e-12


class TriMesh:
    """Indexed triangle mesh with optional UVs, landmarks, and region labels.

    Parameters
    ----------
    vertices : (n, 3) array_like
        Vertex positions in model units.
    faces : (m, 3) array_like
        Vertex indices per face, counterclockwise winding.
    uv_coords : (m, 3, 2) array_like or None
        One 2D texture coordinate per face corner.
    landmarks : sequence of int or None
        Vertex indices of semantic landmarks.
    region_labels : (n,) array_like of int or None
        Per-vertex segment id.
    name : str
        Identifier used in reports and file headers.

    Construction validates the mesh invariants: face indices in range, no
    repeated vertex within a face, relative face area above threshold, and
    edge-manifoldness (each undirected edge shared by at most two faces).
    """

    def __init__(self, vertices, faces, uv_coords=None, landmarks=None,
                 region_labels=None, name="mesh", validate=True):
        self.vertices = as_float_array(vertices, "vertices", (None, 3))
        self.vertices.flags.writeable = False
        if self.vertices.shape[0] == 0:
            raise EmptyMeshError("mesh has no vertices")
        self.faces = as_index_array(faces, "faces", self.n_vertices, (None, 3))
        self.faces.flags.writeable = False
        if self.faces.shape[0] == 0:
            raise EmptyMeshError("mesh has no faces")
        self.name = str(name)

        if uv_coords is not None:
            uv_coords = as_float_array(uv_coords, "uv_coords",
                                       (self.n_faces, 3, 2))
            uv_coords.flags.writeable = False
        self.uv_coords = uv_coords

        if landmarks is not None:
            landmarks = as_index_array(landmarks, "landmarks",
                                       self.n_vertices, (None,))
            landmarks.flags.writeable = False
        self.landmarks = landmarks

        if region_labels is not None:
            region_labels = np.ascontiguousarray(region_labels, dtype=np.int64)
            if region_labels.shape != (self.n_vertices,):
                raise ValueError("region_labels must have one entry per vertex")
            region_labels.flags.writeable = False
        self.region_labels = region_labels

        if validate:
            self._check_faces()
            self._check_manifold()

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_faces(self):
        return self.faces.shape[0]

    @property
    def bbox_diagonal(self):
        ext = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(np.linalg.norm(ext))

    @property
    def centroid(self):
        return self.vertices.mean(axis=0)

    def corner_positions(self):
        """Positions of the three corners of every face, shape (m, 3, 3)."""
        return self.vertices[self.faces]

    def face_normals_and_areas(self):
        """Unit normals (m, 3) and areas (m,) from the CCW winding."""
        tri = self.corner_positions()
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        norms = np.linalg.norm(cross, axis=1)
        areas = 0.5 * norms
        with np.errstate(invalid="ignore", divide="ignore"):
            normals = cross / norms[:, None]
        return normals, areas

    def face_areas(self):
        return self.face_normals_and_areas()[1]

    def undirected_edges(self):
        """All face edges as sorted vertex pairs, shape (3m, 2)."""
        f = self.faces
        edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        return np.sort(edges, axis=1)

    def vertex_adjacency(self):
        """Neighbor index lists per vertex (from face edges)."""
        neighbors = [set() for _ in range(self.n_vertices)]
        for a, b in self.undirected_edges():
            neighbors[a].add(int(b))
            neighbors[b].add(int(a))
        return [sorted(s) for s in neighbors]

    def with_vertices(self, vertices, name=None):
        """Copy sharing connectivity, UVs, and semantics with new positions."""
        return TriMesh(
            vertices,
            self.faces,
            uv_coords=self.uv_coords,
            landmarks=self.landmarks,
            region_labels=self.region_labels,
            name=self.name if name is None else name,
            validate=False,
        )

    def _check_faces(self):
        f = self.faces
        repeated = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
        if repeated.any():
            bad = np.flatnonzero(repeated)
            raise DegenerateFaceError(
                f"{bad.size} face(s) repeat a vertex, first at face {bad[0]}",
                face_indices=bad,
            )
        areas = self.face_areas()
        threshold = DEGENERATE_AREA_REL * self.bbox_diagonal ** 2
        small = areas <= threshold
        if small.any():
            bad = np.flatnonzero(small)
            raise DegenerateFaceError(
                f"{bad.size} face(s) with area below {threshold:.3e}, "
                f"first at face {bad[0]}",
                face_indices=bad,
            )

    def _check_manifold(self):
        edges = self.undirected_edges()
        uniq, counts = np.unique(edges, axis=0, return_counts=True)
        over = counts > 2
        if over.any():
            offending = [tuple(int(v) for v in e) for e in uniq[over]]
            shown = ", ".join(str(e) for e in offending[:8])
            more = "" if len(offending) <= 8 else f" (+{len(offending) - 8} more)"
            raise NonManifoldError(
                f"{len(offending)} non-manifold edge(s): {shown}{more}",
                edges=offending,
            )


def _parse_face_token(token, n_vertices, n_uvs, line_number):
    """Split an OBJ face corner token into (vertex index, uv index or None)."""
    parts = token.split("/")
    if len(parts) > 3 or parts[0] == "":
        raise ObjParseError(f"bad face token {token!r}", line_number)
    try:
        vi = int(parts[0])
    except ValueError:
        raise ObjParseError(f"bad vertex index {parts[0]!r}", line_number) from None
    vi = vi - 1 if vi > 0 else n_vertices + vi
    if vi < 0 or vi >= n_vertices:
        raise ObjParseError(f"vertex index {token!r} out of range", line_number)
    ti = None
    if len(parts) >= 2 and parts[1] != "":
        try:
            ti = int(parts[1])
        except ValueError:
            raise ObjParseError(f"bad uv index {parts[1]!r}", line_number) from None
        ti = ti - 1 if ti > 0 else n_uvs + ti
        if ti < 0 or ti >= n_uvs:
            raise ObjParseError(f"uv index {token!r} out of range", line_number)
    return vi, ti


def load_obj(path, landmarks=None, region_labels=None, name=None):
    """Load an ASCII OBJ file into a :class:`TriMesh`.

    Supports ``v``, ``vt``, ``o`` and triangle or quad ``f`` records; quads
    are fan-triangulated deterministically with corner 0 as the apex so
    vertex-indexed sidecar files stay valid.  Vertex order is preserved
    verbatim.  ``vn`` records and material statements are ignored.

    Parameters
    ----------
    path : str or Path
        File to read.
    landmarks, region_labels : optional
        Sidecar data attached to the returned mesh (see
        :func:`load_landmarks` / :func:`load_region_labels`).
    name : str, optional
        Mesh name; defaults to the OBJ ``o`` record or the file stem.

    Raises
    ------
    ObjParseError
        Malformed records, with the offending line number.
    NonManifoldError, DegenerateFaceError, EmptyMeshError
        Invariant violations detected after parsing.
    """
    positions = []
    uvs = []
    face_v = []
    face_t = []
    obj_name = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_number, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            key = tokens[0]
            if key == "v":
                if len(tokens) < 4:
                    raise ObjParseError("vertex needs 3 coordinates", line_number)
                try:
                    positions.append([float(t) for t in tokens[1:4]])
                except ValueError:
                    raise ObjParseError("bad vertex coordinate", line_number) from None
            elif key == "vt":
                if len(tokens) < 3:
                    raise ObjParseError("uv needs 2 coordinates", line_number)
                try:
                    uvs.append([float(t) for t in tokens[1:3]])
                except ValueError:
                    raise ObjParseError("bad uv coordinate", line_number) from None
            elif key == "f":
                corners = tokens[1:]
                if len(corners) < 3 or len(corners) > 4:
                    raise ObjParseError(
                        f"face with {len(corners)} corners (triangles or quads only)",
                        line_number,
                    )
                parsed = [
                    _parse_face_token(t, len(positions), len(uvs), line_number)
                    for t in corners
                ]
                # fan triangulation, corner 0 as apex
                for a, b in zip(parsed[1:-1], parsed[2:]):
                    face_v.append((parsed[0][0], a[0], b[0]))
                    face_t.append((parsed[0][1], a[1], b[1]))
            elif key == "o" and len(tokens) > 1:
                obj_name = " ".join(tokens[1:])
            # vn / vp / mtllib / usemtl / s / g: ignored

    if not positions or not face_v:
        raise EmptyMeshError(f"{path}: no vertices or faces found")

    uv_coords = None
    has_uv = [all(t is not None for t in corner) for corner in face_t]
    if any(has_uv):
        if not all(has_uv):
            first_bad = has_uv.index(False)
            raise ObjParseError(
                f"face {first_bad} has no uv indices while other faces do", None
            )
        uv_arr = np.asarray(uvs, dtype=np.float64)
        uv_coords = uv_arr[np.asarray(face_t, dtype=np.int64)]

    if name is None:
        name = obj_name if obj_name is not None else _stem(path)
    return TriMesh(
        np.asarray(positions, dtype=np.float64),
        np.asarray(face_v, dtype=np.int64),
        uv_coords=uv_coords,
        landmarks=landmarks,
        region_labels=region_labels,
        name=name,
    )


def save_obj(mesh, path):
    """Write a mesh as ASCII OBJ.

    Positions are written with 9 significant digits; UVs with shortest
    exact decimal so they reload bitwise-identical.  Faces use ``v/vt``
    syntax when UVs are present and plain ``v`` syntax otherwise.
    """
    lines = [f"o {mesh.name}"]
    for p in mesh.vertices:
        lines.append(f"v {p[0]:.9g} {p[1]:.9g} {p[2]:.9g}")
    if mesh.uv_coords is not None:
        flat_uv = mesh.uv_coords.reshape(-1, 2)
        for u in flat_uv:
            lines.append(f"vt {float(u[0])!r} {float(u[1])!r}")
        for i, f in enumerate(mesh.faces):
            c = 3 * i + 1
            lines.append(
                f"f {f[0] + 1}/{c} {f[1] + 1}/{c + 1} {f[2] + 1}/{c + 2}"
            )
    else:
        for f in mesh.faces:
            lines.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_landmarks(path):
    """Read a landmark sidecar: one vertex index per line."""
    with open(path, "r", encoding="utf-8") as fh:
        indices = [int(line.strip()) for line in fh if line.strip()]
    return np.asarray(indices, dtype=np.int64)


def save_landmarks(indices, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(str(int(i)) for i in indices) + "\n")


def load_region_labels(path):
    """Read a region sidecar: one integer label per vertex line."""
    with open(path, "r", encoding="utf-8") as fh:
        labels = [int(line.strip()) for line in fh if line.strip()]
    return np.asarray(labels, dtype=np.int64)


def save_region_labels(labels, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(str(int(v)) for v in labels) + "\n")


def _stem(path):
    s = str(path)
    base = s.rsplit("/", 1)[-1]
    return base.rsplit(".", 1)[0] if "." in base else base
