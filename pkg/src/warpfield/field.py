"""Per-face deformation parameters: a 3x3 matrix and a scalar weight per face.

The field is the optimization variable.  The target gradient prescribed on
face i is ``weights[i] * jacobians[i]``; the identity field (J = I, w = 1)
reproduces the source mesh exactly under the forward solve.
"""

import struct
from dataclasses import dataclass

import numpy as np

_MAGIC = b"WJFD"
_VERSION = 1


@dataclass
class JacobianField:
    """Value type holding per-face matrices (m, 3, 3) and weights (m,)."""

    jacobians: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.jacobians = np.ascontiguousarray(self.jacobians, dtype=np.float64)
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        m = self.weights.shape[0]
        if self.jacobians.shape != (m, 3, 3):
            raise ValueError(
                f"jacobians shape {self.jacobians.shape} does not match "
                f"{m} weights"
            )
        if not (np.all(np.isfinite(self.jacobians)) and np.all(np.isfinite(self.weights))):
            raise ValueError("field contains non-finite entries")

    @property
    def n_faces(self):
        return self.weights.shape[0]

    def copy(self):
        return JacobianField(self.jacobians.copy(), self.weights.copy())

    def targets(self):
        """Stacked (3m, 3) per-face target blocks, block i = (w_i J_i)^T."""
        scaled = self.weights[:, None, None] * self.jacobians
        return scaled.transpose(0, 2, 1).reshape(-1, 3)


@dataclass
class FieldGradient:
    """Gradient with respect to a field's jacobians and weights."""

    d_jacobians: np.ndarray
    d_weights: np.ndarray

    def __post_init__(self):
        self.d_jacobians = np.ascontiguousarray(self.d_jacobians, dtype=np.float64)
        self.d_weights = np.ascontiguousarray(self.d_weights, dtype=np.float64)
        m = self.d_weights.shape[0]
        if self.d_jacobians.shape != (m, 3, 3):
            raise ValueError("gradient shapes do not match")

    @property
    def n_faces(self):
        return self.d_weights.shape[0]


def identity_field(mesh_or_n_faces):
    """Field with J_i = I and w_i = 1 on every face (the identity mapping)."""
    m = getattr(mesh_or_n_faces, "n_faces", mesh_or_n_faces)
    jac = np.broadcast_to(np.eye(3), (m, 3, 3)).copy()
    return JacobianField(jac, np.ones(m))


def interpolate(field_a, field_b, t):
    """Elementwise (1 - t) * a + t * b on both jacobians and weights."""
    if field_a.n_faces != field_b.n_faces:
        raise ValueError(
            f"field lengths differ: {field_a.n_faces} vs {field_b.n_faces}"
        )
    t = float(t)
    return JacobianField(
        (1.0 - t) * field_a.jacobians + t * field_b.jacobians,
        (1.0 - t) * field_a.weights + t * field_b.weights,
    )


def apply_mask(field, base, face_mask):
    """Keep ``field`` on masked-in faces and ``base`` elsewhere.

    Used to freeze regions during local editing: faces where the mask is
    False carry the base field's (J, w) unchanged.
    """
    mask = np.asarray(face_mask, dtype=bool)
    if field.n_faces != base.n_faces or mask.shape != (field.n_faces,):
        raise ValueError("field, base, and mask lengths must match")
    jac = np.where(mask[:, None, None], field.jacobians, base.jacobians)
    w = np.where(mask, field.weights, base.weights)
    return JacobianField(jac, w)


def save_field(field, path):
    """Write a field checkpoint; round-trips bit-exactly via little-endian f64."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQ", _VERSION, field.n_faces))
        fh.write(field.jacobians.astype("<f8").tobytes())
        fh.write(field.weights.astype("<f8").tobytes())


def load_field(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a field checkpoint (magic {magic!r})")
        version, m = struct.unpack("<IQ", fh.read(12))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported field version {version}")
        jac = np.frombuffer(fh.read(8 * 9 * m), dtype="<f8").reshape(m, 3, 3)
        w = np.frombuffer(fh.read(8 * m), dtype="<f8")
        if w.shape[0] != m:
            raise ValueError(f"{path}: truncated field file")
    return JacobianField(jac.copy(), w.copy())
