"""Area-weighted Poisson solve mapping per-face target gradients to vertices.

Vertex positions are recovered as the least-squares minimizer of

    sum_i area_i * || grad_i(V) - w_i J_i ||_F^2

by solving the normal equations L V = G^T M T with L = G^T M G the
cotangent Laplacian.  L has the constant vector in its null space
(translations are unconstrained), so one vertex is pinned during the solve
and the result is translated to restore the source centroid.  The adjoint
reuses the same factorization, giving exact gradients with respect to
every J_i and w_i from a single extra solve.
"""

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import DisconnectedMeshError
from .field import FieldGradient
from .operators import build_gradient_operator
from .sparsela import CgSolver, SparseMatrix, cholesky, multiply


class PoissonSystem:
    """Prebuilt operators and factorization for one mesh's Poisson solves.

    Immutable after construction; forward_solve and backward are pure
    functions of their inputs and may be called concurrently.
    """

    def __init__(self, gradient_op, laplacian, factor, pin_index,
                 source_centroid, n_vertices):
        self.gradient_op = gradient_op
        self.laplacian = laplacian  # unpinned (n, n); null space = constants
        self.factor = factor        # factorization of the pinned submatrix
        self.pin_index = pin_index
        self.source_centroid = source_centroid
        self.n_vertices = n_vertices
        self._free = np.concatenate(
            [np.arange(pin_index), np.arange(pin_index + 1, n_vertices)]
        )

    @property
    def n_faces(self):
        return self.gradient_op.n_faces

    @property
    def mass(self):
        return self.gradient_op.mass

    def _solve_pinned(self, rhs):
        """Solve L x = rhs with the pinned vertex held at zero."""
        x = np.zeros_like(rhs)
        x[self._free] = self.factor.solve(rhs[self._free])
        return x

    def forward_solve(self, field):
        """Vertex positions (n, 3) minimizing the weighted-target energy.

        The solution is translated so its centroid coincides with the
        source centroid (the energy determines positions only up to a
        global translation).
        """
        if field.n_faces != self.n_faces:
            raise ValueError(
                f"field has {field.n_faces} faces, system has {self.n_faces}"
            )
        targets = field.targets()
        if not np.all(np.isfinite(targets)):
            raise ValueError("field produced non-finite targets")
        rhs = self.gradient_op.matrix.T @ (self.mass[:, None] * targets)
        v = self._solve_pinned(rhs)
        return v + (self.source_centroid - v.mean(axis=0))

    def backward(self, field, dloss_dv):
        """Exact adjoint of forward_solve.

        Given dLoss/dV, returns the gradient with respect to every J_i and
        w_i.  One solve with the reused factorization: with
        u = L^-1 (dLoss/dV) (after the centroid-anchoring chain, which
        subtracts the per-column mean), the target-space gradient is
        B = M G u, and per face dJ_i = w_i B_i^T, dw_i = <J_i, B_i^T>.
        """
        dloss_dv = np.asarray(dloss_dv, dtype=np.float64)
        if dloss_dv.shape != (self.n_vertices, 3):
            raise ValueError(
                f"dloss_dv shape {dloss_dv.shape}, expected {(self.n_vertices, 3)}"
            )
        if field.n_faces != self.n_faces:
            raise ValueError(
                f"field has {field.n_faces} faces, system has {self.n_faces}"
            )
        g = dloss_dv - dloss_dv.mean(axis=0)
        u = self._solve_pinned(g)
        grad_t = self.mass[:, None] * (self.gradient_op.matrix @ u)
        blocks = grad_t.reshape(-1, 3, 3)          # block i = (dLoss/dT)_i
        bt = blocks.transpose(0, 2, 1)
        d_jac = field.weights[:, None, None] * bt
        d_w = np.einsum("ijk,ijk->i", field.jacobians, bt)
        return FieldGradient(d_jac, d_w)

    def residual(self, field, vertices):
        """Normal-equation residual G^T M (G V - T); ~0 at the optimum."""
        gv = self.gradient_op.matrix @ np.asarray(vertices, dtype=np.float64)
        return self.gradient_op.matrix.T @ (self.mass[:, None] * (gv - field.targets()))


def assemble(mesh, pin_index=0, solver="direct"):
    """Build the :class:`PoissonSystem` for a mesh.

    Parameters
    ----------
    mesh : TriMesh
        Manifold, single-component triangle mesh.
    pin_index : int
        Vertex whose row/column is removed to fix the translation gauge.
    solver : {"direct", "cg"}
        Direct sparse factorization (default, amortized over thousands of
        solves) or conjugate-gradient fallback for very large meshes.

    Raises
    ------
    DisconnectedMeshError
        If the mesh has several connected components (each extra component
        would need its own pin).
    NotSpdError
        If the pinned Laplacian fails to factorize.
    """
    grad_op = build_gradient_operator(mesh)
    mass = grad_op.mass
    weighted = SparseMatrix.diagonal(mass) @ grad_op.matrix
    laplacian = multiply(grad_op.matrix.T, weighted)

    n_components, _ = connected_components(laplacian.scipy(), directed=False)
    if n_components > 1:
        raise DisconnectedMeshError(
            f"mesh has {n_components} connected components; a single pin "
            "leaves the system rank-deficient",
            n_components=n_components,
        )

    n = mesh.n_vertices
    if not 0 <= pin_index < n:
        raise ValueError(f"pin index {pin_index} out of range")
    keep = np.concatenate([np.arange(pin_index), np.arange(pin_index + 1, n)])
    reduced = laplacian.submatrix(keep, keep)
    if solver == "direct":
        factor = cholesky(reduced)
    elif solver == "cg":
        factor = CgSolver(reduced)
    else:
        raise ValueError(f"unknown solver {solver!r}")
    return PoissonSystem(
        gradient_op=grad_op,
        laplacian=laplacian,
        factor=factor,
        pin_index=pin_index,
        source_centroid=mesh.centroid.copy(),
        n_vertices=n,
    )
