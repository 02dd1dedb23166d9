"""Scikit-learn style estimator facade over the optimization loop.

``fit`` learns the per-face deformation parameters for a template mesh
under a guidance objective; ``transform`` applies the learned field to a
mesh with the same connectivity (the template itself, or a variant such
as another blend shape).  Parameters follow the sklearn convention so the
estimator composes with ``get_params`` / ``set_params`` / ``clone``.
"""

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .mesh import TriMesh
from .objectives import LossWeights
from .optimizer import OptimConfig, run
from .poisson import assemble


class WeightedJacobianDeformer(BaseEstimator, TransformerMixin):
    """Learn a weighted per-face Jacobian field that deforms a template mesh.

    Parameters
    ----------
    guidance : Guidance or None
        Objective supplying the gradient signal (built-ins live in
        :mod:`warpfield.objectives`; remote backends in
        :mod:`warpfield.guidance_client`).
    iterations : int
        Optimization steps.
    lr_jacobian, lr_weight : float
        Adam learning rates for the 3x3 matrices and the scalar weights.
    lambda_guidance, lambda_landmark, lambda_opacity : float
        Loss combination weights.
    resolution : int
        Render size for the opacity regularizer.
    sigma_px : float
        Rasterizer boundary softness in pixels.
    symmetry : bool
        Mirror-average parameters across the sagittal plane each step.
    face_mask : (m,) bool array or None
        Restrict optimization to these faces.
    seed : int
        RNG seed; runs are bit-reproducible.
    """

    def __init__(self, guidance=None, iterations=100, lr_jacobian=5e-3,
                 lr_weight=1e-2, lambda_guidance=1.0, lambda_landmark=200.0,
                 lambda_opacity=250.0, resolution=128, sigma_px=2.0,
                 symmetry=False, face_mask=None, seed=0):
        self.guidance = guidance
        self.iterations = iterations
        self.lr_jacobian = lr_jacobian
        self.lr_weight = lr_weight
        self.lambda_guidance = lambda_guidance
        self.lambda_landmark = lambda_landmark
        self.lambda_opacity = lambda_opacity
        self.resolution = resolution
        self.sigma_px = sigma_px
        self.symmetry = symmetry
        self.face_mask = face_mask
        self.seed = seed

    def _config(self):
        return OptimConfig(
            iterations=self.iterations,
            lr_jacobian=self.lr_jacobian,
            lr_weight=self.lr_weight,
            weights=LossWeights(
                guidance=self.lambda_guidance,
                landmark=self.lambda_landmark,
                opacity=self.lambda_opacity,
            ),
            width=self.resolution,
            height=self.resolution,
            sigma_px=self.sigma_px,
            symmetry=self.symmetry,
            seed=self.seed,
        )

    def fit(self, X, y=None):
        """Optimize the deformation field for the template mesh ``X``."""
        if not isinstance(X, TriMesh):
            raise TypeError("X must be a TriMesh")
        deformed, field, history = run(X, self.guidance, self._config(),
                                       face_mask=self.face_mask)
        self.field_ = field
        self.loss_history_ = history
        self.n_faces_ = X.n_faces
        self.deformed_ = deformed
        return self

    def transform(self, X):
        """Apply the learned field to a mesh with matching connectivity."""
        if not hasattr(self, "field_"):
            raise NotFittedError("call fit before transform")
        if not isinstance(X, TriMesh):
            raise TypeError("X must be a TriMesh")
        if X.n_faces != self.n_faces_:
            raise ValueError(
                f"mesh has {X.n_faces} faces, fitted field has {self.n_faces_}"
            )
        system = assemble(X)
        return X.with_vertices(system.forward_solve(self.field_))

    def fit_transform(self, X, y=None):
        return self.fit(X, y).deformed_
