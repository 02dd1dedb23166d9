"""End-to-end deformation optimization loop.

One step: forward Poisson solve, render soft opacity under a camera,
evaluate guidance plus landmark and opacity regularizers, combine with
the configured weights, chain every vertex-space gradient through the
solve adjoint, Adam-update the per-face parameters, then (optionally)
mirror-average parameters across the symmetry correspondence and
re-freeze masked faces.  Runs are bit-reproducible given the seed and
resumable from binary checkpoints.
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .errors import NumericalAbortError
from .field import JacobianField, apply_mask, identity_field
from .objectives import (
    GuidanceContext,
    LossWeights,
    landmark_loss,
    opacity_loss,
    total_loss,
)
from .operators import ReflectionPlane, build_face_symmetry, build_symmetry_map
from .raster import Camera, backward_opacity, render_opacity

_CKPT_MAGIC = b"WJCK"
_CKPT_VERSION = 1

# Documented run-config keys, in file order.  Ranges are degrees for the
# angles; symmetry_axis picks the reflection plane through the source
# centroid.
CONFIG_KEYS = (
    "iterations", "lr_jacobian", "lr_weight", "beta1", "beta2", "eps",
    "lambda_guidance", "lambda_landmark", "lambda_opacity",
    "width", "height", "sigma_px", "fov_deg",
    "azimuth_min", "azimuth_max", "elevation_min", "elevation_max",
    "distance_min", "distance_max", "near", "far",
    "seed", "checkpoint_interval", "render_interval",
    "symmetry", "symmetry_axis", "prompt",
)


@dataclass(frozen=True)
class OptimConfig:
    iterations: int = 500
    lr_jacobian: float = 5e-3
    lr_weight: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weights: LossWeights = dataclass_field(default_factory=LossWeights)
    width: int = 256
    height: int = 256
    sigma_px: float = 2.0
    fov_deg: float = 40.0
    azimuth_range: tuple = (0.0, 360.0)
    elevation_range: tuple = (-15.0, 30.0)
    distance_range: tuple = (2.5, 3.5)
    near: float = 0.05
    far: float = 100.0
    seed: int = 0
    checkpoint_interval: int = 100
    render_interval: int = 100
    symmetry: bool = False
    symmetry_axis: str = "x"
    prompt: str = ""

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.lr_jacobian <= 0 or self.lr_weight <= 0:
            raise ValueError("learning rates must be positive")
        for b in (self.beta1, self.beta2):
            if not 0.0 <= b < 1.0:
                raise ValueError("Adam betas must be in [0, 1)")
        for name in ("azimuth_range", "elevation_range", "distance_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} is empty: ({lo}, {hi})")
        if self.symmetry_axis not in ("x", "y", "z"):
            raise ValueError("symmetry_axis must be one of x, y, z")
        if self.width < 1 or self.height < 1 or self.sigma_px <= 0:
            raise ValueError("invalid render settings")


def config_to_flat(config):
    """OptimConfig -> flat key/value dict using the documented keys."""
    w = config.weights
    return {
        "iterations": config.iterations,
        "lr_jacobian": config.lr_jacobian,
        "lr_weight": config.lr_weight,
        "beta1": config.beta1,
        "beta2": config.beta2,
        "eps": config.eps,
        "lambda_guidance": w.guidance,
        "lambda_landmark": w.landmark,
        "lambda_opacity": w.opacity,
        "width": config.width,
        "height": config.height,
        "sigma_px": config.sigma_px,
        "fov_deg": config.fov_deg,
        "azimuth_min": config.azimuth_range[0],
        "azimuth_max": config.azimuth_range[1],
        "elevation_min": config.elevation_range[0],
        "elevation_max": config.elevation_range[1],
        "distance_min": config.distance_range[0],
        "distance_max": config.distance_range[1],
        "near": config.near,
        "far": config.far,
        "seed": config.seed,
        "checkpoint_interval": config.checkpoint_interval,
        "render_interval": config.render_interval,
        "symmetry": "on" if config.symmetry else "off",
        "symmetry_axis": config.symmetry_axis,
        "prompt": config.prompt,
    }


def config_from_flat(values):
    """Build an OptimConfig from a flat key/value mapping (strings allowed)."""
    def get(key, cast, default):
        if key not in values:
            return default
        return cast(values[key])

    base = OptimConfig()
    return OptimConfig(
        iterations=get("iterations", int, base.iterations),
        lr_jacobian=get("lr_jacobian", float, base.lr_jacobian),
        lr_weight=get("lr_weight", float, base.lr_weight),
        beta1=get("beta1", float, base.beta1),
        beta2=get("beta2", float, base.beta2),
        eps=get("eps", float, base.eps),
        weights=LossWeights(
            guidance=get("lambda_guidance", float, 1.0),
            landmark=get("lambda_landmark", float, 200.0),
            opacity=get("lambda_opacity", float, 250.0),
        ),
        width=get("width", int, base.width),
        height=get("height", int, base.height),
        sigma_px=get("sigma_px", float, base.sigma_px),
        fov_deg=get("fov_deg", float, base.fov_deg),
        azimuth_range=(
            get("azimuth_min", float, base.azimuth_range[0]),
            get("azimuth_max", float, base.azimuth_range[1]),
        ),
        elevation_range=(
            get("elevation_min", float, base.elevation_range[0]),
            get("elevation_max", float, base.elevation_range[1]),
        ),
        distance_range=(
            get("distance_min", float, base.distance_range[0]),
            get("distance_max", float, base.distance_range[1]),
        ),
        near=get("near", float, base.near),
        far=get("far", float, base.far),
        seed=get("seed", int, base.seed),
        checkpoint_interval=get("checkpoint_interval", int, base.checkpoint_interval),
        render_interval=get("render_interval", int, base.render_interval),
        symmetry=get("symmetry", lambda s: str(s).lower() in ("on", "true", "1"),
                     base.symmetry),
        symmetry_axis=get("symmetry_axis", str, base.symmetry_axis),
        prompt=get("prompt", str, base.prompt),
    )


def save_config_file(config, path):
    """Write the flat ``key = value`` run-config file."""
    flat = config_to_flat(config)
    lines = [f"{key} = {flat[key]}" for key in CONFIG_KEYS]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_config_file(path):
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_number, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{line_number}: expected 'key = value'")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in CONFIG_KEYS:
                raise ValueError(f"{path}:{line_number}: unknown key {key!r}")
            values[key] = value.strip()
    return config_from_flat(values)


def config_hash(config):
    """Stable hash of the full configuration (ties checkpoints to configs)."""
    flat = config_to_flat(config)
    canonical = json.dumps(
        {k: flat[k] for k in CONFIG_KEYS}, sort_keys=True, separators=(",", ":"),
        default=str,
    )
    return hashlib.sha256(canonical.encode()).hexdigest()


@dataclass
class RunState:
    """Mutable state owned by the optimization loop."""

    field: JacobianField
    m_jac: np.ndarray
    v_jac: np.ndarray
    m_w: np.ndarray
    v_w: np.ndarray
    adam_t: int
    iteration: int
    loss_history: list
    rng: np.random.Generator

    @classmethod
    def fresh(cls, n_faces, seed, initial_field=None):
        fld = initial_field.copy() if initial_field is not None else identity_field(n_faces)
        return cls(
            field=fld,
            m_jac=np.zeros((n_faces, 3, 3)),
            v_jac=np.zeros((n_faces, 3, 3)),
            m_w=np.zeros(n_faces),
            v_w=np.zeros(n_faces),
            adam_t=0,
            iteration=0,
            loss_history=[],
            rng=np.random.default_rng(seed),
        )


def sample_camera(config, rng, target):
    """Uniformly sampled orbit camera; deterministic under a fixed seed.

    Draw order is azimuth, elevation, distance, each uniform over its
    configured range; the camera looks at ``target``.
    """
    azimuth = rng.uniform(*config.azimuth_range)
    elevation = rng.uniform(*config.elevation_range)
    distance = rng.uniform(*config.distance_range)
    return Camera.orbit(
        target=target,
        azimuth_deg=azimuth,
        elevation_deg=elevation,
        distance=distance,
        fov_deg=config.fov_deg,
        width=config.width,
        height=config.height,
        near=config.near,
        far=config.far,
    )


def adam_update(params, grads, m, v, lr, beta1, beta2, eps, t):
    """Textbook Adam with bias correction; returns (params, m, v)."""
    if params.shape != grads.shape or m.shape != params.shape or v.shape != params.shape:
        raise ValueError("adam_update: shape mismatch")
    if t < 1:
        raise ValueError("adam_update: step index must be >= 1")
    m_new = beta1 * m + (1.0 - beta1) * grads
    v_new = beta2 * v + (1.0 - beta2) * grads * grads
    m_hat = m_new / (1.0 - beta1 ** t)
    v_hat = v_new / (1.0 - beta2 ** t)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps), m_new, v_new


def _symmetrize_field(fld, face_pairs, self_mirrored, reflection):
    """Mirror-average (J, w) across the face correspondence."""
    jac = fld.jacobians.copy()
    w = fld.weights.copy()
    r = reflection
    if face_pairs.size:
        i = face_pairs[:, 0]
        j = face_pairs[:, 1]
        mirrored_j = np.einsum("ab,nbc,cd->nad", r, jac[j], r)
        avg = 0.5 * (jac[i] + mirrored_j)
        jac[i] = avg
        jac[j] = np.einsum("ab,nbc,cd->nad", r, avg, r)
        w_avg = 0.5 * (w[i] + w[j])
        w[i] = w_avg
        w[j] = w_avg
    if self_mirrored.size:
        s = self_mirrored
        jac[s] = 0.5 * (jac[s] + np.einsum("ab,nbc,cd->nad", r, jac[s], r))
    return JacobianField(jac, w)


def step(state, system, source, guidance, config, *, face_mask=None,
         base_field=None, face_symmetry=None, opacity_cache=None):
    """Advance the optimization by one iteration (mutates and returns state)."""
    weights = config.weights
    fld = state.field
    vertices = system.forward_solve(fld)

    if guidance is not None and guidance.cameras:
        camera = guidance.cameras[state.iteration % len(guidance.cameras)]
    else:
        camera = sample_camera(config, state.rng, system.source_centroid)

    needs_opacity = weights.opacity > 0 or (
        guidance is not None and getattr(guidance, "needs_opacity", True)
    )
    deformed_opacity = None
    if needs_opacity:
        deformed_opacity = render_opacity(
            vertices, source.faces, camera, config.sigma_px
        )

    guidance_result = None
    if guidance is not None:
        ctx = GuidanceContext(
            deformed_vertices=vertices,
            source=source,
            camera=camera,
            opacity=deformed_opacity,
            iteration=state.iteration,
            prompt=config.prompt,
        )
        guidance_result = guidance(ctx)

    lmk_value, lmk_grad = 0.0, None
    if weights.landmark > 0 and source.landmarks is not None and len(source.landmarks):
        lmk_value, lmk_grad = landmark_loss(source, vertices)

    op_value, dop = 0.0, None
    if weights.opacity > 0:
        if opacity_cache is not None and camera in opacity_cache:
            source_opacity = opacity_cache[camera]
        else:
            source_opacity = render_opacity(
                source.vertices, source.faces, camera, config.sigma_px
            )
            if opacity_cache is not None:
                opacity_cache[camera] = source_opacity
        op_value, dop = opacity_loss(source_opacity, deformed_opacity)

    loss = total_loss(weights, guidance_result, lmk_value, op_value)
    if not np.isfinite(loss):
        raise NumericalAbortError(
            f"non-finite loss at iteration {state.iteration}",
            iteration=state.iteration,
        )

    dvertices = np.zeros_like(vertices)
    if guidance_result is not None and guidance_result.vertex_grad is not None:
        dvertices += weights.guidance * guidance_result.vertex_grad
    if lmk_grad is not None:
        dvertices += weights.landmark * lmk_grad
    dopacity = None
    if guidance_result is not None and guidance_result.opacity_grad is not None:
        dopacity = weights.guidance * guidance_result.opacity_grad
    if dop is not None:
        dopacity = weights.opacity * dop if dopacity is None else dopacity + weights.opacity * dop
    if dopacity is not None and np.any(dopacity):
        dvertices += backward_opacity(
            vertices, source.faces, camera, config.sigma_px, dopacity,
            opacity=deformed_opacity,
        )

    grad = system.backward(fld, dvertices)
    d_jac = grad.d_jacobians
    d_w = grad.d_weights
    if face_mask is not None:
        frozen = ~np.asarray(face_mask, dtype=bool)
        d_jac = d_jac.copy()
        d_w = d_w.copy()
        d_jac[frozen] = 0.0
        d_w[frozen] = 0.0

    t = state.adam_t + 1
    new_jac, state.m_jac, state.v_jac = adam_update(
        fld.jacobians, d_jac, state.m_jac, state.v_jac,
        config.lr_jacobian, config.beta1, config.beta2, config.eps, t,
    )
    new_w, state.m_w, state.v_w = adam_update(
        fld.weights, d_w, state.m_w, state.v_w,
        config.lr_weight, config.beta1, config.beta2, config.eps, t,
    )
    new_field = JacobianField(new_jac, new_w)

    if face_symmetry is not None:
        pairs, self_mirrored, reflection = face_symmetry
        new_field = _symmetrize_field(new_field, pairs, self_mirrored, reflection)
    if face_mask is not None and base_field is not None:
        new_field = apply_mask(new_field, base_field, face_mask)

    state.field = new_field
    state.adam_t = t
    state.iteration += 1
    guidance_value = guidance_result.loss if guidance_result is not None else 0.0
    state.loss_history.append((guidance_value, lmk_value, op_value, float(loss)))
    return state


def save_checkpoint(path, config, state):
    """Binary checkpoint: config hash, field, Adam moments, RNG, history."""
    rng_json = json.dumps(state.rng.bit_generator.state).encode()
    history = np.asarray(state.loss_history, dtype="<f8").reshape(-1, 4)
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", _CKPT_VERSION))
        fh.write(config_hash(config).encode("ascii"))          # 64 hex chars
        fh.write(struct.pack("<QQQ", state.iteration, state.adam_t,
                             state.field.n_faces))
        for arr in (state.field.jacobians, state.field.weights,
                    state.m_jac, state.v_jac, state.m_w, state.v_w):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        fh.write(struct.pack("<Q", len(rng_json)))
        fh.write(rng_json)
        fh.write(struct.pack("<Q", history.shape[0]))
        fh.write(history.tobytes())


def load_checkpoint(path, config=None):
    """Restore a RunState; verifies the config hash when a config is given."""
    with open(path, "rb") as fh:
        if fh.read(4) != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a run checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        stored_hash = fh.read(64).decode("ascii")
        if config is not None and stored_hash != config_hash(config):
            raise ValueError(
                f"{path}: checkpoint was written with a different config"
            )
        iteration, adam_t, m = struct.unpack("<QQQ", fh.read(24))

        def read_array(shape):
            count = int(np.prod(shape))
            return np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape).copy()

        jac = read_array((m, 3, 3))
        w = read_array((m,))
        m_jac = read_array((m, 3, 3))
        v_jac = read_array((m, 3, 3))
        m_w = read_array((m,))
        v_w = read_array((m,))
        (rng_len,) = struct.unpack("<Q", fh.read(8))
        rng_state = json.loads(fh.read(rng_len).decode())
        (hist_len,) = struct.unpack("<Q", fh.read(8))
        history = np.frombuffer(fh.read(32 * hist_len), dtype="<f8").reshape(-1, 4)

    rng = np.random.default_rng()
    rng.bit_generator.state = rng_state
    state = RunState(
        field=JacobianField(jac, w),
        m_jac=m_jac,
        v_jac=v_jac,
        m_w=m_w,
        v_w=v_w,
        adam_t=adam_t,
        iteration=iteration,
        loss_history=[tuple(row) for row in history],
        rng=rng,
    )
    return state, stored_hash


def write_loss_csv(history, path):
    """Loss history as CSV: iteration, guidance, lmk, op, total."""
    lines = ["iteration,guidance,lmk,op,total"]
    for i, (g, lmk, op, tot) in enumerate(history):
        lines.append(f"{i},{g!r},{lmk!r},{op!r},{tot!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def run(source, guidance, config, *, system=None, out_dir=None, resume=None,
        face_mask=None, initial_field=None, step_callback=None):
    """Execute the full optimization.

    Parameters
    ----------
    source : TriMesh
        Template mesh; connectivity, UVs, and landmark indices are
        preserved verbatim on the output.
    guidance : Guidance or None
        Objective supplying the per-step gradient signal.
    config : OptimConfig
    system : PoissonSystem, optional
        Prebuilt system (built from ``source`` otherwise).
    out_dir : path, optional
        Directory receiving checkpoints (every ``checkpoint_interval``
        iterations) and the loss CSV.
    resume : path, optional
        Checkpoint to continue from; must match the config.
    face_mask : (m,) bool array, optional
        Faces allowed to change; the rest keep their initial parameters.
    initial_field : JacobianField, optional
        Starting field (defaults to the identity field).

    Returns
    -------
    (deformed TriMesh, final JacobianField, loss history list)
    """
    from . import poisson

    if out_dir is not None:
        import os

        os.makedirs(out_dir, exist_ok=True)
    if system is None:
        system = poisson.assemble(source)
    base_field = initial_field.copy() if initial_field is not None else identity_field(source.n_faces)
    if face_mask is not None:
        face_mask = np.asarray(face_mask, dtype=bool)
        if face_mask.shape != (source.n_faces,):
            raise ValueError("face_mask must have one entry per face")

    if resume is not None:
        state, _ = load_checkpoint(resume, config)
    else:
        state = RunState.fresh(source.n_faces, config.seed, initial_field=base_field)

    face_symmetry = None
    if config.symmetry:
        axis_index = "xyz".index(config.symmetry_axis)
        plane = ReflectionPlane.axis(
            config.symmetry_axis, offset=float(source.centroid[axis_index])
        )
        sym_map = build_symmetry_map(source, plane)
        pairs, self_mirrored = build_face_symmetry(source, sym_map)
        face_symmetry = (pairs, self_mirrored, plane.reflection_matrix())

    opacity_cache = {}
    while state.iteration < config.iterations:
        step(
            state, system, source, guidance, config,
            face_mask=face_mask, base_field=base_field,
            face_symmetry=face_symmetry, opacity_cache=opacity_cache,
        )
        if out_dir is not None and config.checkpoint_interval > 0:
            if state.iteration % config.checkpoint_interval == 0 or (
                state.iteration == config.iterations
            ):
                save_checkpoint(
                    f"{out_dir}/checkpoint_{state.iteration:06d}.ckpt",
                    config, state,
                )
        if step_callback is not None:
            step_callback(state, system)

    if out_dir is not None:
        write_loss_csv(state.loss_history, f"{out_dir}/loss_history.csv")

    final_vertices = system.forward_solve(state.field)
    deformed = source.with_vertices(final_vertices)
    return deformed, state.field, list(state.loss_history)
