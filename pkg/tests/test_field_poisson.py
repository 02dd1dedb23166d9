import numpy as np
import pytest

from warpfield.errors import DisconnectedMeshError
from warpfield.field import (
    JacobianField,
    apply_mask,
    identity_field,
    interpolate,
    load_field,
    save_field,
)
from warpfield.mesh import TriMesh
from warpfield.poisson import assemble


def constant_field(n_faces, matrix, weight=1.0):
    jac = np.broadcast_to(np.asarray(matrix, dtype=np.float64), (n_faces, 3, 3)).copy()
    return JacobianField(jac, np.full(n_faces, float(weight)))


def finite_difference_gradient(system, fld, dloss_dv, entries, h=1e-5):
    """Central finite differences of loss = <dloss_dv, V(field)> (linear loss)."""
    out = {}
    for kind, face, idx in entries:
        fp = JacobianField(fld.jacobians.copy(), fld.weights.copy())
        fm = JacobianField(fld.jacobians.copy(), fld.weights.copy())
        if kind == "J":
            r, c = idx
            fp.jacobians[face, r, c] += h
            fm.jacobians[face, r, c] -= h
        else:
            fp.weights[face] += h
            fm.weights[face] -= h
        lp = float((system.forward_solve(fp) * dloss_dv).sum())
        lm = float((system.forward_solve(fm) * dloss_dv).sum())
        out[(kind, face, idx)] = (lp - lm) / (2.0 * h)
    return out


class TestIdentityField:
    def test_single_face(self, triangle_mesh):
        fld = identity_field(triangle_mesh)
        assert fld.n_faces == 1
        np.testing.assert_array_equal(fld.jacobians[0], np.eye(3))
        assert fld.weights[0] == 1.0

    def test_length_matches_face_count(self, icosphere2):
        assert identity_field(icosphere2).n_faces == icosphere2.n_faces

    def test_identity_mapping(self, icosphere2):
        system = assemble(icosphere2)
        v = system.forward_solve(identity_field(icosphere2))
        assert np.abs(v - icosphere2.vertices).max() <= 1e-8


class TestAssemble:
    def test_single_triangle_reduces_to_spd_2x2(self, triangle_mesh):
        system = assemble(triangle_mesh)
        assert system.factor.n == 2
        # pinned Laplacian for the right triangle: diag(1/2, 1/2)
        reduced = system.laplacian.submatrix([1, 2], [1, 2]).toarray()
        np.testing.assert_allclose(reduced, 0.5 * np.eye(2), atol=1e-14)

    def test_disconnected_reports_component_count(self):
        verts = np.array(
            [[0, 0, 0], [1, 0, 0], [0, 1, 0],
             [5, 0, 0], [6, 0, 0], [5, 1, 0]], dtype=float
        )
        faces = np.array([[0, 1, 2], [3, 4, 5]])
        mesh = TriMesh(verts, faces)
        with pytest.raises(DisconnectedMeshError) as excinfo:
            assemble(mesh)
        assert excinfo.value.n_components == 2

    def test_unpinned_rowsums_vanish(self, icosphere3):
        system = assemble(icosphere3)
        lap = system.laplacian.scipy()
        rowsums = np.asarray(lap @ np.ones(icosphere3.n_vertices))
        assert np.abs(rowsums).max() <= 1e-10

    def test_laplacian_symmetric(self, corpus):
        for mesh in corpus:
            lap = assemble(mesh).laplacian.scipy()
            asym = abs(lap - lap.T)
            assert (asym.max() if asym.nnz else 0.0) <= 1e-12


class TestForwardSolve:
    def test_identity_reproduces_corpus(self, corpus):
        for mesh in corpus:
            system = assemble(mesh)
            v = system.forward_solve(identity_field(mesh))
            assert np.abs(v - mesh.vertices).max() <= 1e-8, mesh.name

    def test_constant_affine_field(self, icosphere3, rng):
        a = np.eye(3) + 0.3 * rng.normal(size=(3, 3))
        system = assemble(icosphere3)
        v = system.forward_solve(constant_field(icosphere3.n_faces, a))
        expected = icosphere3.vertices @ a.T
        expected += v.mean(axis=0) - expected.mean(axis=0)
        assert np.abs(v - expected).max() <= 1e-6

    def test_uniform_weight_scales_about_centroid(self, icosphere2):
        s = 2.5
        system = assemble(icosphere2)
        v = system.forward_solve(constant_field(icosphere2.n_faces, np.eye(3), s))
        expected = (icosphere2.vertices - icosphere2.centroid) * s + icosphere2.centroid
        assert np.abs(v - expected).max() <= 1e-6

    def test_field_length_mismatch(self, icosphere2):
        system = assemble(icosphere2)
        with pytest.raises(ValueError):
            system.forward_solve(identity_field(icosphere2.n_faces + 1))

    def test_solve_linearity(self, icosphere2, rng):
        system = assemble(icosphere2)
        m = icosphere2.n_faces
        j1 = rng.normal(size=(m, 3, 3))
        j2 = rng.normal(size=(m, 3, 3))
        f1 = JacobianField(j1, np.ones(m))
        f2 = JacobianField(j2, np.ones(m))
        fsum = JacobianField(j1 + j2, np.ones(m))
        fzero = JacobianField(np.zeros((m, 3, 3)), np.ones(m))
        v = system.forward_solve
        lhs = v(fsum)
        rhs = v(f1) + v(f2) - v(fzero)
        assert np.abs(lhs - rhs).max() <= 1e-8

    def test_zero_target_collapses_to_centroid(self, icosphere2):
        system = assemble(icosphere2)
        m = icosphere2.n_faces
        v = system.forward_solve(JacobianField(np.zeros((m, 3, 3)), np.ones(m)))
        np.testing.assert_allclose(v, np.tile(icosphere2.centroid, (icosphere2.n_vertices, 1)),
                                   atol=1e-9)

    def test_weight_scaling_property(self, icosphere2, rng):
        system = assemble(icosphere2)
        m = icosphere2.n_faces
        jac = np.eye(3) + 0.2 * rng.normal(size=(m, 3, 3))
        w = rng.uniform(0.5, 1.5, size=m)
        s = 3.0
        v1 = system.forward_solve(JacobianField(jac, w))
        v2 = system.forward_solve(JacobianField(jac, s * w))
        c = icosphere2.centroid
        assert np.abs((v2 - c) - s * (v1 - c)).max() <= 1e-8

    def test_poisson_optimality(self, corpus, rng):
        for mesh in corpus:
            system = assemble(mesh)
            fld = JacobianField(
                np.eye(3) + 0.2 * rng.normal(size=(mesh.n_faces, 3, 3)),
                rng.uniform(0.5, 2.0, size=mesh.n_faces),
            )
            v = system.forward_solve(fld)
            res = system.residual(fld, v)
            rhs = system.gradient_op.matrix.T @ (
                system.mass[:, None] * fld.targets()
            )
            scale = max(np.abs(rhs).max(), 1e-30)
            assert np.abs(res).max() <= 1e-8 * scale, mesh.name


class TestBackward:
    def test_zero_gradient(self, icosphere2):
        system = assemble(icosphere2)
        fld = identity_field(icosphere2)
        grad = system.backward(fld, np.zeros((icosphere2.n_vertices, 3)))
        assert np.abs(grad.d_jacobians).max() == 0.0
        assert np.abs(grad.d_weights).max() == 0.0

    def test_single_triangle_all_parameters_vs_fd(self, triangle_mesh, rng):
        system = assemble(triangle_mesh)
        fld = JacobianField(
            (np.eye(3) + 0.1 * rng.normal(size=(1, 3, 3))),
            np.array([1.3]),
        )
        dloss_dv = rng.normal(size=(3, 3))
        grad = system.backward(fld, dloss_dv)
        entries = [("J", 0, (r, c)) for r in range(3) for c in range(3)]
        entries.append(("w", 0, None))
        fd = finite_difference_gradient(system, fld, dloss_dv, entries)
        for key, fd_val in fd.items():
            kind, face, idx = key
            an = grad.d_jacobians[face][idx] if kind == "J" else grad.d_weights[face]
            rel = abs(fd_val - an) / max(abs(fd_val), abs(an), 1e-12)
            assert rel <= 1e-6, (key, fd_val, an)

    def test_icosphere_sampled_parameters_vs_fd(self, icosphere3, rng):
        system = assemble(icosphere3)
        m = icosphere3.n_faces
        fld = JacobianField(
            np.eye(3) + 0.05 * rng.normal(size=(m, 3, 3)),
            rng.uniform(0.8, 1.2, size=m),
        )
        dloss_dv = rng.normal(size=(icosphere3.n_vertices, 3))
        grad = system.backward(fld, dloss_dv)
        entries = []
        for _ in range(12):
            face = int(rng.integers(m))
            entries.append(("J", face, (int(rng.integers(3)), int(rng.integers(3)))))
        for _ in range(8):
            entries.append(("w", int(rng.integers(m)), None))
        fd = finite_difference_gradient(system, fld, dloss_dv, entries)
        for key, fd_val in fd.items():
            kind, face, idx = key
            an = grad.d_jacobians[face][idx] if kind == "J" else grad.d_weights[face]
            rel = abs(fd_val - an) / max(abs(fd_val), abs(an), 1e-12)
            assert rel <= 1e-4, (key, fd_val, an)

    def test_shape_mismatch(self, icosphere2):
        system = assemble(icosphere2)
        with pytest.raises(ValueError):
            system.backward(identity_field(icosphere2), np.zeros((3, 3)))


class TestInterpolate:
    def test_endpoints(self, icosphere2, rng):
        m = icosphere2.n_faces
        a = JacobianField(rng.normal(size=(m, 3, 3)), rng.normal(size=m))
        b = JacobianField(rng.normal(size=(m, 3, 3)), rng.normal(size=m))
        np.testing.assert_array_equal(interpolate(a, b, 0.0).jacobians, a.jacobians)
        np.testing.assert_array_equal(interpolate(a, b, 1.0).weights, b.weights)

    def test_midpoint_of_identity_and_scale2_solves_to_scale_1_5(self, icosphere2):
        system = assemble(icosphere2)
        m = icosphere2.n_faces
        fld_a = identity_field(m)
        fld_b = constant_field(m, 2.0 * np.eye(3))
        mid = interpolate(fld_a, fld_b, 0.5)
        v = system.forward_solve(mid)
        expected = (icosphere2.vertices - icosphere2.centroid) * 1.5 + icosphere2.centroid
        assert np.abs(v - expected).max() <= 1e-6

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            interpolate(identity_field(3), identity_field(4), 0.5)


class TestApplyMask:
    def test_all_true_keeps_field(self, rng):
        fld = JacobianField(rng.normal(size=(5, 3, 3)), rng.normal(size=5))
        base = identity_field(5)
        out = apply_mask(fld, base, np.ones(5, dtype=bool))
        np.testing.assert_array_equal(out.jacobians, fld.jacobians)

    def test_all_false_keeps_base(self, rng):
        fld = JacobianField(rng.normal(size=(5, 3, 3)), rng.normal(size=5))
        base = identity_field(5)
        out = apply_mask(fld, base, np.zeros(5, dtype=bool))
        np.testing.assert_array_equal(out.jacobians, base.jacobians)
        np.testing.assert_array_equal(out.weights, base.weights)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            apply_mask(identity_field(3), identity_field(3), np.ones(4, dtype=bool))


class TestFieldFile:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        fld = JacobianField(rng.normal(size=(17, 3, 3)), rng.normal(size=17))
        path = tmp_path / "field.wjf"
        save_field(fld, path)
        loaded = load_field(path)
        np.testing.assert_array_equal(loaded.jacobians, fld.jacobians)
        np.testing.assert_array_equal(loaded.weights, fld.weights)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.wjf"
        path.write_bytes(b"NOPE" + b"\0" * 32)
        with pytest.raises(ValueError):
            load_field(path)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            JacobianField(np.full((2, 3, 3), np.nan), np.ones(2))
