import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from memahand import autodiff as ad
from memahand.autodiff import Tensor
from memahand.hand_model import (N_POSE, N_SHAPE, PARENTS, HandModel, ModelValidationError,
                                 load_model, load_or_synthesize_model, mano_forward, regress_joints,
                                 save_model, synthesize_model)
from memahand.mesh import is_edge_manifold, unique_edges

from conftest import fk_oracle, numeric_grad, rel_err, tape_grad


@pytest.fixture(scope="module")
def model():
    return synthesize_model(0, 98)


class TestSynthesis:
    @pytest.mark.parametrize("n", [98, 778])
    def test_vertex_count(self, n):
        m = synthesize_model(0, n)
        assert m.n_vertices == n
        m.validate()

    def test_manifold_and_orientation(self, model):
        assert is_edge_manifold(model.faces)
        # a palm-up hand viewed from +z: face normals of the flat template point along +z
        v = model.template
        n = np.cross(v[model.faces[:, 1]] - v[model.faces[:, 0]], v[model.faces[:, 2]] - v[model.faces[:, 0]])
        assert np.all(n[:, 2] > 0)

    def test_deterministic(self):
        a, b = synthesize_model(3, 98), synthesize_model(3, 98)
        np.testing.assert_array_equal(a.skin_weights, b.skin_weights)
        np.testing.assert_array_equal(a.shape_basis, b.shape_basis)

    def test_rows_convex(self, model):
        np.testing.assert_allclose(model.skin_weights.sum(1), 1.0, atol=1e-12)
        np.testing.assert_allclose(model.joint_regressor.sum(1), 1.0, atol=1e-12)
        assert model.skin_weights.min() >= 0

    def test_mirror(self, model):
        left = model.mirrored()
        np.testing.assert_array_equal(left.template[:, 0], -model.template[:, 0])
        np.testing.assert_array_equal(left.faces, model.faces[:, ::-1])
        # mirrored and re-wound: normals keep pointing the same way in z
        v = left.template
        n = np.cross(v[left.faces[:, 1]] - v[left.faces[:, 0]], v[left.faces[:, 2]] - v[left.faces[:, 0]])
        assert np.all(n[:, 2] > 0)

    def test_too_small(self):
        with pytest.raises(ValueError):
            synthesize_model(0, 20)


class TestValidation:
    def test_bad_skin_weights(self, model):
        bad = HandModel(model.template, model.faces, model.skin_weights * 2, model.shape_basis,
                        model.joint_regressor)
        with pytest.raises(ModelValidationError) as e:
            bad.validate()
        assert e.value.field == "skin_weights"

    def test_bad_faces(self, model):
        f = model.faces.copy()
        f[0, 0] = model.n_vertices + 5
        with pytest.raises(ModelValidationError) as e:
            HandModel(model.template, f, model.skin_weights, model.shape_basis, model.joint_regressor).validate()
        assert e.value.field == "faces"

    def test_round_trip(self, model, tmp_path):
        save_model(model, tmp_path / "m.json")
        back = load_model(tmp_path / "m.json")
        for name in ("template", "faces", "skin_weights", "shape_basis", "joint_regressor"):
            np.testing.assert_array_equal(getattr(back, name), getattr(model, name))
        assert back.parents == PARENTS

    def test_missing_field(self, model, tmp_path):
        d = model.to_dict()
        del d["shape_basis"]
        with pytest.raises(ModelValidationError) as e:
            HandModel.from_dict(d)
        assert e.value.field == "shape_basis"

    def test_load_or_synthesize(self, model, tmp_path):
        assert load_or_synthesize_model(0, 98).n_vertices == 98
        save_model(model, tmp_path / "m.json")
        assert load_or_synthesize_model(tmp_path / "m.json").n_vertices == 98


class TestForward:
    def test_rest_pose_is_template(self, model):
        V, _ = mano_forward(model, np.zeros(N_POSE), np.zeros(N_SHAPE))
        assert np.array_equal(V.data, model.template)

    def test_shape_superposition(self, model, rng):
        b1, b2 = rng.normal(size=N_SHAPE), rng.normal(size=N_SHAPE)
        T = model.template
        v1 = mano_forward(model, np.zeros(N_POSE), b1)[0].data - T
        v2 = mano_forward(model, np.zeros(N_POSE), b2)[0].data - T
        v12 = mano_forward(model, np.zeros(N_POSE), b1 + b2)[0].data - T
        np.testing.assert_allclose(v12, v1 + v2, atol=1e-12, rtol=0)

    def test_unit_shape_is_basis_column(self, model):
        V, _ = mano_forward(model, np.zeros(N_POSE), np.eye(N_SHAPE)[0])
        np.testing.assert_allclose(V.data, model.template + model.shape_basis[:, :, 0], atol=1e-15)

    def test_global_rotation_equivariance(self, model, rng):
        theta = rng.uniform(-0.4, 0.4, N_POSE)
        beta = rng.normal(size=N_SHAPE)
        g = Rotation.from_rotvec([0.3, -0.8, 0.5])
        V, _ = mano_forward(model, theta, beta)
        rotated = theta.copy()
        rotated[:3] = (g * Rotation.from_rotvec(theta[:3])).as_rotvec()
        V2, _ = mano_forward(model, rotated, beta)
        shaped = model.template + np.einsum("nck,k->nc", model.shape_basis, beta)
        root = (model.joint_regressor @ shaped)[0]
        expected = (V.data - root) @ g.as_matrix().T + root
        np.testing.assert_allclose(V2.data, expected, atol=1e-9, rtol=0)

    def test_matches_homogeneous_oracle(self, model, rng):
        theta = rng.uniform(-0.6, 0.6, N_POSE)
        beta = rng.normal(size=N_SHAPE)
        V, joints = mano_forward(model, theta, beta)
        ref_v, ref_j = fk_oracle(model, theta, beta)
        np.testing.assert_allclose(V.data, ref_v, atol=1e-12, rtol=0)
        np.testing.assert_allclose(joints.data, ref_j, atol=1e-12, rtol=0)

    def test_translation(self, model, rng):
        theta = rng.uniform(-0.4, 0.4, N_POSE)
        V, J = mano_forward(model, theta, np.zeros(N_SHAPE))
        V2, J2 = mano_forward(model, theta, np.zeros(N_SHAPE), translation=[0.1, 0.2, 0.3])
        np.testing.assert_allclose(V2.data - V.data, np.broadcast_to([0.1, 0.2, 0.3], V.shape), atol=1e-15)

    def test_theta_gradient(self, model, rng):
        theta0 = rng.uniform(-0.5, 0.5, N_POSE)
        w = rng.normal(size=(model.n_vertices, 3))
        g = tape_grad(lambda t: (mano_forward(model, t, np.zeros(N_SHAPE))[0] * Tensor(w)).sum(), theta0)
        num = numeric_grad(lambda t: float((fk_oracle(model, t, np.zeros(N_SHAPE))[0] * w).sum()), theta0)
        assert rel_err(g, num) <= 1e-5

    def test_beta_gradient(self, model, rng):
        theta = rng.uniform(-0.5, 0.5, N_POSE)
        err = ad.grad_check(lambda b: ad.tsum(ad.tabs(mano_forward(model, theta, b)[0])), rng.normal(size=N_SHAPE))
        assert err <= 1e-6

    def test_bad_shapes(self, model):
        with pytest.raises(ad.DimensionError):
            mano_forward(model, np.zeros(45), np.zeros(N_SHAPE))

    def test_regress_joints(self, model):
        J = regress_joints(model.joint_regressor, Tensor(model.template))
        np.testing.assert_allclose(J.data, model.joint_regressor @ model.template)
        with pytest.raises(ad.DimensionError):
            regress_joints(model.joint_regressor, Tensor(np.zeros((5, 3))))


def test_unique_edges_once_each(model):
    e = unique_edges(model.faces)
    assert len({tuple(x) for x in e}) == len(e)
    assert np.all(e[:, 0] < e[:, 1])
