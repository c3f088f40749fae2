import math

import numpy as np
import pytest

from memahand import autodiff as ad
from memahand.autodiff import Tensor

from conftest import numeric_grad, rel_err, tape_grad


class TestMatmul:
    def test_identity(self, rng):
        m = rng.normal(size=(3, 4))
        np.testing.assert_array_equal((Tensor(np.eye(3)) @ Tensor(m)).data, m)

    def test_hand_multiplication(self):
        out = Tensor([[1, 2], [3, 4]]) @ Tensor([[1], [1]])
        np.testing.assert_array_equal(out.data, [[3], [7]])

    def test_grad_matches_finite_differences(self, rng):
        A, B = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
        g = tape_grad(lambda a: (a @ Tensor(B)).sum(), A)
        num = numeric_grad(lambda a: float((a @ B).sum()), A)
        assert rel_err(g, num) <= 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ad.DimensionError):
            Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))

    def test_batched_broadcast_grad(self, rng):
        A, B = rng.normal(size=(4, 3, 5)), rng.normal(size=(5, 2))
        g = tape_grad(lambda b: (Tensor(A) @ b).sum(), B)
        np.testing.assert_allclose(g, A.sum(axis=(0, 1))[:, None].repeat(2, 1), atol=1e-12)


def _softmax_oracle(scores, mask):
    out = np.zeros_like(scores)
    for h in range(scores.shape[0]):
        for i in range(scores.shape[1]):
            allowed = [j for j in range(scores.shape[2]) if mask[i, j]]
            z = sum(math.exp(scores[h, i, j]) for j in allowed)
            for j in allowed:
                out[h, i, j] = math.exp(scores[h, i, j]) / z
    return out


class TestMaskedSoftmax:
    def test_uniform(self):
        out = ad.masked_softmax(Tensor(np.zeros((1, 1, 4))), np.ones((1, 4), bool))
        np.testing.assert_array_equal(out.data, np.full((1, 1, 4), 0.25))

    def test_single_allowed_key(self):
        out = ad.masked_softmax(Tensor([[[5.0, 100.0]]]), np.array([[True, False]]))
        assert out.data[0, 0, 0] == 1.0 and out.data[0, 0, 1] == 0.0

    def test_bruteforce(self, rng):
        scores = rng.normal(size=(2, 3, 3))
        mask = np.array([[1, 0, 1], [1, 1, 1], [0, 1, 0]], bool)
        out = ad.masked_softmax(Tensor(scores), mask).data
        np.testing.assert_allclose(out, _softmax_oracle(scores, mask), atol=1e-12, rtol=0)
        assert np.all(out[:, ~mask] == 0.0)
        np.testing.assert_allclose(out.sum(-1), 1.0, atol=1e-12)

    def test_degenerate_row(self):
        with pytest.raises(ad.DegenerateMaskError):
            ad.masked_softmax(Tensor(np.zeros((1, 2, 2))), np.array([[1, 0], [0, 0]], bool))

    def test_grad(self, rng):
        mask = rng.random((4, 5)) < 0.6
        mask[:, 0] = True
        w = rng.normal(size=(2, 4, 5))
        err = ad.grad_check(lambda s: (ad.masked_softmax(s, mask) * Tensor(w)).sum(),
                            rng.normal(size=(2, 4, 5)))
        assert err <= 1e-6


class TestLayerNorm:
    def test_constant_row(self):
        out = ad.layer_norm(Tensor(np.full((1, 4), 3.0)), Tensor(np.ones(4)), Tensor(np.zeros(4)))
        np.testing.assert_array_equal(out.data, np.zeros((1, 4)))

    def test_two_values(self):
        out = ad.layer_norm(Tensor([[1.0, 3.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)))
        e = 1.0 / math.sqrt(1.0 + 1e-5)
        np.testing.assert_allclose(out.data, [[-e, e]], atol=1e-9)

    def test_grad(self, rng):
        x, gain, bias, w = (rng.normal(size=(4, 8)), rng.normal(size=8),
                            rng.normal(size=8), rng.normal(size=(4, 8)))
        g = tape_grad(lambda t: (ad.layer_norm(t, Tensor(gain), Tensor(bias)) * Tensor(w)).sum(), x)

        def f(a):
            mu = a.mean(-1, keepdims=True)
            return float((((a - mu) / np.sqrt(a.var(-1, keepdims=True) + 1e-5) * gain + bias) * w).sum())

        assert rel_err(g, numeric_grad(f, x)) <= 1e-6


def _bilinear_oracle(feature, x, y):
    C, H, W = feature.shape
    px = min(max((x + 1) / 2 * (W - 1), 0.0), W - 1)
    py = min(max((y + 1) / 2 * (H - 1), 0.0), H - 1)
    out = []
    for c in range(C):
        acc = 0.0
        for j in range(H):
            for i in range(W):
                wgt = max(0.0, 1 - abs(px - i)) * max(0.0, 1 - abs(py - j))
                acc += wgt * feature[c, j, i]
        out.append(acc)
    return np.array(out)


class TestBilinearSample:
    def test_pixel_centre(self, rng):
        f = rng.normal(size=(3, 5, 4))
        # pixel (row 2, col 1): x = -1 + 2*1/3, y = -1 + 2*2/4
        out = ad.bilinear_sample(Tensor(f), Tensor([[-1 + 2 / 3, 0.0]])).data
        np.testing.assert_allclose(out[0], f[:, 2, 1], atol=1e-14)

    def test_midpoint(self, rng):
        f = rng.normal(size=(2, 3, 3))
        out = ad.bilinear_sample(Tensor(f), Tensor([[-0.5, -1.0]])).data
        np.testing.assert_allclose(out[0], 0.5 * (f[:, 0, 0] + f[:, 0, 1]), atol=1e-14)

    def test_scalar_oracle(self, rng):
        f = rng.normal(size=(3, 5, 5))
        coords = rng.uniform(-1.2, 1.2, size=(50, 2))
        out = ad.bilinear_sample(Tensor(f), Tensor(coords)).data
        ref = np.stack([_bilinear_oracle(f, x, y) for x, y in coords])
        np.testing.assert_allclose(out, ref, atol=1e-12, rtol=0)

    def test_too_small(self):
        with pytest.raises(ad.DimensionError):
            ad.bilinear_sample(Tensor(np.ones((1, 1, 4))), Tensor([[0.0, 0.0]]))

    def test_grads_both_inputs(self, rng):
        f = rng.normal(size=(2, 4, 6))
        coords = rng.uniform(-0.9, 0.9, size=(7, 2))
        w = rng.normal(size=(7, 2))
        assert ad.grad_check(lambda t: (ad.bilinear_sample(t, Tensor(coords)) * Tensor(w)).sum(), f) <= 1e-6
        assert ad.grad_check(lambda t: (ad.bilinear_sample(Tensor(f), t) * Tensor(w)).sum(), coords) <= 1e-6


class TestBackward:
    def test_sum(self):
        np.testing.assert_array_equal(tape_grad(lambda x: x.sum(), np.arange(5.0)), np.ones(5))

    def test_square(self):
        np.testing.assert_allclose(tape_grad(lambda x: (x * x).sum(), [1.0, 2.0, 3.0]), [2, 4, 6])

    def test_composite(self, rng):
        B = rng.normal(size=(4, 3))
        mask = np.ones((2, 3), bool)

        def f(x):
            s = (x @ Tensor(B)).reshape(1, 2, 3)
            return (ad.masked_softmax(s, mask) * Tensor([[[1.0, 2.0, 3.0], [0.5, -1.0, 2.0]]])).sum()

        x = rng.normal(size=(2, 4))
        num = numeric_grad(lambda a: f(Tensor(a)).item(), x)
        assert rel_err(tape_grad(f, x), num) <= 1e-5

    def test_root_must_be_scalar(self):
        with ad.tape():
            x = Tensor(np.ones(3), requires_grad=True)
            with pytest.raises(ad.ContractError):
                ad.backward(x * 2.0)

    def test_root_grad_is_ones_and_untouched_zero(self):
        with ad.tape() as tp:
            x = Tensor(np.ones(3), requires_grad=True)
            y = Tensor(np.ones(2), requires_grad=True)
            _ = y * 3.0
            root = x.sum()
            ad.backward(root)
        np.testing.assert_array_equal(tp.grads[root.node_id], np.ones(1))
        np.testing.assert_array_equal(y.grad, np.zeros(2))
        np.testing.assert_array_equal(tp.grad(y), np.zeros(2))

    def test_topological_order(self, rng):
        with ad.tape() as tp:
            x = Tensor(rng.normal(size=3), requires_grad=True)
            ad.backward(ad.exp(x * x).sum())
        for nid, node in enumerate(tp.nodes):
            assert all(i is None or i < nid for i in node.inputs)

    @pytest.mark.filterwarnings("ignore:overflow encountered:RuntimeWarning")
    def test_non_finite_forward_raises(self):
        with pytest.raises(ad.NumericError):
            ad.exp(Tensor([1000.0]))


class TestGradCheck:
    def test_linear_exact(self, rng):
        w = rng.normal(size=6)
        assert ad.grad_check(lambda x: (x * Tensor(w)).sum(), rng.normal(size=6)) <= 1e-9

    def test_non_scalar(self):
        with pytest.raises(ad.ContractError):
            ad.grad_check(lambda x: x * 2.0, np.ones(3))

    def test_eps_range(self):
        with pytest.raises(ad.ContractError):
            ad.grad_check(lambda x: x.sum(), np.ones(3), eps=1e-2)

    def test_errors_per_coordinate(self):
        w = Tensor([1.0, 2.0, 3.0])
        errs = ad.grad_check_errors(lambda x: (x * x * w).sum(), np.array([1.0, 2.0, 3.0]), coords=[0, 2])
        assert errs.shape == (2,) and errs.max() <= 1e-9
        assert ad.grad_check(lambda x: x.sum(), np.ones(3), coords=[]) == 0.0


class TestNorms:
    def test_row_norm_values(self, rng):
        x = rng.normal(size=(5, 3))
        np.testing.assert_allclose(ad.row_norm(Tensor(x)).data, np.linalg.norm(x, axis=1), atol=1e-15)

    def test_normalize_unit_rows(self, rng):
        x = rng.normal(size=(5, 3))
        u = ad.normalize(Tensor(x)).data
        np.testing.assert_allclose(np.linalg.norm(u, axis=1), 1.0, atol=1e-15)
        np.testing.assert_allclose(u * np.linalg.norm(x, axis=1, keepdims=True), x, atol=1e-14)

    def test_zero_row_has_zero_gradient(self):
        x = np.array([[0.0, 0.0, 0.0], [3.0, 4.0, 0.0]])
        g = tape_grad(lambda t: ad.row_norm(t).sum(), x)
        np.testing.assert_array_equal(g, [[0, 0, 0], [0.6, 0.8, 0]])
        w = np.arange(6.0).reshape(2, 3)
        g = tape_grad(lambda t: (ad.normalize(t) * Tensor(w)).sum(), x)
        assert np.all(g[0] == 0) and np.isfinite(g).all()


def _rot_oracle(a):
    K = ad.skew(np.asarray(a))
    out, term = np.eye(3), np.eye(3)
    for n in range(1, 60):
        term = term @ K / n
        out = out + term
    return out


# every primitive, randomized seeded inputs, float64
_R = np.random.default_rng(7)
_W = {k: _R.normal(size=s) for k, s in [("a", (3, 4)), ("b", (4, 5)), ("c", (3, 4)), ("img", (3, 9, 9)),
                                          ("cw", (4, 3, 3, 3)), ("tw", (3, 2, 2, 2)), ("cat", (3, 8)), ("rot", (2, 3, 3))]}
PRIMITIVES = {
    "add": (lambda x: ((x + Tensor(_W["c"])) * Tensor(_W["a"])).sum(), _R.normal(size=(3, 4))),
    "sub": (lambda x: ((Tensor(_W["c"]) - x) * Tensor(_W["a"])).sum(), _R.normal(size=(3, 4))),
    "mul": (lambda x: (x * x * Tensor(_W["a"])).sum(), _R.normal(size=(3, 4))),
    "div": (lambda x: (Tensor(_W["a"]) / (x * x + 1.0)).sum(), _R.normal(size=(3, 4))),
    "exp": (lambda x: (ad.exp(x) * Tensor(_W["a"])).sum(), _R.normal(size=(3, 4))),
    "sqrt": (lambda x: (ad.sqrt(x * x + 0.5) * Tensor(_W["a"])).sum(), _R.normal(size=(3, 4))),
    "abs": (lambda x: (ad.tabs(x) * Tensor(_W["a"])).sum(), _R.normal(size=(3, 4))),
    "tanh": (lambda x: (ad.tanh(x) * Tensor(_W["a"])).sum(), _R.normal(size=(3, 4))),
    "gelu": (lambda x: (ad.gelu(x) * Tensor(_W["a"])).sum(), _R.normal(size=(3, 4))),
    "sum_axis": (lambda x: (x.sum(axis=0) * Tensor(_W["a"][0])).sum(), _R.normal(size=(3, 4))),
    "mean": (lambda x: (x.mean(axis=1, keepdims=True) * x).sum(), _R.normal(size=(3, 4))),
    "reshape_transpose": (lambda x: (x.reshape(4, 3).T * Tensor(_W["a"])).sum(), _R.normal(size=(3, 4))),
    "take": (lambda x: (x[np.array([0, 2, 0])] * Tensor(_W["c"])).sum(), _R.normal(size=(3, 4))),
    "concat": (lambda x: (ad.concat([x, x * 2.0], axis=1) * Tensor(_W["cat"])).sum(),
               _R.normal(size=(3, 4))),
    "matmul": (lambda x: ((x @ Tensor(_W["b"])) * (x @ Tensor(_W["b"]))).sum(), _R.normal(size=(3, 4))),
    "spmm": (lambda x: (ad.spmm(_W["a"], x) * ad.spmm(_W["a"], x)).sum(), _R.normal(size=(4, 2))),
    "masked_softmax": (lambda x: (ad.masked_softmax(x.reshape(1, 3, 4), np.tri(3, 4, dtype=bool) | np.eye(3, 4, dtype=bool))
                                  * Tensor(_W["a"])).sum(), _R.normal(size=(3, 4))),
    "layer_norm": (lambda x: (ad.layer_norm(x, Tensor(_W["a"][0]), Tensor(_W["c"][0])) * Tensor(_W["a"])).sum(),
                   _R.normal(size=(3, 4))),
    "bilinear_sample": (lambda x: (ad.bilinear_sample(Tensor(_W["img"]), x) * Tensor(_W["a"][:, :3])).sum(),
                        _R.uniform(-0.9, 0.9, size=(3, 2))),
    "conv2d": (lambda x: (ad.conv2d(x, Tensor(_W["cw"]), Tensor(np.ones(4)), stride=2, pad=1) ** 2).sum(),
               _R.normal(size=(3, 9, 9))),
    "conv_transpose2x2": (lambda x: (ad.conv_transpose2x2(x, Tensor(_W["tw"]), Tensor(np.ones(2))) ** 2).sum(),
                          _R.normal(size=(3, 3, 3))),
    "row_norm": (lambda x: (ad.row_norm(x) * Tensor(_W["a"][:, 0])).sum(), _R.normal(size=(3, 4))),
    "normalize": (lambda x: (ad.normalize(x) * Tensor(_W["a"])).sum(), _R.normal(size=(3, 4))),
    "rodrigues": (lambda x: (ad.rodrigues(x) * Tensor(_W["rot"])).sum(),
                  np.array([[0.3, -1.2, 0.7], [1e-4, 2e-4, -1e-4]])),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_grad_check(name):
    f, x = PRIMITIVES[name]
    assert ad.grad_check(f, x, eps=1e-5) <= 1e-5


def test_forward_determinism(rng):
    x = rng.normal(size=(2, 5, 5))
    mask = np.ones((5, 5), bool)
    a = ad.masked_softmax(Tensor(x), mask).data
    b = ad.masked_softmax(Tensor(x.copy()), mask).data
    assert a.tobytes() == b.tobytes()


class TestRodrigues:
    def test_zero(self):
        np.testing.assert_array_equal(ad.rodrigues(Tensor(np.zeros((1, 3)))).data[0], np.eye(3))

    def test_quarter_turn_z(self):
        R = ad.rodrigues(Tensor([[0, 0, math.pi / 2]])).data[0]
        np.testing.assert_allclose(R @ [1, 0, 0], [0, 1, 0], atol=1e-12)

    def test_series_oracle(self, rng):
        aa = rng.normal(size=(20, 3))
        aa[:3] *= 1e-3
        R = ad.rodrigues(Tensor(aa)).data
        for a, r in zip(aa, R):
            np.testing.assert_allclose(r, _rot_oracle(a), atol=1e-10)
            np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-12)
            assert abs(np.linalg.det(r) - 1) < 1e-12
