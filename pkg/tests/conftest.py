import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from memahand import autodiff as ad
from memahand.hand_model import N_JOINTS


def numeric_grad(f, x, eps=1e-6):
    """Central differences of a float-valued ``f`` over a plain ndarray."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f(x)
        flat[i] = old - eps
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * eps)
    return g


def fk_oracle(model, theta, beta):
    """Textbook LBS with 4x4 homogeneous transforms and explicit loops."""
    N = model.n_vertices
    shaped = model.template + np.einsum("nck,k->nc", model.shape_basis, beta)
    J = model.joint_regressor @ shaped
    world = []
    for j in range(N_JOINTS):
        local = np.eye(4)
        local[:3, :3] = Rotation.from_rotvec(theta[3 * j:3 * j + 3]).as_matrix()
        p = model.parents[j]
        local[:3, 3] = J[j] - (J[p] if p >= 0 else 0.0)
        world.append(local if p < 0 else world[p] @ local)
    skin = []
    for j in range(N_JOINTS):
        rest = np.eye(4)
        rest[:3, 3] = -J[j]
        skin.append(world[j] @ rest)
    out = np.zeros((N, 3))
    for i in range(N):
        T = sum(model.skin_weights[i, j] * skin[j] for j in range(N_JOINTS))
        out[i] = (T @ np.append(shaped[i], 1.0))[:3]
    return out, np.array([w[:3, 3] for w in world])


def tape_grad(f, x):
    """Gradient of a Tensor -> scalar Tensor function via the tape."""
    with ad.tape():
        xt = ad.Tensor(x, requires_grad=True)
        ad.backward(f(xt))
    return xt.grad


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for the terminal summary; returns ``ok``."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(criterion: str, ok: bool, detail: str = "") -> bool:
        lines.append(f"{'PASS' if ok else 'FAIL'}  {criterion}: {detail}")
        print(lines[-1])
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
