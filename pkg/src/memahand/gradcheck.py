"""Finite-difference probes over every primitive and over the full training loss."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import LossWeights
from .losses import compute_terms, total_loss

TOLERANCE = 1e-5
EPS = 1e-5
TARGET_SLOPE = 1e-2
MIN_DIR_NORM = 1e-6
MAX_DIR_NORM = 1e2


def primitive_probes(seed: int = 0) -> dict[str, tuple]:
    """``name -> (scalar function, input)`` for each differentiable primitive.

    Inputs are chosen away from the kinks of ``abs`` and of the bilinear
    sampler so central differences are meaningful.
    """
    r = np.random.default_rng(seed)
    a, c = r.normal(size=(3, 4)), r.normal(size=(3, 4))
    b = r.normal(size=(4, 5))
    cat = r.normal(size=(3, 8))
    img = r.normal(size=(3, 5, 6))
    cw, tw = r.normal(size=(4, 3, 3, 3)), r.normal(size=(3, 2, 2, 2))
    rot = r.normal(size=(2, 3, 3))
    u = r.normal(size=(4, 4))
    mask = np.tri(3, 4, dtype=bool) | np.eye(3, 4, dtype=bool)
    away = r.choice([-1.0, 1.0], size=(3, 4)) * r.uniform(0.2, 1.5, size=(3, 4))
    cells = r.integers(0, 4, size=(3, 2)) + r.uniform(0.2, 0.8, size=(3, 2))
    coords = cells / np.array([5.0, 4.0]) * 2.0 - 1.0

    A, C, W = Tensor(a), Tensor(c), Tensor(a[:, :3])
    return {
        "add": (lambda x: ((x + C) * A).sum(), r.normal(size=(3, 4))),
        "sub": (lambda x: ((C - x) * A).sum(), r.normal(size=(3, 4))),
        "mul": (lambda x: (x * x * A).sum(), r.normal(size=(3, 4))),
        "div": (lambda x: (A / (x * x + 1.0)).sum(), r.normal(size=(3, 4))),
        "power": (lambda x: (ad.power(x * x + 1.0, 1.5) * A).sum(), r.normal(size=(3, 4))),
        "exp": (lambda x: (ad.exp(x) * A).sum(), r.normal(size=(3, 4))),
        "sqrt": (lambda x: (ad.sqrt(x * x + 0.5) * A).sum(), r.normal(size=(3, 4))),
        "abs": (lambda x: (ad.tabs(x) * A).sum(), away),
        "tanh": (lambda x: (ad.tanh(x) * A).sum(), r.normal(size=(3, 4))),
        "gelu": (lambda x: (ad.gelu(x) * A).sum(), r.normal(size=(3, 4))),
        "sum": (lambda x: (x.sum(axis=0) * Tensor(a[0])).sum(), r.normal(size=(3, 4))),
        "mean": (lambda x: (x.mean(axis=1, keepdims=True) * x).sum(), r.normal(size=(3, 4))),
        "reshape_transpose": (lambda x: (x.reshape(4, 3).T * A).sum(), r.normal(size=(3, 4))),
        "take": (lambda x: (x[np.array([0, 2, 0])] * C).sum(), r.normal(size=(3, 4))),
        "concat": (lambda x: (ad.concat([x, x * 2.0], axis=1) * Tensor(cat)).sum(), r.normal(size=(3, 4))),
        "matmul": (lambda x: ((x @ Tensor(b)) * (x @ Tensor(b))).sum(), r.normal(size=(3, 4))),
        "spmm": (lambda x: (ad.spmm(u, x) * ad.spmm(u, x)).sum(), r.normal(size=(4, 2))),
        "masked_softmax": (lambda x: (ad.masked_softmax(x.reshape(1, 3, 4), mask) * A).sum(),
                           r.normal(size=(3, 4))),
        "layer_norm": (lambda x: (ad.layer_norm(x, Tensor(a[0]), Tensor(c[0])) * A).sum(),
                       r.normal(size=(3, 4))),
        "row_norm": (lambda x: (ad.row_norm(x) * Tensor(a[:, 0])).sum(), r.normal(size=(3, 4))),
        "normalize": (lambda x: (ad.normalize(x) * A).sum(), r.normal(size=(3, 4))),
        "bilinear_sample": (lambda x: (ad.bilinear_sample(Tensor(img), x) * W).sum(), coords),
        "conv2d": (lambda x: (ad.conv2d(x, Tensor(cw), Tensor(np.ones(4)), stride=2, pad=1) ** 2).sum(),
                   r.normal(size=(3, 9, 9))),
        "conv_transpose2x2": (lambda x: (ad.conv_transpose2x2(x, Tensor(tw), Tensor(np.ones(2))) ** 2).sum(),
                              r.normal(size=(3, 3, 3))),
        "rodrigues": (lambda x: (ad.rodrigues(x) * Tensor(rot)).sum(),
                      np.array([[0.3, -1.2, 0.7], [1e-4, 2e-4, -1e-4]])),
    }


def check_primitives(seed: int = 0, eps: float = EPS) -> dict[str, float]:
    return {name: ad.grad_check(f, x, eps=eps) for name, (f, x) in primitive_probes(seed).items()}


def pipeline_probe(net, sample, weights: LossWeights = LossWeights(), seed: int = 0):
    """Scalar function of one coefficient per weight tensor, ``W_k + a_k d_k``.

    Every tensor in the network is exercised by one finite-difference
    coordinate. ``d_k`` is a seeded random direction whose length is set from
    a first tape pass so that the directional derivative is about
    ``TARGET_SLOPE``: large enough to sit well above the roundoff of a loss in
    the hundreds, small enough that an ``eps`` step does not cross the kinks
    of the L1 terms or of the bilinear sampler. A zero or wrong tape gradient
    still shows up as a mismatch, since the numeric side never sees the scale.
    """
    rng = np.random.default_rng(seed)
    names = list(net.params)
    base = {k: net.params[k].data.copy() for k in names}
    unit = {}
    for k in names:
        d = rng.normal(size=base[k].shape)
        unit[k] = d / np.linalg.norm(d)

    def build(dirs):
        def f(alpha: Tensor) -> Tensor:
            p = {k: ad.add(base[k], ad.mul(alpha[i], dirs[k])) for i, k in enumerate(names)}
            res = net.forward(sample.image, sample.camera, params=p)
            loss, _ = total_loss(compute_terms(res.final, sample.hands, net.models, net.cfg.image_size), weights)
            return loss
        return f

    x0 = np.zeros(len(names))
    with ad.tape():
        a = Tensor(x0.copy(), requires_grad=True)
        ad.backward(build(unit)(a))
        slope = np.abs(a.grad)
    scale = np.clip(TARGET_SLOPE / np.maximum(slope, 1e-300), MIN_DIR_NORM, MAX_DIR_NORM)
    dirs = {k: scale[i] * unit[k] for i, k in enumerate(names)}
    return build(dirs), x0, names


def check_pipeline(net, sample, weights: LossWeights = LossWeights(), seed: int = 0,
                   eps: float = EPS) -> dict[str, float]:
    """Max relative error per top-level module (``enc``, ``mmim``, ``refine0``...)."""
    f, x0, names = pipeline_probe(net, sample, weights, seed)
    errors = ad.grad_check_errors(f, x0, eps=eps)
    out: dict[str, float] = {}
    for name, err in zip(names, errors):
        group = "pipeline." + name.split(".")[0]
        out[group] = max(out.get(group, 0.0), float(err))
    return out
