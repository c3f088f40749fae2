"""Adam training on a fixed synthetic set, with per-step loss logging."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt_io
from .config import RunConfig
from .hand_model import load_model, mano_forward, synthesize_model
from .losses import TERMS, LossReport, compute_terms, total_loss
from .metrics import aggregate, sample_metrics
from .network import Network
from .synthetic import HANDS, SyntheticSample, read_manifest, synthesize_sample

log = logging.getLogger(__name__)

CURVE_HEADER = ["step", "L_V", "L_J", "L_N", "L_E", "L_P", "L_Vmano", "L_consist", "total"]


class TrainingAborted(ad.NumericError):
    def __init__(self, step: int, cause: Exception, checkpoint: Path | None):
        super().__init__(f"training aborted at step {step}: {cause}")
        self.step, self.cause, self.checkpoint = step, cause, checkpoint


class Adam:
    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = {k: np.zeros(t.shape) for k, t in params.items()}
        self.v = {k: np.zeros(t.shape) for k, t in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, t in self.params.items():
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            t.data = t.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def build_network(cfg: RunConfig) -> Network:
    m = cfg.model
    right = load_model(cfg.model_file) if cfg.model_file else synthesize_model(cfg.model_seed, m.n_vertices)
    return Network(m, right, seed=cfg.seed)


def load_samples(cfg: RunConfig, net: Network) -> list[SyntheticSample]:
    if cfg.manifest:
        samples = read_manifest(cfg.manifest, net.models["L"], net.models["R"], cfg.model.image_size)
    else:
        samples = [synthesize_sample(net.models["L"], net.models["R"], cfg.seed + i, cfg.model.image_size)
                   for i in range(cfg.n_samples)]
    if not samples:
        raise ValueError("no training samples")
    return samples


def sample_loss(net: Network, sample: SyntheticSample, weights) -> tuple[ad.Tensor, LossReport]:
    res = net.forward(sample.image, sample.camera)
    return total_loss(compute_terms(res.final, sample.hands, net.models, net.cfg.image_size), weights)


def batch_gradients(net: Network, samples, weights) -> tuple[dict[str, np.ndarray], LossReport]:
    """Mean loss over ``samples`` and its gradient for every parameter."""
    grads = {k: np.zeros(t.shape) for k, t in net.params.items()}
    terms = np.zeros(len(TERMS))
    total = 0.0
    for s in samples:
        with ad.tape() as tp:
            for t in net.params.values():
                tp.watch(t)
            loss, rep = sample_loss(net, s, weights)
            ad.backward(ad.div(loss, float(len(samples))))
        for k, t in net.params.items():
            grads[k] += t.grad
        terms += np.array([rep.terms[t] for t in TERMS]) / len(samples)
        total += rep.total / len(samples)
    return grads, LossReport(dict(zip(TERMS, terms.tolist())), rep.weights, total)


def make_checkpoint(net: Network, cfg: RunConfig, step: int) -> ckpt_io.Checkpoint:
    return ckpt_io.Checkpoint({k: v.copy() for k, v in net.params.state().items()}, cfg.to_dict(), step)


@dataclass
class TrainResult:
    net: Network
    curve: list[list[float]]
    final: LossReport
    checkpoint: Path | None


def train_overfit(cfg: RunConfig, out_dir: str | Path | None = None,
                  net: Network | None = None) -> TrainResult:
    """Minimize the weighted loss on a fixed sample set with Adam.

    Writes ``loss_curve.csv`` (one row per step, losses before the update)
    and ``checkpoint.mmhd`` when ``out_dir`` is given. A non-finite loss
    stops training and saves the last good weights.
    """
    net = net or build_network(cfg)
    samples = load_samples(cfg, net)
    opt = Adam(net.params, cfg.lr, cfg.betas, cfg.adam_eps)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    curve = []
    for step in range(cfg.steps):
        try:
            grads, rep = batch_gradients(net, samples, cfg.loss_weights)
            if not all(np.isfinite(g).all() for g in grads.values()):
                raise ad.NumericError("non-finite gradient")
        except ad.NumericError as exc:
            path = None
            if out is not None:
                path = out / "last_good.mmhd"
                ckpt_io.save(path, make_checkpoint(net, cfg, step))
            _write_curve(out, curve)
            raise TrainingAborted(step, exc, path) from exc
        curve.append([step] + rep.row())
        if step % 50 == 0:
            log.info("step %d total %.6g", step, rep.total)
        opt.step(grads)
    _, final = batch_gradients(net, samples, cfg.loss_weights)
    path = None
    if out is not None:
        _write_curve(out, curve)
        path = out / "checkpoint.mmhd"
        ckpt_io.save(path, make_checkpoint(net, cfg, cfg.steps))
    return TrainResult(net, curve, final, path)


def _write_curve(out: Path | None, curve) -> None:
    if out is None:
        return
    with open(out / "loss_curve.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_HEADER)
        for row in curve:
            w.writerow([int(row[0])] + [repr(float(x)) for x in row[1:]])


def load_weights(net: Network, ckpt: ckpt_io.Checkpoint) -> None:
    net.params.load_state(ckpt.tensors)


def evaluate(net: Network, samples) -> dict:
    """Metric reports for the direct mesh and for the parametric mesh."""
    regs = {h: net.models[h].joint_regressor for h in HANDS}
    mesh, mano = [], []
    for s in samples:
        res = net.forward(s.image, s.camera).final
        gt = {h: s.hands[h].vertices for h in HANDS}
        mesh.append(sample_metrics({h: res.vertices[h].data for h in HANDS}, gt, regs, s.camera))
        mano_v = {h: mano_forward(net.models[h], res.theta[h].data, res.beta[h].data)[0].data for h in HANDS}
        mano.append(sample_metrics(mano_v, gt, regs, s.camera))
    seeds = [s.seed for s in samples]
    report = aggregate(mesh, seeds)
    report["mano"] = aggregate(mano, seeds)
    return report
