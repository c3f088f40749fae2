"""Command-line driver: ``gradcheck``, ``train-overfit``, ``infer``, ``eval`` and ``make-manifest``.

Exit codes: 0 success, 1 validation or contract failure, 2 numeric failure
(non-finite loss or a failed gradient check).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path


from . import autodiff as ad
from . import checkpoint as ckpt_io
from .config import RunConfig
from .gradcheck import TOLERANCE, check_pipeline, check_primitives
from .hand_model import mano_forward
from .mesh import write_obj
from .synthetic import HANDS, read_manifest, synthesize_sample, write_manifest
from .train import build_network, evaluate, load_samples, load_weights, train_overfit

log = logging.getLogger("memahand")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2
GRADCHECK_SCALE = 0.05


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: RunConfig, args) -> RunConfig:
    d = cfg.to_dict()
    flags = {"seed": args.seed, "model_seed": args.model_seed, "model_file": args.model_file,
             "checkpoint": args.checkpoint, "manifest": args.manifest, "out_dir": args.out_dir,
             "steps": args.steps, "lr": args.lr, "n_samples": args.n_samples}
    for k, v in flags.items():
        if v is not None:
            d[k] = v
    for item in args.set or []:
        key, _, value = item.partition("=")
        if not _:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        target = d
        *path, leaf = key.split(".")
        for part in path:
            if not isinstance(target.get(part), dict):
                raise ValueError(f"unknown config section {part!r} in {key!r}")
            target = target[part]
        if leaf not in target:
            raise ValueError(f"unknown config key {key!r}")
        target[leaf] = _parse_value(value)
    if args.preset is not None:
        d["preset"] = args.preset
        if args.config is None:
            d["model"] = {}
    return RunConfig.from_dict(d)


def load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig.from_preset(args.preset or "desk")
    return apply_overrides(cfg, args)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _network(cfg: RunConfig, need_checkpoint: bool):
    net = build_network(cfg)
    if cfg.checkpoint:
        load_weights(net, ckpt_io.load(cfg.checkpoint))
    elif need_checkpoint:
        raise ValueError("this command needs --checkpoint")
    return net


# ---------------------------------------------------------------- commands


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    report = check_primitives(seed=cfg.seed)
    net = build_network(cfg)
    net.params.randomize(cfg.seed + 1, GRADCHECK_SCALE)
    sample = synthesize_sample(net.models["L"], net.models["R"], cfg.seed, cfg.model.image_size)
    report.update(check_pipeline(net, sample, cfg.loss_weights, seed=cfg.seed))
    failed = sorted(k for k, v in report.items() if not v <= TOLERANCE)
    for name, err in report.items():
        print(f"{name:24s} {err:.3e} {'FAIL' if name in failed else 'ok'}")
    if args.report:
        Path(args.report).write_text(json.dumps({"tolerance": TOLERANCE, "max_rel_err": report,
                                                  "failed": failed}, indent=2))
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_train_overfit(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    cfg.save(out / "config.json")
    net = _network(cfg, need_checkpoint=False)
    result = train_overfit(cfg, out, net=net)
    first = result.curve[0][-1]
    print(f"steps {cfg.steps}  initial loss {first:.6g}  final loss {result.final.total:.6g}  "
          f"ratio {result.final.total / first:.4f}")
    print(f"checkpoint {result.checkpoint}")
    return EXIT_OK


def _pick_sample(cfg: RunConfig, net, args):
    if cfg.manifest:
        samples = read_manifest(cfg.manifest, net.models["L"], net.models["R"], cfg.model.image_size)
        if not samples:
            raise ValueError("manifest has no usable samples")
        return samples[args.index]
    seed = cfg.seed if args.sample_seed is None else args.sample_seed
    return synthesize_sample(net.models["L"], net.models["R"], seed, cfg.model.image_size)


def cmd_infer(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    net = _network(cfg, need_checkpoint=True)
    sample = _pick_sample(cfg, net, args)
    pred = net.forward(sample.image, sample.camera).final
    record = {"seed": sample.seed, "camera": sample.camera.to_dict(), "hands": {}}
    for h in HANDS:
        model = net.models[h]
        write_obj(out / f"{h}_mesh.obj", pred.vertices[h].data, model.faces)
        mano_v, _ = mano_forward(model, pred.theta[h].data, pred.beta[h].data)
        write_obj(out / f"{h}_mano.obj", mano_v.data, model.faces)
        record["hands"][h] = {"theta": pred.theta[h].data.tolist(), "beta": pred.beta[h].data.tolist()}
    (out / "prediction.json").write_text(json.dumps(record, indent=2))
    print(f"wrote {out}/{{L,R}}_{{mesh,mano}}.obj and prediction.json")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    net = _network(cfg, need_checkpoint=False)
    if cfg.checkpoint is None:
        log.warning("no checkpoint given; evaluating the untrained network")
    samples = load_samples(cfg, net)
    report = evaluate(net, samples)
    path = Path(args.report) if args.report else out / "metrics.json"
    path.write_text(json.dumps(report, indent=2))
    for label, r in (("mesh", report), ("mano", report["mano"])):
        print(f"{label}: MPJPE {r['mpjpe_mm']:.3f} mm  MPVPE {r['mpvpe_mm']:.3f} mm  "
              f"PCK-AUC {r['pck_auc']:.4f}  PROJ2D {r['proj2d_px']:.3f} px")
    print(f"report {path}")
    return EXIT_OK


def cmd_make_manifest(cfg: RunConfig, args) -> int:
    net_models = build_network(cfg).models
    seeds = args.seeds or list(range(cfg.seed, cfg.seed + cfg.n_samples))
    samples = [synthesize_sample(net_models["L"], net_models["R"], s, cfg.model.image_size) for s in seeds]
    path = Path(args.path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_manifest(path, samples)
    print(f"wrote {len(samples)} samples to {path}")
    return EXIT_OK


COMMANDS = {
    "gradcheck": cmd_gradcheck,
    "train-overfit": cmd_train_overfit,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "make-manifest": cmd_make_manifest,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--preset", choices=["desk", "tiny", "full-topology"])
    common.add_argument("--seed", type=int)
    common.add_argument("--model-seed", type=int)
    common.add_argument("--model-file")
    common.add_argument("--checkpoint")
    common.add_argument("--manifest")
    common.add_argument("--out-dir")
    common.add_argument("--steps", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--n-samples", type=int)
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any config field, e.g. model.refine_iters=2")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="memahand", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    p.add_argument("--report", help="write a JSON report here")
    sub.add_parser("train-overfit", parents=[common], help="Adam on a fixed synthetic set")
    p = sub.add_parser("infer", parents=[common], help="predict one sample and export OBJ meshes")
    p.add_argument("--sample-seed", type=int)
    p.add_argument("--index", type=int, default=0, help="manifest entry to use")
    p = sub.add_parser("eval", parents=[common], help="metrics over a manifest or seeded samples")
    p.add_argument("--report", help="report path (default OUT_DIR/metrics.json)")
    p = sub.add_parser("make-manifest", parents=[common], help="write a synthetic sample manifest")
    p.add_argument("path")
    p.add_argument("--seeds", type=int, nargs="+")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg, args)
    except ad.NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, IndexError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
