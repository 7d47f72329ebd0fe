"""``pqdt`` command line: generate, train, eval, infer, gradcheck."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

THREADS_ENV = "PQDT_THREADS"


def _threads(args) -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise SystemExit(f"{THREADS_ENV} must be an integer, got {env!r}")
    else:
        n = args.threads
    if n < 1:
        raise SystemExit(f"thread count must be >= 1, got {n}")
    return n


def cmd_generate(args) -> int:
    from .generate import generate
    man = generate(args.kind, args.sources, args.out, seed=args.seed, levels=args.levels,
                   views=args.views, mode=args.mode, n_gt=args.n_gt, n_points=args.n_points,
                   workers=args.workers)
    print(f"wrote {len(man['samples'])} samples ({len(man['skipped'])} skipped) to {Path(args.out) / 'manifest.json'}")
    return 0


def cmd_train(args) -> int:
    from .config import load_config
    from .train import TrainingAborted, train
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    try:
        state = train(cfg, resume=args.resume, stop_after=args.stop_after,
                      log_path=args.log, out_dir=args.out)
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 3
    print(f"finished epoch {state.epoch} (step {state.step}); checkpoint {state.last_checkpoint}")
    return 0


def cmd_eval(args) -> int:
    from .evaluate import evaluate
    rep = evaluate(args.checkpoint, args.manifest, thresholds=args.thresholds, seed=args.seed,
                   out_path=args.out, workers=args.workers, split=args.split)
    print(json.dumps(rep["summary"], sort_keys=True))
    return 0


def cmd_infer(args) -> int:
    import numpy as np
    from ..pointops import normalize_unit_sphere
    from .dataset import fit_count
    from .evaluate import load_model
    from .io import read_pc, write_pc
    model = load_model(args.checkpoint)
    pts = read_pc(args.input)
    norm, center, scale = normalize_unit_sphere(pts)
    norm = fit_count(norm, model.cfg.n_in, np.random.default_rng(args.seed))
    pred = model.predict(norm, seed=args.seed)
    write_pc(args.output, pred * scale + center)
    print(f"wrote {len(pred)} points to {args.output}")
    return 0


def cmd_gradcheck(args) -> int:
    from .. import autodiff as ad
    from .gradcheck import SCOPES, gradcheck
    scopes = SCOPES if args.scope == "all" else [args.scope]
    worst_ok = True
    for scope in scopes:
        if args.corrupt:
            with ad.corrupt_backward(args.corrupt):
                res = gradcheck(scope, args.seed, args.threshold)
        else:
            res = gradcheck(scope, args.seed, args.threshold)
        print(res.line())
        worst_ok &= res.passed
    return 0 if worst_ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pqdt", description="Point-cloud restoration toolkit.")
    p.add_argument("--threads", type=int, default=1,
                   help=f"worker/BLAS thread count (env {THREADS_ENV} overrides)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="synthesize a degraded dataset")
    g.add_argument("kind", choices=["deform", "occ", "crop"])
    g.add_argument("sources", nargs="+", help="OBJ meshes, xyz/bin clouds or builtin:<shape>")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--levels", nargs="+")
    g.add_argument("--views", type=int)
    g.add_argument("--mode", choices=["train", "eval"], default="eval")
    g.add_argument("--n-gt", type=int, default=8192)
    g.add_argument("--n-points", type=int, default=2048, help="points per occluded scan")
    g.add_argument("--workers", type=int)
    g.set_defaults(fn=cmd_generate)

    t = sub.add_parser("train", help="train from a JSON run config")
    t.add_argument("--config", required=True)
    t.add_argument("--resume")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="checkpoint directory (overrides config)")
    t.add_argument("--log", help="metrics log path (overrides config)")
    t.add_argument("--stop-after", type=int, help="stop after this many completed epochs")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a manifest")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--thresholds", type=float, nargs="+", default=[0.01])
    e.add_argument("--seed", type=int)
    e.add_argument("--split")
    e.add_argument("--out", help="report path (newline-delimited JSON)")
    e.add_argument("--workers", type=int)
    e.set_defaults(fn=cmd_eval)

    i = sub.add_parser("infer", help="restore one point cloud")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--input", required=True)
    i.add_argument("--output", required=True)
    i.add_argument("--seed", type=int, default=0)
    i.set_defaults(fn=cmd_infer)

    c = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    c.add_argument("--scope", default="all", help="op name, block name, 'full' or 'all'")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--threshold", type=float)
    c.add_argument("--corrupt", help=argparse.SUPPRESS)  # negative-control hook
    c.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    n = _threads(args)
    if getattr(args, "workers", "absent") is None:
        args.workers = n
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=n):
        try:
            return args.fn(args)
        except (ValueError, OSError, KeyError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2


if __name__ == "__main__":
    sys.exit(main())
