"""Command-line surface: synth | train | run | eval | gradcheck | angles | sweep.

Common flags: --config PATH (JSON, unknown keys rejected), --out DIR,
--seed N, --protocol strict|greedy|both, --no-mlc, --no-tta-p, --no-tta-m,
--hash-baseline L. Environment variables are never consulted for run
configuration; every command writes a resolved-config snapshot next to its
outputs.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import config as config_mod
from . import gradcheck as gradcheck_mod
from . import pipeline
from .core import EngineError

log = logging.getLogger(__name__)


def _add_common(p: argparse.ArgumentParser, protocol: bool = False):
    p.add_argument("--config", type=Path, default=None, help="JSON config file")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the top-level seed")
    p.add_argument("--no-mlc", action="store_true", help="train with plain CE instead of margin calibration")
    p.add_argument("--no-tta-p", action="store_true", help="disable prototype refinement")
    p.add_argument("--no-tta-m", action="store_true", help="disable the encoder update")
    if protocol:
        p.add_argument("--protocol", choices=("strict", "greedy", "both"), default="both")
        p.add_argument("--hash-baseline", type=int, action="append", default=[],
                       metavar="L", help="also report the sign-hash baseline at code length L")


def _bundle(args) -> config_mod.ConfigBundle:
    overrides: dict = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    ablation = {}
    if getattr(args, "no_mlc", False):
        ablation["enable_mlc"] = False
    if getattr(args, "no_tta_p", False):
        ablation["enable_tta_p"] = False
    if getattr(args, "no_tta_m", False):
        ablation["enable_tta_m"] = False
    if ablation:
        overrides["ablation"] = ablation
    return config_mod.ConfigBundle(config_mod.resolve(args.config, overrides))


def _sweep_override(resolved: dict, param: str, value):
    section, _, key = param.partition(".")
    if not key or section not in resolved or not isinstance(resolved[section], dict) \
            or key not in resolved[section]:
        raise config_mod.ConfigError(f"unknown sweep parameter {param!r}")
    out = {**resolved, section: {**resolved[section], key: value}}
    return out


def _sweep_one(task):
    resolved, param, value, out_dir, protocol = task
    bundle = config_mod.ConfigBundle(_sweep_override(resolved, param, value))
    paths = pipeline.run_full_pipeline(bundle, out_dir, protocol=protocol)
    import csv

    with open(paths["csv"]) as f:
        rows = [r for r in csv.DictReader(f) if r["protocol"] == protocol]
    r = rows[0]
    return (value, r["acc_all"], r["acc_old"], r["acc_new"], r["ndc"])


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="protostream",
                                     description="streaming category discovery pipeline")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled set and stream")
    _add_common(p)

    p = sub.add_parser("train", help="offline representation learning")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True, help="labeled OCDE dataset")

    p = sub.add_parser("run", help="process a stream with the online engine")
    _add_common(p)
    p.add_argument("--labeled", type=Path, help="labeled OCDE dataset for memory init")
    p.add_argument("--stream", type=Path, required=True, help="stream OCDE dataset")
    p.add_argument("--adapter", type=Path, required=True, help="trained adapter file")
    p.add_argument("--resume", type=Path, default=None,
                   help="memory snapshot to resume from instead of labeled init")

    p = sub.add_parser("eval", help="score a prediction log")
    _add_common(p, protocol=True)
    p.add_argument("--predictions", type=Path, required=True)
    p.add_argument("--labels", type=Path, required=True,
                   help="OCDE dataset carrying evaluation labels (the stream file)")
    p.add_argument("--n-known", type=int, default=None,
                   help="known classes are [0, N); inferred from the log when omitted")

    p = sub.add_parser("gradcheck", help="finite-difference validation of all gradients")
    p.add_argument("--states", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("angles", help="intra/inter angle statistics of a trained adapter")
    p.add_argument("--data", type=Path, required=True, help="labeled OCDE dataset")
    p.add_argument("--adapter", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("sweep", help="grid sweep of one config parameter")
    _add_common(p, protocol=True)
    p.add_argument("--param", required=True, help="dotted config key, e.g. decision.tau_sim")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--parallel", action="store_true", help="evaluate grid points in a worker pool")

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except EngineError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


def _dispatch(args) -> int:
    if args.command == "synth":
        pipeline.do_synth(_bundle(args), args.out)
        return 0

    if args.command == "train":
        pipeline.do_train(args.data, _bundle(args), args.out)
        return 0

    if args.command == "run":
        if args.resume is None and args.labeled is None:
            print("run needs --labeled (or --resume)", file=sys.stderr)
            return 2
        pipeline.do_run(args.labeled, args.stream, args.adapter, _bundle(args),
                        args.out, resume_memory=args.resume)
        return 0

    if args.command == "eval":
        known = range(args.n_known) if args.n_known is not None else None
        pipeline.do_eval(args.predictions, args.labels, args.protocol, args.out,
                         known_classes=known, hash_code_lengths=args.hash_baseline)
        return 0

    if args.command == "gradcheck":
        results = gradcheck_mod.run_all(n_states=args.states, tol=args.tol,
                                        step=args.step, seed=args.seed)
        ok = True
        for r in results:
            status = "PASS" if r.passed else "FAIL"
            print(f"{status} {r.name}: max relative error {r.max_rel_err:.3e} (tol {r.tol:g})")
            ok = ok and r.passed
        return 0 if ok else 1

    if args.command == "angles":
        path = pipeline.do_angles(args.data, args.adapter, args.out)
        print(path)
        return 0

    if args.command == "sweep":
        bundle = _bundle(args)
        protocol = "strict" if args.protocol == "both" else args.protocol
        values = []
        for item in args.values.split(","):
            item = item.strip()
            try:
                values.append(int(item))
            except ValueError:
                values.append(float(item))
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        tasks = [(bundle.resolved, args.param, v, out / f"{args.param}={v}", protocol)
                 for v in values]
        if args.parallel:
            with ProcessPoolExecutor() as pool:
                rows = list(pool.map(_sweep_one, tasks))
        else:
            rows = [_sweep_one(t) for t in tasks]
        pipeline.write_csv(out / "sweep.csv",
                           [args.param, "acc_all", "acc_old", "acc_new", "ndc"], rows)
        print(out / "sweep.csv")
        return 0

    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
