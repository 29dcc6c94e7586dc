"""Command line driver.

Exit status is 0 on success; errors map to the ``exit_code`` of their class
(2 usage/config, 3 grid/dimension, 4 topology, 5 numerics, 6 data).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .classical import integrate_characteristics
from .config import bundled_scenarios, json_schema, load_config
from .ensemble import com_diffusion_experiment
from .errors import StochQMError
from .fields import _fmt, read_field
from .pipeline import NODAL_EPS_REL, diagnose, read_checkpoint, run_scenario
from .schrodinger import Potential
from .stats import compare

log = logging.getLogger("stochqm")


def _emit(obj, out: str | None = None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _run_configs(args, mode: str) -> int:
    configs = [load_config(c) for c in args.config]
    names = [c.name for c in configs]
    if len(set(names)) != len(names):
        raise StochQMError("scenario names must be unique when running several at once")

    def one(cfg):
        out = args.out
        if out is not None and len(configs) > 1:
            out = str(Path(out) / cfg.name)
        return run_scenario(
            cfg,
            mode=mode,
            out_dir=out,
            seed=args.seed,
            checkpoint_every=args.checkpoint_every,
            threads=args.threads,
        )

    if args.jobs > 1 and len(configs) > 1:
        with ThreadPoolExecutor(args.jobs) as pool:
            reports = list(pool.map(one, configs))
    else:
        reports = [one(c) for c in configs]
    if not args.quiet:
        for r in reports:
            last = r.snapshots[-1] if r.snapshots else {}
            brief = {k: last[k] for k in ("t", "kl", "w1", "winding", "nodal_flagged") if k in last}
            print(json.dumps({"scenario": r.name, "mode": r.mode, "steps": r.steps, **brief}, sort_keys=True))
    return 0


def cmd_solve(args) -> int:
    return _run_configs(args, "solve")


def cmd_ensemble(args) -> int:
    return _run_configs(args, "ensemble")


def cmd_diagnose(args) -> int:
    psi, p, _, t = read_checkpoint(args.checkpoint)
    findings = diagnose(psi, p, t, args.eps)
    text = "".join(json.dumps(f, sort_keys=True) + "\n" for f in findings)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_classical(args) -> int:
    if args.config:
        cfg = load_config(args.config)
        U = cfg.potential.build()
        m = cfg.physics.m
        t_end = cfg.schedule.t_end if args.t_end is None else args.t_end
        dt = cfg.grid.dt if args.dt is None else args.dt
    else:
        U = Potential.harmonic(args.k) if args.k > 0 else Potential.free()
        m = args.m
        t_end = 10.0 if args.t_end is None else args.t_end
        dt = 0.01 if args.dt is None else args.dt
    xs, ps = args.x0 or [1.0], args.p0 or [0.0]
    if len(ps) == 1:
        ps = ps * len(xs)
    if len(ps) != len(xs):
        raise StochQMError("--x0 and --p0 need the same number of entries")
    bundle = integrate_characteristics(U, list(zip(xs, ps)), t_end, dt, m)
    every = max(1, args.every)
    lines = ["t,id,x,p"]
    for k in range(0, len(bundle.times), every):
        for i in range(len(xs)):
            lines.append(",".join([_fmt(bundle.times[k]), str(i), _fmt(bundle.x[i, k, 0]), _fmt(bundle.p[i, k, 0])]))
    text = "\n".join(lines) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "characteristics.csv").write_text(text)
        summary = {
            "t_end": float(bundle.times[-1]),
            "x_final": bundle.x[:, -1, 0].tolist(),
            "energy_drift_max": float(np.max(bundle.energy_drift())),
            "caustics": len(bundle.caustics()),
        }
        _emit(summary, str(out / "summary.json"))
    else:
        sys.stdout.write(text)
    return 0


def cmd_comdiff(args) -> int:
    res = com_diffusion_experiment(args.n, args.D, args.steps, args.dt, args.ensembles, args.seed, dim=args.dim)
    _emit(res.summary(), args.out)
    return 0


def cmd_compare(args) -> int:
    a, b = read_field(args.empirical), read_field(args.reference)
    _emit(json.loads(compare(a, b).to_json()), args.out)
    return 0


def cmd_schema(args) -> int:
    _emit(json_schema(), args.out)
    return 0


def cmd_list(args) -> int:
    for name in bundled_scenarios():
        print(name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stochqm", description="Diffusion-particle ensembles against the Schrodinger equation.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def run_flags(sp):
        sp.add_argument("--config", action="append", required=True, help="scenario JSON or bundled name; repeatable")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", help="output directory (one subdirectory per scenario when several)")
        sp.add_argument("--checkpoint-every", type=int, default=0, metavar="N")
        sp.add_argument("--threads", type=int, default=None, help="threads for noise generation")
        sp.add_argument("--jobs", type=int, default=1, help="scenarios to run concurrently")
        sp.add_argument("--quiet", action="store_true")

    sp = sub.add_parser("solve", help="evolve psi only")
    run_flags(sp)
    sp.set_defaults(func=cmd_solve)
    sp = sub.add_parser("ensemble", help="full pipeline: psi, ensemble, comparisons")
    run_flags(sp)
    sp.set_defaults(func=cmd_ensemble)

    sp = sub.add_parser("diagnose", help="winding and nodal findings for a checkpoint")
    sp.add_argument("checkpoint")
    sp.add_argument("--eps", type=float, default=NODAL_EPS_REL, help="node threshold relative to max density")
    sp.add_argument("--out")
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(func=cmd_diagnose)

    sp = sub.add_parser("classical", help="D=0 characteristics")
    sp.add_argument("--config")
    sp.add_argument("--k", type=float, default=1.0, help="harmonic stiffness without a config (0: free)")
    sp.add_argument("--m", type=float, default=1.0)
    sp.add_argument("--x0", type=float, nargs="+")
    sp.add_argument("--p0", type=float, nargs="+")
    sp.add_argument("--t-end", type=float)
    sp.add_argument("--dt", type=float)
    sp.add_argument("--every", type=int, default=1, help="write every N-th time step")
    sp.add_argument("--out")
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(func=cmd_classical)

    sp = sub.add_parser("comdiff", help="center-of-mass diffusion experiment")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--D", type=float, required=True)
    sp.add_argument("--ensembles", type=int, default=200)
    sp.add_argument("--steps", type=int, default=500)
    sp.add_argument("--dt", type=float, default=0.01)
    sp.add_argument("--dim", type=int, default=1, choices=(1, 2))
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(func=cmd_comdiff)

    sp = sub.add_parser("compare", help="compare two density files")
    sp.add_argument("empirical")
    sp.add_argument("reference")
    sp.add_argument("--out")
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("schema", help="print the config JSON schema")
    sp.add_argument("--out")
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(func=cmd_schema)

    sp = sub.add_parser("list", help="list bundled scenarios")
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(func=cmd_list)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except StochQMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 6


if __name__ == "__main__":
    sys.exit(main())
