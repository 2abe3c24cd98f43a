"""Command-line front end: ``patient-queues {rates,nash,poa,simulate,selftest}``.

Results go to stdout as JSON and are a pure function of the inputs and
flags.  Each run also writes a manifest (command, inputs, seeds,
tolerances, version, wall-clock) to ``--out-dir`` or, without one, to stderr.

Exit codes: 0 success, 2 input error, 3 non-convergence, 4 validation failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .fixtures import NAMED
from .instances import random_feasible, symmetric_instance, uniform_profile
from .io import InputError, dumps, instance_document, load_instance, load_profile

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED, EXIT_INVALID = 0, 2, 3, 4


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {s}")
    return v


def _fraction(s: str) -> float:
    v = float(s)
    if not 0.0 <= v <= 0.9:
        raise argparse.ArgumentTypeError(f"must lie in [0, 0.9], got {s}")
    return v


def _common() -> argparse.ArgumentParser:
    c = argparse.ArgumentParser(add_help=False)
    c.add_argument("--instance", required=True,
                   help="JSON file, or a generator: fixture:NAME, symmetric:N[:EPS], random:N:M[:MARGIN[:SEED]]")
    c.add_argument("--profile", help="JSON profile file (rows in the instance's input order)")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--tol", type=float, default=None, help="command-specific tolerance")
    c.add_argument("--out-dir", type=Path, default=None)
    return c


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="patient-queues", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    common = _common()

    r = sub.add_parser("rates", parents=[common], help="aging rates of a fixed profile")
    r.add_argument("--method", choices=("auto", "brute", "dinkelbach"), default="auto")

    n = sub.add_parser("nash", parents=[common], help="best-response dynamics and a Nash certificate")
    n.add_argument("--max-rounds", type=_positive_int, default=100)
    n.add_argument("--damping", type=float, default=0.5)
    n.add_argument("--order", choices=("round-robin", "simultaneous"), default="round-robin")
    n.add_argument("--init", choices=("uniform", "random", "vertex"), default="uniform",
                   help="starting profile when --profile is not given")
    n.add_argument("--variant", choices=("rate", "descent"), default="rate")

    p = sub.add_parser("poa", parents=[common], help="water-filling bound and the e/(e-1) sweep")
    p.add_argument("--verify", action="store_true", help="run find_nash from several starts")
    p.add_argument("--seeds", type=_positive_int, default=3)
    p.add_argument("--inits", default="uniform,random,vertex")
    p.add_argument("--margin", type=float, default=None, help="capacity margin hypothesis (default e/(e-1))")
    p.add_argument("--rescale", action="store_true", help="scale arrivals down until the margin holds")

    s = sub.add_parser("simulate", parents=[common], help="Monte Carlo trajectories")
    s.add_argument("--horizon", type=_positive_int, required=True)
    s.add_argument("--trials", type=_positive_int, default=1)
    s.add_argument("--stride", type=_positive_int, default=None)
    s.add_argument("--burn-in", type=_fraction, default=0.2)
    s.add_argument("--check", action="store_true", help="compare slopes with the analytic rates")

    t = sub.add_parser("selftest", help="run the acceptance criteria")
    t.add_argument("--only", default=None, help="comma-separated criterion numbers")
    t.add_argument("--out-dir", type=Path, default=None)
    return ap


# -- inputs --------------------------------------------------------------------

def resolve_instance(source: str):
    """``(instance, embedded_profile_or_None, description)`` from a path or generator source."""
    if source.startswith("fixture:"):
        name = source.split(":", 1)[1]
        if name not in NAMED:
            raise InputError(f"{source}: unknown fixture; choose from {', '.join(sorted(NAMED))}")
        inst, prof = NAMED[name]()
        return inst, prof, {"generator": source}
    if source.startswith("symmetric:"):
        parts = source.split(":")[1:]
        try:
            nq = int(parts[0])
            eps = float(parts[1]) if len(parts) > 1 else 0.05
            inst, prof = symmetric_instance(nq, eps)
        except (ValueError, IndexError) as e:
            raise InputError(f"{source}: {e}") from None
        return inst, prof, {"generator": source}
    if source.startswith("random:"):
        parts = source.split(":")[1:]
        try:
            nq, m = int(parts[0]), int(parts[1])
            margin = float(parts[2]) if len(parts) > 2 else 1.0
            seed = int(parts[3]) if len(parts) > 3 else 0
            inst = random_feasible(nq, m, margin, seed)
        except (ValueError, IndexError, RuntimeError) as e:
            raise InputError(f"{source}: {e}") from None
        return inst, None, {"generator": source}
    inst, prof = load_instance(source)
    return inst, prof, {"path": source}


def _profile(args, inst, embedded, notes: list):
    if args.profile:
        return load_profile(args.profile, inst), {"path": args.profile}
    if embedded is not None:
        return embedded, {"source": "instance"}
    notes.append("no profile given: uniform profile applied")
    return uniform_profile(inst.n, inst.m), {"generator": "uniform"}


# -- commands ------------------------------------------------------------------

def cmd_rates(args, inst, embedded, man) -> tuple[dict, int]:
    from .rates import compute_rates

    p, src = _profile(args, inst, embedded, man["notes"])
    man["profile"] = src
    part = compute_rates(p, inst, method=args.method)
    return {"instance": instance_document(inst, p), **part.to_dict(inst)}, EXIT_OK


def cmd_nash(args, inst, embedded, man) -> tuple[dict, int]:
    from .equilibrium import find_nash
    from .poa import initial_profile

    tol = 1e-6 if args.tol is None else args.tol
    man["tolerances"]["nash"] = tol
    if args.profile or embedded is not None:
        init, src = _profile(args, inst, embedded, man["notes"])
    else:
        init, src = initial_profile(args.init, args.seed, inst), {"generator": args.init, "seed": args.seed}
    man["profile"] = src
    res = find_nash(inst, init, args.max_rounds, tol, args.damping, args.order, args.variant)
    out = {"instance": instance_document(inst), **res.to_dict(inst)}
    return out, EXIT_OK if res.converged else EXIT_NONCONVERGED


def cmd_poa(args, inst, embedded, man) -> tuple[dict, int]:
    from .equilibrium import is_nash
    from .instances import E_FACTOR
    from .io import unsort_servers
    from .poa import SweepConfig, check_poa_bound, nash_lower_bound, scale_to_margin, verify_e_bound, waterfill_table

    tol = 1e-6 if args.tol is None else args.tol
    man["tolerances"]["poa"] = tol
    table = [{"k": s.k, "x": unsort_servers(inst, s.x).tolist(), "value": s.value} for s in waterfill_table(inst)]
    out = {"instance": instance_document(inst), "waterfill": table, "bound": nash_lower_bound(inst)}
    code = EXIT_OK
    if args.profile:
        p, src = _profile(args, inst, embedded, man["notes"])
        man["profile"] = src
        cert = is_nash(p, inst, tol)
        out["profile_check"] = {"is_nash": cert.is_nash,
                                "bound_holds": check_poa_bound(p, inst, tol, cert) if cert.is_nash else None}
    if args.verify:
        margin = E_FACTOR if args.margin is None else args.margin
        target = scale_to_margin(inst, margin) if args.rescale else inst
        inits = tuple(x for x in args.inits.split(",") if x)
        cfg = SweepConfig(seeds=tuple(range(args.seed, args.seed + args.seeds)), inits=inits, margin=margin)
        man["seeds"] = list(cfg.seeds)
        try:
            rep = verify_e_bound(target, cfg)
        except ValueError as e:
            raise InputError(f"--inits: {e}") from None
        if args.rescale:
            rep["instance"] = instance_document(target)
        out["verify"] = rep
        if rep["status"] == "unstable Nash found":
            code = EXIT_INVALID
        elif rep["status"] == "no certified Nash":
            code = EXIT_NONCONVERGED
    return out, code


def cmd_simulate(args, inst, embedded, man) -> tuple[dict, int]:
    from .simulator import SimConfig, convergence_check, empirical_rates, simulate, write_csv

    p, src = _profile(args, inst, embedded, man["notes"])
    man["profile"] = src
    try:
        cfg = SimConfig(args.horizon, args.trials, args.seed, args.stride)
    except ValueError as e:
        raise InputError(str(e)) from None
    man["seeds"] = [args.seed]
    trajs = simulate(p, inst, cfg)
    if args.out_dir is not None:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        for tr in trajs:
            write_csv(tr, args.out_dir / f"trial_{tr.trial:03d}.csv", inst)
    slopes = [inst.unsort_queues(empirical_rates(tr, args.burn_in)).tolist() for tr in trajs]
    out = {
        "instance": instance_document(inst, p),
        "horizon": cfg.horizon,
        "trials": cfg.trials,
        "stride": cfg.checkpoint_stride,
        "seed": cfg.seed,
        "burn_in": args.burn_in,
        "slopes": slopes,
        "mean_slopes": np.mean(slopes, axis=0).tolist(),
        "final_ages": [inst.unsort_queues(tr.ages[-1]).tolist() for tr in trajs],
    }
    code = EXIT_OK
    if args.check:
        tol = 0.015 if args.tol is None else args.tol
        man["tolerances"]["check"] = tol
        rep = convergence_check(p, inst, cfg, tol, args.burn_in, trajectories=trajs)
        out["check"] = {
            "analytic": inst.unsort_queues(np.asarray(rep["analytic"])).tolist(),
            "max_deviation": rep["max_deviation"],
            "tol": tol,
            "separation_ok": rep["separation_ok"],
            "passed": rep["passed"],
        }
        code = EXIT_OK if rep["passed"] else EXIT_INVALID
    if args.out_dir is not None:
        (args.out_dir / "summary.json").write_text(dumps(out))
    return out, code


def cmd_selftest(args) -> int:
    from .acceptance import run_all

    only = None if args.only is None else {int(x) for x in args.only.split(",")}
    results = run_all(only, stream=sys.stdout)
    doc = {"criteria": [r.to_dict() for r in results], "passed": all(r.passed for r in results)}
    if args.out_dir is not None:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        (args.out_dir / "selftest.json").write_text(dumps(doc))
    return EXIT_OK if doc["passed"] else EXIT_INVALID


COMMANDS = {"rates": cmd_rates, "nash": cmd_nash, "poa": cmd_poa, "simulate": cmd_simulate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "selftest":
        return cmd_selftest(args)
    start = time.time()
    man = {
        "command": args.command,
        "argv": list(sys.argv[1:] if argv is None else argv),
        "version": __version__,
        "seeds": [args.seed],
        "tolerances": {},
        "notes": [],
    }
    try:
        inst, embedded, desc = resolve_instance(args.instance)
        man["instance"] = desc
        out, code = COMMANDS[args.command](args, inst, embedded, man)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    man["exit_code"] = code
    man["wall_clock_s"] = round(time.time() - start, 3)
    man["started_at"] = time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(start))
    sys.stdout.write(dumps(out))
    if args.out_dir is not None:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        (args.out_dir / f"{args.command}.json").write_text(dumps(out))
        (args.out_dir / "manifest.json").write_text(dumps(man))
    else:
        sys.stderr.write("manifest: " + dumps(man))
    return code


if __name__ == "__main__":
    sys.exit(main())
