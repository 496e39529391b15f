"""Command-line entry point: ``qnsp run|sweep|verify|inspect``.

Every subcommand prints a JSON report on stdout.  Exit status is 0 when all
checks pass, 1 when a check fails or a run terminates early, and 2 for
configuration or usage errors.  ``QNSP_THREADS`` sets the FFT worker count for
single runs and the number of concurrent rungs for sweeps.
"""
import argparse
import json
import logging
import os
import sys

import scipy.fft

from .checkpoint import inspect
from .config import SweepSchedule, load_config
from .errors import QNSPError
from .functionals import _json_default
from .harness import VERIFY_KINDS, run_config, sweep, thread_count, verify


def _emit(obj):
    json.dump(obj, sys.stdout, indent=2, default=_json_default)
    sys.stdout.write("\n")


def _floats(text):
    return tuple(float(s) for s in text.split(","))


def cmd_run(args):
    cfg = load_config(args.config)
    if args.out:
        cfg = cfg.replace(output_dir=args.out)
    with scipy.fft.set_workers(thread_count()):
        res = run_config(cfg)
    traj = res.trajectory
    _emit({"status": traj.status, "cause": traj.cause, "steps": len(traj.steps) - 1,
           "final_time": traj.states[-1].t, "output_dir": cfg.output_dir,
           "checks": res.checks, "passed": res.passed})
    return 0 if res.passed else 1


def cmd_sweep(args):
    cfg = load_config(args.config)
    if args.param and args.ladder:
        schedule = SweepSchedule.parse(args.param, args.ladder)
    elif cfg.sweep is not None:
        schedule = cfg.sweep
    else:
        raise QNSPError("give --param and --ladder or a [sweep] section")
    rep = sweep(cfg, schedule)
    out_dir = args.out or cfg.output_dir
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, f"sweep_{schedule.param}.json"), "w") as fh:
            json.dump(rep, fh, indent=2, default=_json_default)
    _emit(rep)
    return 0 if rep["complete"] and rep["isolated"] else 1


def cmd_verify(args):
    opts = {}
    if args.kind == "bohm":
        opts = {k: v for k, v in (("N", args.N), ("samples", args.samples),
                                  ("seed", args.seed)) if v is not None}
    elif args.kind == "truncation":
        opts = {k: v for k, v in (("sample_count", args.samples), ("seed", args.seed))
                if v is not None}
    elif args.kind == "commutator" and args.radii:
        opts = {"radii": _floats(args.radii)}
    elif args.kind == "mms-order":
        opts = {k: v for k, v in (("N", args.N),) if v is not None}
        if args.dts:
            opts["dts"] = _floats(args.dts)
    with scipy.fft.set_workers(thread_count()):
        passed, rep = verify(args.kind, **opts)
    _emit({"kind": args.kind, "passed": passed, "report": rep})
    return 0 if passed else 1


def cmd_inspect(args):
    _emit({"path": args.checkpoint, "records": inspect(args.checkpoint)})
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="qnsp", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one configuration file")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (overrides [output] dir)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="vanishing-limit ladder over one parameter")
    p.add_argument("config")
    p.add_argument("--param", choices=("eps", "mu", "delta", "eta", "eps_friction"))
    p.add_argument("--ladder", help="start,ratio,count")
    p.add_argument("--out", help="directory for the sweep report")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="run a verification suite")
    p.add_argument("kind", choices=sorted(VERIFY_KINDS))
    p.add_argument("--N", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--radii", help="comma-separated mollifier radii")
    p.add_argument("--dts", help="comma-separated time steps")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("inspect", help="print the records of a QNSPF1 checkpoint")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_inspect)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (QNSPError, OSError) as exc:
        _emit({"error": type(exc).__name__, "message": str(exc),
               "field": getattr(exc, "field", None)})
        return 2


if __name__ == "__main__":
    sys.exit(main())
