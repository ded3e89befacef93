"""Command-line entry point: ``levcool <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 runtime instability,
1 anything else the package raises.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import harness
from . import model as M
from .errors import ConfigError, LevcoolError, ManifestMissing, UnstableSystem

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_UNSTABLE = 3

log = logging.getLogger("levcool")


def _common_flags(suppress):
    # accepted both before and after the subcommand
    c = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS if suppress else None)
    c.add_argument("--seed", type=int, help="override the scenario seed")
    c.add_argument("--workers", type=int, help="concurrent simulations (default 1)")
    c.add_argument("--format", choices=("csv",), help="tabular output format (csv)")
    c.add_argument("-v", "--verbose", action="store_true")
    return c


def _parser():
    p = argparse.ArgumentParser(prog="levcool", description=__doc__.splitlines()[0],
                                parents=[_common_flags(False)])
    p.set_defaults(workers=1, format="csv")
    sub = p.add_subparsers(dest="command", required=True)
    common = [_common_flags(True)]

    r = sub.add_parser("run", parents=common, help="simulate a scenario (YAML or an earlier manifest.json)")
    r.add_argument("config")
    r.add_argument("--out", default=None, help="output directory (default runs/<name>)")

    s = sub.add_parser("sweep", parents=common, help="like run, but the scenario must define a sweep")
    s.add_argument("config")
    s.add_argument("--out", default=None)

    a = sub.add_parser("analyze", parents=common, help="recompute fits and summary of an output directory")
    a.add_argument("directory")

    rp = sub.add_parser("reproduce", parents=common, help="desk-scale analogue of a figure")
    rp.add_argument("figure", choices=sorted(harness.FIGURES))
    rp.add_argument("--out", default="runs")
    rp.add_argument("--quick", action="store_true", help="fewer runs and shorter records")

    pj = sub.add_parser("project", parents=common, help="phonon occupation for improved parameters")
    pj.add_argument("--db", type=float, default=0.0, help="phase-noise reduction in dB")
    pj.add_argument("--radius-scale", type=float, default=1.0)
    pj.add_argument("--pressure-pa", type=float, default=None)
    return p


def _print_summary(out: Path):
    sys.stdout.write((out / "summary.csv").read_text())


def _run(args, require_sweep):
    sc = harness.load_any(args.config)
    if require_sweep and sc.sweep is None:
        raise ConfigError(f"{args.config}: sweep: a sweep axis is required for this command")
    if args.seed is not None:
        sc = harness.with_seed(sc, args.seed)
    out = Path(args.out) if args.out else Path("runs") / sc.name
    if sc.sweep is None:
        # a single point must not silently swallow an instability
        p = harness.resolve_points(sc)[0]
        if p.error is None:
            harness._sim_config(sc, p, sc.sim.seed)
    harness.run(sc, out, workers=args.workers)
    rows = harness.read_summary(out)
    if sc.sweep is None and rows and rows[0]["status"] != "ok":
        err = rows[0]["error"]
        if err.startswith(("UnstableSystem", "HeatingDelay")):
            raise UnstableSystem(err)
        raise LevcoolError(err)
    _print_summary(out)
    log.info("wrote %s", out)
    return EXIT_OK


def _analyze(args):
    out = harness.analyze(args.directory)
    _print_summary(out)
    return EXIT_OK


def _reproduce(args):
    for d in harness.reproduce(args.figure, args.out, workers=args.workers, seed=args.seed, fast=args.quick):
        print(f"# {d}")
        _print_summary(d)
    return EXIT_OK


def _project(args):
    system = M.reference_system()
    fb = M.reference_feedback(system)
    proj = M.project_params(system, fb, phase_noise_reduction_db=args.db, radius_scale=args.radius_scale,
                            pressure=args.pressure_pa)
    rec = proj.to_dict()
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["quantity", "value"])
    for k, v in rec.items():
        if isinstance(v, (list, tuple, dict)):
            v = json.dumps(v)
        w.writerow([k, v])
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command in ("run", "sweep"):
            return _run(args, require_sweep=args.command == "sweep")
        if args.command == "analyze":
            return _analyze(args)
        if args.command == "reproduce":
            return _reproduce(args)
        return _project(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UnstableSystem as exc:
        print(f"unstable: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    except ManifestMissing as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except LevcoolError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
