"""Command-line front end: ``cascade-ir <subcommand> ...``.

Subcommands
-----------
run       one (variant, n, q) point; optionally dump one frame's transcript
sweep     one variant over a QBER grid, schedule sized from each q
rateless  schedule sized from a fixed estimate p, channel QBER swept
compare   several variants at one QBER on the same frames
optimize  compass search or power-of-two sweep over block sizes
replay    re-verify a transcript's ledger totals

Results go to ``--csv`` / ``--json`` (CSV to stdout when neither is given).
A JSON config file given with ``--config`` overrides the flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .bitframe import UsageError
from .harness import (
    Experiment,
    default_workers,
    provenance,
    qber_grid,
    replay_frame,
    reports_csv,
    run_experiment,
    write_reports,
)
from .optimizer import EtaObjective, compass_search, pow2_compass_search, power_of_two_sweep, write_history
from .protocol.transcript import Transcript, TranscriptError, replay
from .schedules import VARIANTS, ScheduleError

log = logging.getLogger("cascade_ir")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class ConfigError(Exception):
    pass


def _common(p: argparse.ArgumentParser, variant=True) -> None:
    if variant:
        p.add_argument("--variant", default="original", help="schedule variant (default: original)")
    p.add_argument("--n", type=int, default=10_000, help="frame length in bits")
    p.add_argument("--frames", type=int, default=10_000, help="frames per grid point")
    p.add_argument("--seed", type=int, default=1, help="master seed")
    p.add_argument("--passes", type=int, default=None, help="override the variant's pass count")
    p.add_argument("--workers", type=int, default=1, help="worker processes (results do not depend on it)")
    p.add_argument("--chunk", type=int, default=500, help="frames per work unit")
    p.add_argument("--csv", default=None, help="CSV output path")
    p.add_argument("--json", default=None, help="JSON output path")
    p.add_argument("--config", default=None, help="JSON file whose keys override the flags")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cascade-ir", description="Cascade reconciliation simulator")
    ap.add_argument("--version", action="version", version=f"cascade-ir {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one grid point")
    _common(p)
    p.add_argument("--q", type=float, required=True, help="true QBER")
    p.add_argument("--p", type=float, default=None, help="QBER estimate used for the schedule (default: q)")
    p.add_argument("--transcript", default=None, help="write the transcript of frame 0 here")

    p = sub.add_parser("sweep", help="one variant over a QBER grid")
    _common(p)
    p.add_argument("--q", required=True, help="grid as start:stop:step or a comma list")

    p = sub.add_parser("rateless", help="fixed schedule estimate, swept channel QBER")
    _common(p)
    p.add_argument("--p", type=float, required=True, help="QBER estimate used for the schedule")
    p.add_argument("--q", required=True, help="grid as start:stop:step or a comma list")

    p = sub.add_parser("compare", help="several variants at one QBER")
    _common(p, variant=False)
    p.add_argument("--variants", required=True, help="comma separated variant names")
    p.add_argument("--q", type=float, required=True)

    p = sub.add_parser("optimize", help="search block sizes minimising eta_EC")
    _common(p, variant=False)
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--mode", choices=("compass", "pow2-compass", "pow2-sweep"), default="compass")
    p.add_argument("--init", default=None, help="comma separated starting sizes (compass) or exponents (pow2-compass)")
    p.add_argument("--delta", type=float, default=None, help="initial step (default: k1)")
    p.add_argument("--budget", type=int, default=100, help="maximum distinct evaluations")
    p.add_argument("--exponents", default="3:5,7:9,11:13",
                   help="pow2-sweep ranges per size, e.g. 3:5,7:9,11:13")
    p.add_argument("--history", default=None, help="evaluation-history CSV path")
    p.set_defaults(passes=14)

    p = sub.add_parser("replay", help="re-verify a transcript's ledger")
    p.add_argument("--transcript", required=True)
    p.add_argument("-v", "--verbose", action="count", default=0)
    return ap


def _apply_config(args: argparse.Namespace) -> None:
    path = getattr(args, "config", None)
    if not path:
        return
    try:
        cfg = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    for key, value in cfg.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise ConfigError(f"unknown config key {key!r}")
        setattr(args, attr, value)


def _check_writable(*paths) -> None:
    for path in paths:
        if path is None:
            continue
        p = Path(path)
        parent = p.parent if str(p.parent) else Path(".")
        if not parent.is_dir():
            raise ConfigError(f"cannot write output {path}: directory {parent} does not exist")
        try:
            with open(p, "a"):
                pass
        except OSError as exc:
            raise ConfigError(f"cannot write output {path}: {exc.strerror}") from exc


def _check_variant(name: str) -> None:
    if name not in VARIANTS or name == "custom":
        raise ConfigError(f"unknown variant {name!r}; choose from {', '.join(v for v in VARIANTS if v != 'custom')}")


def _grid(spec) -> tuple[float, ...]:
    if isinstance(spec, (int, float)):
        return (float(spec),)
    if isinstance(spec, list):
        return tuple(float(v) for v in spec)
    return qber_grid(str(spec))


def _emit(reports, args, meta: dict) -> None:
    if args.csv is None and args.json is None:
        sys.stdout.write(reports_csv(reports))
        return
    write_reports(reports, args.csv, args.json, meta)
    if args.csv is not None and args.json is None:
        Path(str(args.csv) + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _progress(rep) -> None:
    log.info("q=%.4f f_ec=%.5f eta_ec=%.5f rounds=%.1f fer=%.3g (<= %.3g)",
             rep.q_true, rep.f_ec, rep.eta_ec, rep.mean_rounds, rep.fer, rep.fer_ci_high)


def _experiment(args, variant: str, grid, p_init) -> Experiment:
    return Experiment(variant, args.n, tuple(grid), p_init=p_init, frames_per_point=args.frames,
                      master_seed=args.seed, passes=args.passes, chunk=args.chunk)


def _cmd_points(args, variant: str, grid, p_init) -> int:
    _check_variant(variant)
    _check_writable(args.csv, args.json, getattr(args, "transcript", None))
    exp = _experiment(args, variant, grid, p_init)
    meta = provenance(args.seed, {"command": args.command, "experiment": exp.to_dict(),
                                  "schedules": [exp.schedule_for(q).to_dict() for q in exp.q_grid]})
    reports = run_experiment(exp, args.workers, _progress)
    if getattr(args, "transcript", None):
        out = replay_frame(exp.schedule_for(grid[0]), grid[0], args.seed, 0, transcript=True)
        out.transcript.dump(args.transcript)
    _emit(reports, args, meta)
    return EXIT_OK


def _cmd_compare(args) -> int:
    names = [v.strip() for v in str(args.variants).split(",") if v.strip()]
    if not names:
        raise ConfigError("no variants given")
    for v in names:
        _check_variant(v)
    _check_writable(args.csv, args.json)
    reports, scheds = [], []
    for v in names:
        exp = _experiment(args, v, (args.q,), None)
        scheds.append(exp.schedule_for(args.q).to_dict())
    for v in names:
        reports += run_experiment(_experiment(args, v, (args.q,), None), args.workers, _progress)
    _emit(reports, args, provenance(args.seed, {"command": "compare", "schedules": scheds}))
    return EXIT_OK


def _ints(spec: str) -> list[int]:
    return [int(v) for v in str(spec).split(",") if v.strip()]


def _cmd_optimize(args) -> int:
    _check_writable(args.csv, args.json, args.history)
    obj = EtaObjective(args.q, args.n, args.frames, args.seed, args.passes or 14, args.workers, args.chunk)
    if args.mode == "pow2-sweep":
        ranges = []
        for part in str(args.exponents).split(","):
            lo, _, hi = part.partition(":")
            ranges.append(list(range(int(lo), int(hi or lo) + 1)))
        entries = power_of_two_sweep(obj, ranges)
        rows = [(e.sizes, e.eta, e.se, e.frames) for e in entries]
        best = entries[0].sizes
    else:
        if args.mode == "compass":
            k1 = max(1, round(1 / args.q))
            init = _ints(args.init) if args.init else [k1, 2 * k1]
            res = compass_search(obj, init, args.delta or init[0], args.budget, 1.0, 1, args.n)
        else:
            init = _ints(args.init) if args.init else [6, 9]
            res = pow2_compass_search(obj, init, args.budget)
        rows = [(h.point, h.eta, h.se, h.frames) for h in res.history]
        best = res.best
        if args.history:
            write_history(res.history, args.history)
    lines = ["candidate,eta_ec,eta_ec_se,frames"]
    lines += ["x".join(map(str, c)) + f",{e!r},{s!r},{f}" for c, e, s, f in rows]
    text = "\n".join(lines) + "\n"
    meta = provenance(args.seed, {"command": "optimize", "mode": args.mode, "q": args.q, "n": args.n,
                                  "best": list(best)})
    if args.csv:
        Path(args.csv).write_text(text)
    if args.json:
        Path(args.json).write_text(json.dumps({"meta": meta, "evaluations": [
            {"candidate": list(c), "eta_ec": e, "eta_ec_se": s, "frames": f} for c, e, s, f in rows
        ]}, indent=2, sort_keys=True) + "\n")
    if not args.csv and not args.json:
        sys.stdout.write(text)
    log.warning("best block sizes: %s", ",".join(map(str, best)))
    return EXIT_OK


def _cmd_replay(args) -> int:
    try:
        tr = Transcript.load(args.transcript)
    except OSError as exc:
        raise ConfigError(f"cannot read transcript {args.transcript}: {exc.strerror}") from exc
    rep = replay(tr)
    print(f"m={rep.m} rounds={rep.rounds} corrections={rep.corrections} "
          f"{'consistent' if rep.ok else 'INCONSISTENT'}")
    for msg in rep.problems:
        print(f"  {msg}")
    return EXIT_OK if rep.ok else EXIT_FAIL


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(message)s")
    try:
        _apply_config(args)
        if getattr(args, "workers", 1) == 0:
            args.workers = default_workers()
        if args.command == "run":
            return _cmd_points(args, args.variant, (args.q,), args.p)
        if args.command == "sweep":
            return _cmd_points(args, args.variant, _grid(args.q), None)
        if args.command == "rateless":
            return _cmd_points(args, args.variant, _grid(args.q), args.p)
        if args.command == "compare":
            return _cmd_compare(args)
        if args.command == "optimize":
            return _cmd_optimize(args)
        return _cmd_replay(args)
    except ConfigError as exc:
        print(f"cascade-ir: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ScheduleError as exc:
        print(f"cascade-ir: schedule error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TranscriptError as exc:
        print(f"cascade-ir: malformed transcript: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except UsageError as exc:
        print(f"cascade-ir: invalid argument: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
