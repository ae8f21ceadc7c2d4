"""seedes command line: run, worker, replay, eval, gen-dataset, analyze.

Exit codes: 0 success, 1 invalid input (manifest, flags, dataset schema),
2 runtime failure (missing or corrupt artifact, digest mismatch, numerical
fault), 3 protocol fault in a distributed run.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__

log = logging.getLogger("seedes")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_PROTOCOL = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_RUNTIME):
        super().__init__(message)
        self.code = code


# run ------------------------------------------------------------------------

_RUN_FLAGS = [
    ("--population-size", "es.population_size", int),
    ("--noise-scale", "es.noise_scale", float),
    ("--learning-rate", "es.learning_rate", float),
    ("--iterations", "es.iterations", int),
    ("--workers", "es.workers", int),
    ("--master-seed", "es.master_seed", int),
    ("--output-dir", "output_dir", str),
    ("--checkpoint-every", "checkpoint_every", int),
    ("--address", "distributed.address", str),
    ("--timeout", "distributed.timeout", float),
    ("--heartbeat-interval", "distributed.heartbeat_interval", float),
]


def cmd_run(args) -> int:
    from .manifest import apply_overrides, load_manifest, preset
    from .runner import execute, resolved

    if args.manifest and args.preset:
        raise CliError("give either --manifest or --preset, not both", EXIT_INVALID)
    base = Path.cwd()
    if args.manifest:
        man = load_manifest(args.manifest)
        base = Path(args.manifest).resolve().parent
    else:
        man = preset(args.preset or "sphere")
    flags = {path: getattr(args, flag.lstrip("-").replace("-", "_"))
             for flag, path, _ in _RUN_FLAGS}
    sigma_given = flags["es.noise_scale"] is not None or "SEEDES_NOISE_SCALE" in os.environ
    alpha_given = flags["es.learning_rate"] is not None or "SEEDES_LEARNING_RATE" in os.environ
    man = apply_overrides(man, flags)
    if args.no_spawn:
        man.distributed.spawn_workers = False
    if args.preset and args.preset.startswith("conciseness") and sigma_given and not alpha_given:
        man.es.learning_rate = man.es.noise_scale / 2
    man = resolved(man, base).validate()

    def progress(t, row):
        if t == 1 or t % args.log_every == 0 or t == man.es.iterations:
            log.info("iteration %d: reward mean %.6g max %.6g, |update| %.4g", t,
                     row["reward_mean"], row["reward_max"], row["update_norm"])

    result = execute(man, on_iteration=progress)
    print(f"final digest {result.log.final_digest}")
    print(f"run directory {man.output_dir}")
    return EXIT_OK


def cmd_worker(args) -> int:
    from .dist.transport import LinkClosed, TcpLink
    from .dist.worker import Worker
    from .runner import worker_setup

    address = args.address or os.environ.get("SEEDES_COORDINATOR_ADDRESS")
    if not address:
        raise CliError("no coordinator address (--address or SEEDES_COORDINATOR_ADDRESS)",
                       EXIT_INVALID)
    hb = args.heartbeat_interval
    if hb is None:
        hb = float(os.environ.get("SEEDES_HEARTBEAT_INTERVAL", 5.0))
    try:
        link = TcpLink(address, retries=args.retries)
    except LinkClosed as exc:
        raise CliError(str(exc), EXIT_PROTOCOL) from None
    try:
        return Worker(link, worker_setup, name=args.name, heartbeat_interval=hb).run()
    finally:
        link.close()


# replay ---------------------------------------------------------------------

def _load_params(path: Path):
    from .params import ParameterSet, SnapshotError

    if not path.exists():
        raise CliError(f"{path}: file not found")
    try:
        return ParameterSet.load(path)
    except SnapshotError as exc:
        raise CliError(str(exc)) from None


def _load_runlog(path: Path):
    from .runlog import RunLog, RunLogError

    if not path.exists():
        raise CliError(f"{path}: file not found")
    try:
        return RunLog.load(path)
    except RunLogError as exc:
        raise CliError(str(exc)) from None


def cmd_replay(args) -> int:
    from .engine import ReplayError, replay

    run = Path(args.run_dir)
    runlog = _load_runlog(Path(args.log) if args.log else run / "runlog.jsonl")
    theta0 = _load_params(Path(args.theta0) if args.theta0
                          else run / "snapshots" / "iter_000000.esp")
    if args.upto is None and runlog.final_digest is None:
        raise CliError(f"{run}: run log has no footer (incomplete run); use --upto")
    try:
        params = replay(runlog, theta0, upto=args.upto)
    except ReplayError as exc:
        raise CliError(f"replay refused: {exc}") from None
    digest = params.digest()
    if args.upto is not None:
        snap = run / "snapshots" / f"iter_{args.upto:06d}.esp"
        if snap.exists() and _load_params(snap).digest() != digest:
            raise CliError(f"replayed parameters differ from checkpoint {snap}")
    if args.out:
        params.save(args.out)
    print(f"replayed {len(runlog.records) if args.upto is None else args.upto} iteration(s); "
          f"digest {digest} matches")
    return EXIT_OK


# eval -----------------------------------------------------------------------

def cmd_eval(args) -> int:
    from .metrics.behavior import evaluate_behavior, greedy_reward
    from .tasks.datasets import load_pairs
    from .tinylm import TinyLm

    if args.run_dir:
        snap = Path(args.run_dir) / "snapshots" / "final.esp"
    elif args.snapshot:
        snap = Path(args.snapshot)
    else:
        raise CliError("give --run-dir or --snapshot", EXIT_INVALID)
    model = TinyLm(_load_params(snap))
    base = TinyLm(_load_params(Path(args.base))) if args.base else TinyLm.load()
    pairs = load_pairs(args.dataset)
    labels = {"sigma": args.sigma, "alpha": args.alpha, "beta": args.beta}
    point = evaluate_behavior(model, base, pairs, args.samples, temperature=args.temperature,
                              seed=args.seed, max_new=args.max_new, name=args.label, **labels)
    greedy = greedy_reward(model, pairs, args.max_new)
    print(f"{args.label}: reward {point.reward:.4f} (normalized {point.normalized_reward:.4f}), "
          f"KL {point.kl:.6f}, greedy reward {greedy:.4f}, {point.responses} responses, "
          f"{point.skipped} skipped")
    if args.out:
        with open(args.out, "a") as fh:
            fh.write(point.to_json() + "\n")
    return EXIT_OK


# gen-dataset ----------------------------------------------------------------

def cmd_gen_dataset(args) -> int:
    from .tasks.countdown import generate_instances, write_instances

    records = generate_instances(args.count, args.size, args.seed, max_number=args.max_number,
                                 max_target=args.max_target)
    write_instances(args.out, records)
    solvable = sum(r["solvable"] for r in records)
    print(f"wrote {len(records)} instances ({solvable} solvable) to {args.out}")
    return EXIT_OK


# analyze --------------------------------------------------------------------

def _read_points(paths):
    from .metrics.behavior import BehaviorPoint

    points = []
    for path in paths:
        p = Path(path)
        if not p.exists():
            raise CliError(f"{p}: file not found")
        for lineno, line in enumerate(p.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            try:
                points.append(BehaviorPoint(**json.loads(line)))
            except (json.JSONDecodeError, TypeError) as exc:
                raise CliError(f"{p}:{lineno}: not a behavior point ({exc})") from None
    return points


def _write_rows(path: Path, rows, columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in columns})
    with open(path.with_suffix(".jsonl"), "w") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def cmd_analyze(args) -> int:
    from dataclasses import asdict

    from .metrics.consistency import COLUMNS, ConsistencyError, run_consistency, to_markdown
    from .metrics.pareto import pareto_front
    from .metrics.shift import shift_histogram, step_std_from_norms

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    did = False
    if args.points:
        points = _read_points(args.points)
        front = [asdict(p) for p in pareto_front(points)]
        cols = list(asdict(points[0]).keys())
        _write_rows(out / "pareto_front.csv", front, cols)
        print(f"pareto front: {len(front)} of {len(points)} point(s)")
        try:
            rows = run_consistency(points)
        except ConsistencyError as exc:
            if args.require_consistency:
                raise CliError(str(exc), EXIT_INVALID) from None
            log.warning("consistency table skipped: %s", exc)
        else:
            _write_rows(out / "consistency.csv", rows, COLUMNS)
            (out / "consistency.md").write_text(to_markdown(rows))
            print(to_markdown(rows), end="")
        did = True
    for run in args.shift or []:
        run = Path(run)
        theta0 = _load_params(run / "snapshots" / "iter_000000.esp")
        theta1 = _load_params(run / "snapshots" / "final.esp")
        metrics = run / "metrics.csv"
        if not metrics.exists():
            raise CliError(f"{metrics}: file not found")
        with open(metrics) as fh:
            norms = [float(r["update_norm"]) for r in csv.DictReader(fh)]
        hist = shift_histogram(theta0, theta1, args.bins,
                               step_std=step_std_from_norms(norms, theta0.size), seed=args.seed)
        name = run.name or "run"
        rows = list(hist.rows())
        _write_rows(out / f"shift_{name}.csv", rows, list(rows[0].keys()))
        (out / f"shift_{name}.meta.json").write_text(json.dumps(hist.meta, indent=2) + "\n")
        print(f"shift histogram for {run}: {hist.meta['parameters']} parameters, "
              f"reference std {hist.meta['reference_std']:.4g}")
        did = True
    if not did:
        raise CliError("nothing to analyze: give --points and/or --shift", EXIT_INVALID)
    return EXIT_OK


# parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    from .manifest import PRESETS

    ap = argparse.ArgumentParser(prog="seedes", description="Seeded-noise evolution strategies.")
    ap.add_argument("--version", action="version", version=f"seedes {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run ES from a manifest or preset")
    p.add_argument("--manifest")
    p.add_argument("--preset", choices=PRESETS)
    for flag, _, typ in _RUN_FLAGS:
        p.add_argument(flag, type=typ, default=None)
    p.add_argument("--no-spawn", action="store_true",
                   help="wait for externally started workers instead of spawning them")
    p.add_argument("--log-every", type=int, default=10)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("worker", help="join a coordinator and evaluate seeds")
    p.add_argument("--address")
    p.add_argument("--name", default=f"worker-{os.getpid()}")
    p.add_argument("--heartbeat-interval", type=float, default=None)
    p.add_argument("--retries", type=int, default=50)
    p.set_defaults(func=cmd_worker)

    p = sub.add_parser("replay", help="rebuild final parameters from a run log")
    p.add_argument("run_dir")
    p.add_argument("--log")
    p.add_argument("--theta0")
    p.add_argument("--upto", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("eval", help="sampled reward and KL of a fine-tuned TinyLm")
    p.add_argument("--run-dir")
    p.add_argument("--snapshot")
    p.add_argument("--base")
    p.add_argument("--dataset", default="conciseness-eval")
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-new", type=int, default=32)
    p.add_argument("--label", default="es")
    p.add_argument("--sigma", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gen-dataset", help="generate labelled Countdown instances")
    p.add_argument("--size", type=int, default=4)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-number", type=int, default=100)
    p.add_argument("--max-target", type=int, default=1000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("analyze", help="Pareto fronts, consistency tables, shift histograms")
    p.add_argument("--points", nargs="*", help="behavior point JSONL files")
    p.add_argument("--shift", nargs="*", help="run directories")
    p.add_argument("--bins", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--require-consistency", action="store_true")
    p.add_argument("--out", default="analysis")
    p.set_defaults(func=cmd_analyze)
    return ap


def main(argv=None) -> int:
    from .dist.coordinator import ProtocolFault
    from .engine import ConfigError, NonFiniteParameterError
    from .tasks.countdown import SolverLimitError
    from .tasks.datasets import DatasetError

    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose + 1, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, DatasetError, SolverLimitError) as exc:
        errors = getattr(exc, "errors", [str(exc)])
        for e in errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except ProtocolFault as exc:
        print(f"protocol fault: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (NonFiniteParameterError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
