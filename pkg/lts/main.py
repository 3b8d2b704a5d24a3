"""
Command-line entry point

    python -m lts.main run --config configs/skewed_benchmark.env --mode tasks --ces 32
    python -m lts.main compare a.csv b.csv
    python -m lts.main report trace.jsonl [other.jsonl] [--out-dir report/]
    python -m lts.main mesh --config configs/skewed_benchmark.env --out mesh.bin --binary

Exit status: 0 ok, 1 comparison above tolerance, 2 usage error,
3 numerical or transport failure.
"""
import argparse
import logging
import sys
from typing import Dict, List, Optional

from pydantic import ValidationError

from lts.config import settings
from lts.errors import NumericalBlowUp, TransportError
from lts.schemas.run_config import RunConfig
from lts.services.mesh_service import generate_mesh
from lts.services.run_service import RunService
from lts.utils import mesh_io
from lts.utils.snapshot_io import compare_snapshots
from lts.utils.trace_io import export_report, kind_totals, read_trace, state_delta, state_totals

logger = logging.getLogger("lts")

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_USAGE = 2
EXIT_FAILURE = 3


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value run file")
    parser.add_argument("--mode", choices=["reference", "tasks", "dist"])
    parser.add_argument("--dim", type=int, choices=[1, 2])
    parser.add_argument("--nx", type=int)
    parser.add_argument("--ny", type=int)
    parser.add_argument("--refine", help="x0:x1[:y0:y1]:scale regions separated by ';'")
    parser.add_argument("--boundary", choices=["periodic", "transmissive"])
    parser.add_argument("--physics", choices=["advection", "burgers"])
    parser.add_argument("--velocity")
    parser.add_argument("--initial", choices=["sine", "gaussian", "step", "linear"])
    parser.add_argument("--cfl", type=float)
    parser.add_argument("--ces", type=int, help="CEs per rank")
    parser.add_argument("--workers", help="worker spec WxS[,WxS...]")
    parser.add_argument("--scheduler", choices=["fifo", "prio"])
    parser.add_argument("--no-pack", dest="pack", action="store_const", const=False)
    parser.add_argument("--symbolic", action="store_const", const=True)
    parser.add_argument("--repartition-every", type=int)
    parser.add_argument("--stream-insertion", dest="hold_insertion", action="store_const", const=False,
                        help="let workers start while an iteration is still being inserted")
    parser.add_argument("--ranks", type=int)
    parser.add_argument("--transport", choices=["loopback", "socket"])
    parser.add_argument("--rank-id", type=int)
    parser.add_argument("--listen", help="host:port this rank listens on")
    parser.add_argument("--peers", help="host:port of every rank, in rank order")
    parser.add_argument("--trace")
    parser.add_argument("--snapshot")
    parser.add_argument("--summary")
    parser.add_argument("--level-stats")
    parser.add_argument("--dag-stats")
    parser.add_argument("--iterations", type=int)
    parser.add_argument("--theta-max", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lts", description="Task-based local time stepping solver")
    parser.add_argument("--log-level", default=settings.LOG_LEVEL)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the solver")
    _add_run_flags(run)

    compare = sub.add_parser("compare", help="max relative difference of two snapshots")
    compare.add_argument("first")
    compare.add_argument("second")
    compare.add_argument("--tolerance", type=float, default=1e-12)

    report = sub.add_parser("report", help="per-worker state totals of a trace")
    report.add_argument("trace")
    report.add_argument("other", nargs="?", help="second trace to compare state totals against")
    report.add_argument("--out-dir", help="write states, kinds, gantt and ready CSVs here")

    mesh = sub.add_parser("mesh", help="export the configured mesh")
    _add_run_flags(mesh)
    mesh.add_argument("--out", required=True)
    mesh.add_argument("--binary", action="store_true")
    return parser


_NON_CONFIG = {"command", "config", "log_level", "tolerance", "out", "binary", "first", "second", "other", "out_dir"}


def config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides: Dict[str, object] = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG and v is not None}
    if args.config:
        return RunConfig.from_file(args.config, **overrides)
    return RunConfig(**overrides)


def _run(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    result = RunService(config).run()
    if result is not None:
        logger.info(
            f"[Run] done: t={result.time:.6g} total={result.total_extensive:.17g} "
            f"conservation defect={result.conservation_defect:.3e}"
        )
    return EXIT_OK


def _compare(args: argparse.Namespace) -> int:
    difference = compare_snapshots(args.first, args.second)
    print(f"max relative difference: {difference:.3e}")
    return EXIT_OK if difference <= args.tolerance else EXIT_MISMATCH


def _report(args: argparse.Namespace) -> int:
    events, samples = read_trace(args.trace)
    print(state_totals(events).to_string(index=False))
    print()
    print(kind_totals(events).to_string(index=False))
    if samples:
        ready = [s.ready for s in samples]
        print(f"\nready tasks: mean {sum(ready) / len(ready):.2f}, max {max(ready)} ({len(ready)} samples)")
    if args.other:
        other_events, _ = read_trace(args.other)
        print()
        print(state_delta(events, other_events).to_string(index=False))
    if args.out_dir:
        for path in export_report(events, samples, args.out_dir):
            logger.info(f"[Report] wrote {path}")
    return EXIT_OK


def _mesh(args: argparse.Namespace) -> int:
    mesh = generate_mesh(config_from_args(args).mesh_spec())
    if args.binary:
        mesh_io.write_binary(mesh, args.out)
    else:
        mesh_io.write_text(mesh, args.out)
    logger.info(f"[Mesh] {mesh.n_cells} cells / {mesh.n_faces} faces written to {args.out}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    handlers = {"run": _run, "compare": _compare, "report": _report, "mesh": _mesh}
    try:
        return handlers[args.command](args)
    except (ValidationError, ValueError, FileNotFoundError) as exc:
        logger.error(f"[Run] invalid input: {exc}")
        return EXIT_USAGE
    except (NumericalBlowUp, TransportError) as exc:
        logger.error(f"[Run] aborted: {exc}")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
