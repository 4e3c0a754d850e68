"""Command-line surface.

Subcommands: ``run`` executes a workload file, ``kmeans`` and ``bench-io``
run the built-in applications, ``validate`` checks a workload file and
prints nothing on success. Exit codes: 0 success, 1 validation or usage
error, 2 runtime failure. Results land in CSV (see bench.CSV_HEADER).
"""

from __future__ import annotations

import argparse
import sys

from ..errors import PilotError, ValidationError
from ..manager import ScheduleMode
from ..runtime import PilotRuntime, RuntimeConfig
from .bench import bench_io, throughput_mb_s, write_csv
from .kmeans import KMeansConfig, run_kmeans
from .workload import parse_workload, run_workload


class _Parser(argparse.ArgumentParser):
    """Usage errors exit 1 (argparse's default of 2 means runtime failure
    in this tool's code scheme)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _int_list(text):
    return [int(part) for part in text.split(",") if part != ""]


def _str_list(text):
    return [part for part in text.split(",") if part != ""]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pilotkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a workload file")
    p_run.add_argument("spec_file")

    p_val = sub.add_parser("validate", help="check a workload file")
    p_val.add_argument("spec_file")

    p_km = sub.add_parser("kmeans", help="run the KMeans application")
    p_km.add_argument("--points", type=int, required=True)
    p_km.add_argument("--clusters", type=int, required=True)
    p_km.add_argument("--dims", type=int, default=2)
    p_km.add_argument("--backend", choices=("file", "memory"), default="memory")
    p_km.add_argument("--partitions", type=int, default=4)
    p_km.add_argument("--reducers", type=int, default=2)
    p_km.add_argument("--seed", type=int, default=0)
    p_km.add_argument("--epsilon", type=float, default=0.0)
    p_km.add_argument("--max-iter", type=int, default=10)
    p_km.add_argument("--workers", type=int, default=4,
                      help="cores of the local pilot backing the run")
    p_km.add_argument("--out", default=None, help="write rows to this CSV file")

    p_io = sub.add_parser("bench-io", help="storage put/get/parallel-read timings")
    p_io.add_argument("--sizes", type=_int_list, default=[1, 8, 64],
                      help="payload sizes in MB, comma separated")
    p_io.add_argument("--backends", type=_str_list, default=["file", "memory"])
    p_io.add_argument("--partitions", type=int, default=4)
    p_io.add_argument("--workers", type=int, default=4)
    p_io.add_argument("--out", default=None, help="write rows to this CSV file")
    return parser


def _with_local_pilot(workers):
    runtime = PilotRuntime()
    pilot_id = runtime.start_local_pilot(cores=workers)
    if not runtime.wait_pilot(pilot_id, timeout=30.0):
        runtime.close()
        raise PilotError("local pilot did not come up")
    return runtime


def _cmd_run(args) -> int:
    spec = parse_workload(args.spec_file)
    mode = (ScheduleMode.HARD_AFFINITY if spec.schedule_mode == "hard"
            else ScheduleMode.SOFT_AFFINITY)
    with PilotRuntime(RuntimeConfig(schedule_mode=mode)) as runtime:
        result = run_workload(runtime, spec)
    for user_id, state in result.unit_states.items():
        print(f"unit {user_id}: {state.value}")
    for job_id in result.job_outputs:
        print(f"job {job_id}: done")
    if spec.output_csv:
        print(f"results: {spec.output_csv}")
    return 0


def _cmd_validate(args) -> int:
    parse_workload(args.spec_file)
    return 0


def _cmd_kmeans(args) -> int:
    config = KMeansConfig(
        n_points=args.points, n_clusters=args.clusters, n_dims=args.dims,
        max_iterations=args.max_iter, epsilon=args.epsilon, seed=args.seed,
        backend=args.backend, n_partitions=args.partitions,
        n_reducers=args.reducers,
    )
    runtime = _with_local_pilot(args.workers)
    try:
        result = run_kmeans(runtime, config)
    finally:
        runtime.close()
    totals = [r.wall_ms for r in result.rows if r.phase == "total" and r.iteration > 0]
    print(
        f"kmeans: {result.iterations} iterations, "
        f"{'converged' if result.converged else 'iteration budget reached'}, "
        f"final wcss {result.wcss_history[-1]:.6f}, "
        f"total {sum(totals):.1f} ms"
    )
    if args.out:
        write_csv(args.out, result.rows)
        print(f"results: {args.out}")
    return 0


def _cmd_bench_io(args) -> int:
    runtime = _with_local_pilot(args.workers)
    try:
        rows = bench_io(
            runtime, args.sizes, backends=args.backends,
            n_partitions=args.partitions,
        )
    finally:
        runtime.close()
    for row in rows:
        if row.phase == "total":
            print(
                f"{row.scenario} {row.backend} {row.iteration} MB: "
                f"{row.wall_ms:.1f} ms, {throughput_mb_s(row):.1f} MB/s"
            )
    if args.out:
        write_csv(args.out, rows)
        print(f"results: {args.out}")
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "validate": _cmd_validate,
    "kmeans": _cmd_kmeans,
    "bench-io": _cmd_bench_io,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"pilotkit: validation error: {exc}", file=sys.stderr)
        return 1
    except PilotError as exc:
        print(f"pilotkit: {exc.code}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"pilotkit: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
