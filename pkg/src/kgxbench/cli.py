"""Command-line entry points for validation and comparison experiments."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import workflow
from .errors import BenchmarkError, ParseError

EXIT_OK = 0
EXIT_TASK_FAILURE = 1
EXIT_USAGE = 2


def _add_common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("setup_csv", help="experiment setup CSV")
    parser.add_argument("--workdir", default=".", help="working directory with data/ and artifacts")
    parser.add_argument("--max-parallel", type=int, default=1, help="concurrent task limit")
    parser.add_argument("--seed-override", type=int, default=None, help="replace every configured seed")
    parser.add_argument(
        "--verifier",
        default="mock",
        help="registered verifier to use (built in: mock, remote)",
    )
    parser.add_argument("--verifier-url", default=None, help="chat-completion endpoint for --verifier remote")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kgxbench",
        description="Benchmark explanation methods for link prediction on knowledge graphs.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, title in ((workflow.VALIDATION, "agreement with ground-truth explanation labels"),
                        (workflow.COMPARISON, "ranking of explanation methods by average FSV")):
        sub = subparsers.add_parser(name, help=title)
        _add_common_arguments(sub)
    return parser


def _print_summary(dag: workflow.Dag, report: workflow.RunReport, aggregate: dict) -> None:
    by_task = {entry.task: entry for entry in report.entries}
    header = f"{'metrics task':<60} {'status':<14} result"
    print(header)
    print("-" * len(header))
    for spec in sorted(dag.tasks_of_kind(workflow.METRICS), key=lambda s: s.output_name):
        entry = by_task.get(spec.output_name)
        status = entry.status if entry else "not-run"
        result = ""
        payload = aggregate.get(spec.output_name)
        if payload:
            parts = []
            for name, value in sorted(payload.items()):
                if isinstance(value, float):
                    parts.append(f"{name}={value:.4f}")
                elif isinstance(value, dict) and "accuracy" in value:
                    parts.append(f"{name}.accuracy={value['accuracy']:.4f}")
                else:
                    parts.append(f"{name}={value}")
            result = " ".join(parts)
        print(f"{spec.output_name:<60} {status:<14} {result}")
    executed = report.count("executed")
    hits = report.count("cache-hit")
    failed = report.count("failed") + report.count("skipped-failed")
    print(f"\n{executed} executed, {hits} cache hits, {failed} failed/skipped")


def _run(mode: str, args: argparse.Namespace) -> int:
    options = workflow.EngineOptions(
        verifier=args.verifier,
        verifier_url=args.verifier_url,
        seed_override=args.seed_override,
    )
    try:
        rows = workflow.parse_setup(args.setup_csv, mode)
        dag = workflow.instantiate_dag(rows, mode, options)
    except (ParseError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    store = workflow.ArtifactStore(Path(args.workdir))
    try:
        report = workflow.execute(dag, store, max_parallel=args.max_parallel, options=options)
    except BenchmarkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TASK_FAILURE
    aggregate = workflow.aggregate_metrics(dag, store)
    workflow.write_aggregate(aggregate, store.root)
    _print_summary(dag, report, aggregate)
    return EXIT_OK if report.ok else EXIT_TASK_FAILURE


def cmd_validation(setup_path: str, workdir: str = ".", **flags) -> int:
    """Programmatic equivalent of `kgxbench validation`."""
    argv = [workflow.VALIDATION, setup_path, "--workdir", workdir]
    for key, value in flags.items():
        argv.extend((f"--{key.replace('_', '-')}", str(value)))
    return main(argv)


def cmd_comparison(setup_path: str, workdir: str = ".", **flags) -> int:
    """Programmatic equivalent of `kgxbench comparison`."""
    argv = [workflow.COMPARISON, setup_path, "--workdir", workdir]
    for key, value in flags.items():
        argv.extend((f"--{key.replace('_', '-')}", str(value)))
    return main(argv)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return _run(args.command, args)


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
