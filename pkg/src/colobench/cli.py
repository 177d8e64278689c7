"""Command line entry point: ``validate``, ``bootstrap``, ``run`` and ``analyze``.

Exit codes: 0 success, 1 validation findings, 2 runtime failure, 3 usage error.
Diagnostics go to standard error; results go to files under ``--out``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .analysis import analyze, export_csv, load_run
from .bootstrap import ClusterConfig, SSHTransport, execute_provisioning, load_cluster_config, plan_provisioning
from .catalog import default_catalog
from .clock import RealClock, SimClock
from .connector import SimulatedConnector, SwarmConnector
from .coordinator import RunInterrupted, RunLog, run_suite
from .errors import ColobenchError, ConfigError
from .experiment_model import ExperimentSuite, load_suite, validate_suite
from .monitoring import Collector, HttpEndpoint, MetricStore
from .scenario import SimulatedNodeEndpoint

EXIT_OK = 0
EXIT_FINDINGS = 1
EXIT_RUNTIME = 2
EXIT_USAGE = 3

log = logging.getLogger("colobench")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits with 2 by default
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="colobench", description="Co-located workload benchmarking on edge clusters.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    verbs = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    p = verbs.add_parser("validate", help="check an experiment description against a cluster")
    p.add_argument("--experiments", required=True, metavar="FILE")
    p.add_argument("--cluster", required=True, metavar="FILE")

    p = verbs.add_parser("bootstrap", help="provision every node of the cluster")
    p.add_argument("--cluster", required=True, metavar="FILE")
    p.add_argument("--dry-run", action="store_true", help="print the plan and touch nothing")
    p.add_argument("--out", metavar="DIR", help="write the provisioning report here")
    p.add_argument("--parallel", type=int, default=1, metavar="N", help="nodes provisioned at once")

    p = verbs.add_parser("run", help="execute an experiment suite")
    p.add_argument("--experiments", required=True, metavar="FILE")
    p.add_argument("--cluster", required=True, metavar="FILE")
    p.add_argument("--connector", choices=("simulated", "swarm"), default="simulated")
    p.add_argument("--out", default=".", metavar="DIR")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--baseline", metavar="RECORD", help="record_name to compare the other records against")
    p.add_argument("--agent-port", type=int, default=9100, help="metrics agent port (swarm only)")

    p = verbs.add_parser("analyze", help="recompute the analysis of an exported run")
    p.add_argument("--in", dest="input", required=True, metavar="DIR")
    p.add_argument("--baseline", metavar="RECORD")
    p.add_argument("--out", required=True, metavar="DIR")
    return parser


def _err(message: str) -> None:
    print(message, file=sys.stderr)


def _load_inputs(args) -> tuple[ExperimentSuite, ClusterConfig, int]:
    """Parse and validate; the int is the exit code to stop with, or 0."""
    catalog = default_catalog()
    failed = False
    suite = cluster = None
    try:
        cluster = load_cluster_config(args.cluster)
    except ConfigError as exc:
        _err(f"{args.cluster}: {exc}")
        failed = True
    try:
        suite = load_suite(args.experiments, catalog)
    except ConfigError as exc:
        _err(f"{args.experiments}: {exc}")
        failed = True
    if failed:
        return suite, cluster, EXIT_FINDINGS
    report = validate_suite(suite, cluster, catalog)
    for finding in report.findings:
        _err(f"{args.experiments}: {finding}")
    return suite, cluster, EXIT_OK if report.ok else EXIT_FINDINGS


def cmd_validate(args) -> int:
    suite, _, code = _load_inputs(args)
    if code == EXIT_OK:
        _err(f"{args.experiments}: ok ({len(suite.experiments)} experiments, {suite.total_runs} runs)")
    return code


def cmd_bootstrap(args) -> int:
    try:
        cluster = load_cluster_config(args.cluster)
    except ConfigError as exc:
        _err(f"{args.cluster}: {exc}")
        return EXIT_FINDINGS
    plan = plan_provisioning(cluster)
    if args.dry_run:
        sys.stdout.write(plan.to_text())
        return EXIT_OK
    report = execute_provisioning(plan, SSHTransport(), max_workers=max(1, args.parallel))
    for outcome in report.outcomes:
        _err(f"{outcome.hostname} {outcome.kind} {outcome.status}" + (f" {outcome.reason}" if outcome.reason else ""))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "provision-report.json").write_text(report.to_text(), encoding="utf-8")
    return EXIT_OK if report.ok else EXIT_RUNTIME


def _simulated(cluster: ClusterConfig, store: MetricStore, seed: int):
    clock = SimClock(0.0)
    connector = SimulatedConnector(clock, seed=seed)
    endpoints = {
        host: SimulatedNodeEndpoint(host, clock, connector=connector, seed=seed, noise=0.02)
        for host in cluster.hostnames
    }
    return clock, connector, Collector(endpoints, store, clock)


def _swarm(cluster: ClusterConfig, store: MetricStore, out: Path, port: int):
    clock = RealClock()
    connector = SwarmConnector(clock, out / "stacks")
    nodes = [cluster.manager, *cluster.nodes]
    endpoints = {n.hostname: HttpEndpoint(f"http://{n.ip}:{port}/metrics") for n in nodes}
    return clock, connector, Collector(endpoints, store, clock, max_workers=len(endpoints))


def cmd_run(args) -> int:
    suite, cluster, code = _load_inputs(args)
    if code != EXIT_OK:
        return code
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    store_dir = out / "store"
    stale = store_dir / "samples.jsonl"
    if stale.exists():
        stale.unlink()
    store = MetricStore(store_dir)
    if args.connector == "swarm":
        clock, connector, collector = _swarm(cluster, store, out, args.agent_port)
    else:
        clock, connector, collector = _simulated(cluster, store, args.seed)

    code = EXIT_OK
    with open(out / "run.log", "w", encoding="utf-8") as log_file:
        runlog = RunLog(log_file)
        try:
            records = run_suite(suite, cluster, default_catalog(), connector, collector, clock, runlog=runlog)
        except RunInterrupted as exc:
            _err("interrupted: all deployments stopped, exporting partial records")
            records = exc.records
            code = EXIT_RUNTIME
        finally:
            store.close()
    for record in records:
        for run in record.workloads:
            if run.outcome.startswith("failed"):
                _err(f"{record.record_name} rep {record.repetition}: {run.instance_id} {run.outcome}")
    report = analyze(records, baseline=args.baseline)
    export_csv(records, report, out)
    _err(f"{len(records)} records written to {out}")
    return code


def cmd_analyze(args) -> int:
    records = load_run(args.input)
    report = analyze(records, baseline=args.baseline)
    export_csv(records, report, args.out)
    _err(f"{len(report.entries)} analysis entries written to {args.out}")
    return EXIT_OK


COMMANDS = {"validate": cmd_validate, "bootstrap": cmd_bootstrap, "run": cmd_run, "analyze": cmd_analyze}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        return COMMANDS[args.verb](args)
    except KeyboardInterrupt:
        _err("interrupted")
        return EXIT_RUNTIME
    except (ColobenchError, OSError) as exc:
        _err(f"error: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
