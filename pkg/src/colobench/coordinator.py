"""Experiment lifecycle: schedule slots, deploy, trigger shifted workloads,
poll health, stop at slot end and assemble one record per repetition."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Callable, Mapping, Sequence, TextIO

from .bootstrap import ClusterConfig
from .catalog import AppMetrics, DeploymentDescription, WorkloadCatalog, default_catalog, parse_app_metrics
from .clock import Clock
from .connector import Connector, DeploymentHandle, HealthStatus, ServiceState
from .errors import ColobenchError, ConnectorError, MetricParseError
from .experiment_model import Experiment, ExperimentSuite
from .monitoring import Collector, MetricKey, MetricStore, TimeSeries, query

log = logging.getLogger(__name__)

DEFAULT_POLL_INTERVAL = 5.0

# Ordering of events due at the same instant.
_PRIO_STOP = 0
_PRIO_START = 1
_PRIO_DEPLOY = 2
_PRIO_POLL = 3


@dataclass(frozen=True)
class RunSlot:
    experiment_index: int
    repetition: int  # 1-based
    start: float
    end: float
    triggers: tuple[float, ...]  # absolute offset per workload, in workload order

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class RunSchedule:
    slots: tuple[RunSlot, ...]
    idle: float

    @property
    def span(self) -> float:
        return self.slots[-1].end if self.slots else 0.0


def build_schedule(suite: ExperimentSuite) -> RunSchedule:
    """Experiments back to back, each repeated, separated by the idle gap.

    Offsets are seconds from the start of the run; the idle gap sits only
    between consecutive slots.
    """
    idle = float(suite.idle_between_experiments.seconds)
    slots = []
    cursor = 0.0
    for i, exp in enumerate(suite.experiments):
        for rep in range(1, exp.repetition + 1):
            if slots:
                cursor += idle
            end = cursor + exp.duration.seconds
            triggers = tuple(cursor + w.shift.seconds for w in exp.workloads)
            slots.append(RunSlot(i, rep, cursor, end, triggers))
            cursor = end
    return RunSchedule(tuple(slots), idle)


# -- records -------------------------------------------------------------------


@dataclass
class WorkloadRun:
    index: int
    name: str
    kind: str
    instance_id: str
    nodes: tuple[str, ...]
    planned_trigger: float
    trigger_time: float | None = None
    handle: DeploymentHandle | None = None
    final_status: HealthStatus | None = None
    error: str | None = None
    app_metrics: dict[str, AppMetrics] = field(default_factory=dict)
    services: dict[str, list[str]] = field(default_factory=dict)  # hostname -> service instance names
    description: DeploymentDescription | None = None

    @property
    def outcome(self) -> str:
        if self.error:
            return f"failed({self.error})"
        if self.final_status is None:
            return "not-started"
        failed = [s for s in self.final_status.services.values() if s.state == "failed"]
        if self.final_status.error:
            return f"failed({self.final_status.error})"
        if failed:
            return f"failed({failed[0].reason})"
        return self.final_status.state


@dataclass
class ExperimentRecord:
    record_name: str
    file_stem: str
    experiment_index: int
    repetition: int
    planned_start: float
    planned_end: float
    start: float | None = None
    end: float | None = None
    workloads: list[WorkloadRun] = field(default_factory=list)
    series: dict[MetricKey, TimeSeries] = field(default_factory=dict)
    gaps: dict[str, list[float]] = field(default_factory=dict)
    interrupted: bool = False
    live: bool = False

    @property
    def nodes(self) -> list[str]:
        """Target nodes plus any host that ran one of the services."""
        return sorted({n for w in self.workloads for n in (*w.nodes, *w.services)})


class RunInterrupted(ColobenchError):
    """Raised by :func:`run_suite` after an interrupt; carries the partial records."""

    def __init__(self, records: list[ExperimentRecord]):
        super().__init__("run interrupted")
        self.records = records


# -- run log -------------------------------------------------------------------------


class RunLog:
    """Line-oriented events: ``<iso-timestamp> <event> <subject>``."""

    def __init__(self, stream: TextIO | None = None):
        self.stream = stream
        self.lines: list[str] = []

    def event(self, when: float, event: str, subject: str) -> None:
        stamp = datetime.fromtimestamp(when, tz=timezone.utc).isoformat()
        line = f"{stamp} {event} {subject}"
        self.lines.append(line)
        if self.stream is not None:
            self.stream.write(line + "\n")
            self.stream.flush()


# -- health ------------------------------------------------------------------------------


class HealthMonitor:
    """Polls handles and logs every state change with its detection time."""

    def __init__(self, connector: Connector, clock: Clock, runlog: RunLog | None = None):
        self.connector = connector
        self.clock = clock
        self.runlog = runlog
        self.latest: dict[str, HealthStatus] = {}
        self.transitions: list[tuple[float, str, str, str, str]] = []

    def _note(self, now: float, instance: str, service: str, old: str, new: str) -> None:
        self.transitions.append((now, instance, service, old, new))
        if self.runlog is not None:
            self.runlog.event(now, "health-change", f"{instance}/{service}:{old}->{new}")

    def poll(self, handles: Sequence[DeploymentHandle]) -> dict[str, HealthStatus]:
        now = self.clock.now()
        out = {}
        for handle in handles:
            try:
                status = self.connector.status(handle)
            except ColobenchError as exc:
                log.info("status of %s failed: %s", handle.instance_id, exc)
                status = HealthStatus.probe_error()
            previous = self.latest.get(handle.instance_id)
            if status.error:
                if previous is None or previous.error != status.error:
                    self._note(now, handle.instance_id, "*", previous.state if previous else "unknown", f"failed({status.error})")
            else:
                for name, state in sorted(status.services.items()):
                    old: ServiceState | None = None
                    if previous is not None and not previous.error:
                        old = previous.services.get(name)
                    if old != state:
                        self._note(now, handle.instance_id, name, str(old) if old else "unknown", str(state))
            self.latest[handle.instance_id] = status
            out[handle.instance_id] = status
        return out


def poll_health(
    handles: Sequence[DeploymentHandle], connector: Connector, monitor: HealthMonitor | None = None, clock: Clock | None = None
) -> dict[str, HealthStatus]:
    if monitor is None:
        if clock is None:
            raise ValueError("poll_health needs a monitor or a clock")
        monitor = HealthMonitor(connector, clock)
    return monitor.poll(handles)


# -- coordinator ---------------------------------------------------------------------------


def instance_id_for(exp: Experiment, repetition: int, index: int) -> str:
    return f"{exp.file_stem}.rep{repetition}.w{index}.{exp.workloads[index].name}"


class ExperimentCoordinator:
    """Runs a suite on an injected clock, connector and collector.

    Everything happens on clock events, so the same code runs against
    simulated time and wall time.
    """

    def __init__(
        self,
        suite: ExperimentSuite,
        cluster: ClusterConfig,
        connector: Connector,
        clock: Clock,
        collector: Collector | None = None,
        store: MetricStore | None = None,
        catalog: WorkloadCatalog | None = None,
        poll_interval: float = DEFAULT_POLL_INTERVAL,
        runlog: RunLog | None = None,
    ):
        self.suite = suite
        self.cluster = cluster
        self.connector = connector
        self.clock = clock
        self.collector = collector
        self.store = store if store is not None else (collector.store if collector is not None else None)
        self.catalog = catalog or default_catalog()
        self.poll_interval = poll_interval
        self.runlog = runlog or RunLog()
        self.health = HealthMonitor(connector, clock, self.runlog)
        self.schedule = build_schedule(suite)
        self.records: list[ExperimentRecord] = []
        self._live: list[WorkloadRun] = []
        self._current: ExperimentRecord | None = None

    # slot actions
    def _start_slot(self, slot: RunSlot, record: ExperimentRecord) -> None:
        record.start = self.clock.now()
        self._current = record
        self.records.append(record)
        self.runlog.event(record.start, "start", f"{record.file_stem}.rep{record.repetition}")

    def _deploy(self, exp: Experiment, run: WorkloadRun) -> None:
        spec = exp.workloads[run.index]
        now = self.clock.now()
        run.trigger_time = now
        self.runlog.event(now, "trigger", run.instance_id)
        try:
            desc = self.catalog.render(spec, self.cluster, record_name=exp.record_name, instance_id=run.instance_id)
            run.description = desc
            run.services = {host: [svc.name for svc in svcs] for host, svcs in sorted(desc.by_node().items())}
            run.handle = self.connector.deploy(desc)
        except (ColobenchError, ValueError) as exc:
            run.error = f"deploy: {exc}"
            self.runlog.event(now, "deploy-failed", f"{run.instance_id} {exc}")
            log.warning("deploy of %s failed: %s", run.instance_id, exc)
            return
        self._live.append(run)

    def _poll(self) -> None:
        handles = [r.handle for r in self._live if r.handle is not None]
        if handles:
            statuses = self.health.poll(handles)
            for run in self._live:
                run.final_status = statuses.get(run.instance_id, run.final_status)

    def _stop_all(self) -> None:
        now = self.clock.now()
        if self._live:
            self._poll()
        for run in self._live:
            try:
                self.connector.stop(run.handle)
            except ColobenchError as exc:
                log.error("stop of %s failed: %s", run.instance_id, exc)
                run.error = run.error or f"stop: {exc}"
            self.runlog.event(now, "stop", run.instance_id)
        self._live = []

    def _end_slot(self, slot: RunSlot, record: ExperimentRecord) -> None:
        live = list(self._live)
        self._stop_all()
        record.end = self.clock.now()
        for run in live:
            self._collect_app_metrics(run)
        self._snapshot(record)
        self._current = None
        self.runlog.event(record.end, "end", f"{record.file_stem}.rep{record.repetition}")

    def _collect_app_metrics(self, run: WorkloadRun) -> None:
        collect = getattr(self.connector, "collect_output", None)
        if collect is None or run.handle is None:
            return
        try:
            outputs = collect(run.handle)
        except ColobenchError as exc:
            log.warning("collecting output of %s failed: %s", run.instance_id, exc)
            return
        template = self.catalog.lookup(run.name)
        for node, text in sorted(outputs.items()):
            try:
                run.app_metrics[node] = parse_app_metrics(template, text)
            except MetricParseError as exc:
                log.warning("unreadable statistics from %s on %s: %s", run.instance_id, node, exc)

    def _snapshot(self, record: ExperimentRecord) -> None:
        if self.store is None or record.start is None or record.end is None:
            return
        nodes = set(record.nodes)
        window = (record.start, record.end)
        for key in self.store.keys():
            if key.node in nodes:
                series = query(self.store, key, window)
                if series.samples:
                    record.series[key] = series
        for node in sorted(nodes):
            gaps = self.store.gaps(node, *window)
            if gaps:
                record.gaps[node] = gaps

    def _plan(self, base: float) -> list:
        timers = []
        for slot in self.schedule.slots:
            exp = self.suite.experiments[slot.experiment_index]
            record = ExperimentRecord(
                record_name=exp.record_name,
                file_stem=exp.file_stem,
                experiment_index=slot.experiment_index,
                repetition=slot.repetition,
                planned_start=base + slot.start,
                planned_end=base + slot.end,
                live=self.clock.live,
            )
            for i, spec in enumerate(exp.workloads):
                run = WorkloadRun(
                    index=i,
                    name=spec.name,
                    kind=self.catalog.resolve(spec.name),
                    instance_id=instance_id_for(exp, slot.repetition, i),
                    nodes=tuple(dict.fromkeys(spec.cluster)),
                    planned_trigger=base + slot.triggers[i],
                )
                record.workloads.append(run)
            start, end = base + slot.start, base + slot.end
            timers.append(self.clock.call_at(start, lambda s=slot, r=record: self._start_slot(s, r), _PRIO_START))
            for run in record.workloads:
                timers.append(
                    self.clock.call_at(run.planned_trigger, lambda e=exp, r=run: self._deploy(e, r), _PRIO_DEPLOY)
                )
            t = start + self.poll_interval
            while t < end:
                timers.append(self.clock.call_at(t, self._poll, _PRIO_POLL))
                t += self.poll_interval
            timers.append(self.clock.call_at(end, lambda s=slot, r=record: self._end_slot(s, r), _PRIO_STOP))
        return timers

    def run(self) -> list[ExperimentRecord]:
        base = self.clock.now()
        if self.collector is not None and not self.collector.running:
            self.collector.start(base)
        timers = self._plan(base)
        try:
            self.clock.run_until(base + self.schedule.span)
        except KeyboardInterrupt:
            for timer in timers:
                timer.cancel()
            self._interrupt()
            raise RunInterrupted(self.records) from None
        finally:
            if self.collector is not None:
                self.collector.stop()
        return self.records

    def _interrupt(self) -> None:
        record = self._current
        live = list(self._live)
        self._stop_all()
        if record is not None:
            record.end = self.clock.now()
            record.interrupted = True
            for run in live:
                self._collect_app_metrics(run)
            self._snapshot(record)
            self.runlog.event(record.end, "interrupted", f"{record.file_stem}.rep{record.repetition}")


def run_suite(
    suite: ExperimentSuite,
    cluster: ClusterConfig,
    catalog: WorkloadCatalog | None,
    connector: Connector,
    collector: Collector | None,
    clock: Clock,
    poll_interval: float = DEFAULT_POLL_INTERVAL,
    runlog: RunLog | None = None,
) -> list[ExperimentRecord]:
    """Execute every slot of ``suite``; a failed workload never ends its slot early."""
    coordinator = ExperimentCoordinator(
        suite, cluster, connector, clock, collector=collector, catalog=catalog, poll_interval=poll_interval, runlog=runlog
    )
    return coordinator.run()
