"""Orchestrator connectors: deploy, health-check and stop rendered workloads.

Two implementations ship: :class:`SimulatedConnector`, a deterministic
stand-in driven by the shared clock, and :class:`SwarmConnector`, which
renders a compose-style stack document and hands it to ``docker stack``.
"""

from __future__ import annotations

import itertools
import random
import re
import subprocess
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol, Sequence

from . import _yaml
from .catalog import AppMetrics, DeploymentDescription, OperationStats, ServiceInstance, format_app_metrics
from .clock import Clock
from .errors import ConnectorError, DuplicateDeployment, UnknownHandle

STATES = ("pending", "running", "failed", "stopped")


@dataclass(frozen=True)
class ServiceState:
    state: str
    reason: str | None = None

    def __str__(self) -> str:
        return f"{self.state}({self.reason})" if self.reason else self.state


PENDING = ServiceState("pending")
RUNNING = ServiceState("running")
STOPPED = ServiceState("stopped")


@dataclass(frozen=True)
class HealthStatus:
    services: Mapping[str, ServiceState]
    error: str | None = None

    @classmethod
    def probe_error(cls, reason: str = "probe-error") -> "HealthStatus":
        return cls({}, error=reason)

    @property
    def state(self) -> str:
        """Worst state across services: failed > pending > running > stopped."""
        if self.error:
            return "failed"
        states = {s.state for s in self.services.values()}
        for candidate in ("failed", "pending", "running"):
            if candidate in states:
                return candidate
        return "stopped"

    def __getitem__(self, service: str) -> ServiceState:
        return self.services[service]

    def summary(self) -> str:
        if self.error:
            return f"failed({self.error})"
        return ",".join(f"{name}={state}" for name, state in sorted(self.services.items()))


@dataclass(frozen=True)
class DeploymentHandle:
    id: str
    instance_id: str
    submitted_at: float


class Connector(Protocol):
    def deploy(self, desc: DeploymentDescription) -> DeploymentHandle: ...

    def status(self, handle: DeploymentHandle) -> HealthStatus: ...

    def stop(self, handle: DeploymentHandle) -> bool: ...

    def collect_output(self, handle: DeploymentHandle) -> dict[str, str]:
        """Raw application statistics per target node ("" when none)."""


# -- simulated connector ---------------------------------------------------------


@dataclass
class _SimService:
    instance: ServiceInstance
    ready_at: float
    fail_at: float | None = None
    fail_reason: str = "scripted failure"
    stop_at: float | None = None
    stopped_at: float | None = None

    def state_at(self, now: float) -> ServiceState:
        if self.stopped_at is not None and now >= self.stopped_at:
            return STOPPED
        if self.stop_at is not None and now >= self.stop_at:
            return STOPPED
        if self.fail_at is not None and now >= self.fail_at:
            return ServiceState("failed", self.fail_reason)
        if now >= self.ready_at:
            return RUNNING
        return PENDING


@dataclass
class _SimDeployment:
    handle: DeploymentHandle
    desc: DeploymentDescription
    services: dict[str, _SimService]
    stopped_at: float | None = None
    status_errors: int = 0


@dataclass
class _Script:
    fail: dict[str, tuple[float, str]] = field(default_factory=dict)
    stop: dict[str, float] = field(default_factory=dict)
    status_errors: int = 0
    deploy_error: str | None = None


class SimulatedConnector:
    """Deterministic in-process orchestrator.

    Each service becomes running ``startup_delay`` seconds after deploy.
    Failures, early stops and status errors are scripted per workload
    instance id, relative to the deploy time.
    """

    def __init__(
        self,
        clock: Clock,
        startup_delay: float | Mapping[str, float] | Callable[[ServiceInstance], float] = 3.0,
        seed: int = 0,
    ):
        self.clock = clock
        self.startup_delay = startup_delay
        self.seed = seed
        self._deployments: dict[str, _SimDeployment] = {}
        self._active: dict[str, str] = {}  # instance id -> handle id
        self._scripts: dict[str, _Script] = {}
        self._ids = itertools.count(1)
        self._lock = threading.Lock()

    # scripting
    def _script(self, instance_id: str) -> _Script:
        return self._scripts.setdefault(instance_id, _Script())

    def script_failure(self, instance_id: str, service: str, after: float, reason: str = "scripted failure") -> None:
        """Fail ``service`` (template name, e.g. ``model-server``, or full instance name) ``after`` s post-deploy."""
        self._script(instance_id).fail[service] = (after, reason)

    def script_stop(self, instance_id: str, service: str, after: float) -> None:
        self._script(instance_id).stop[service] = after

    def script_status_errors(self, instance_id: str, count: int = 1) -> None:
        self._script(instance_id).status_errors += count

    def script_deploy_error(self, instance_id: str, reason: str = "scripted deploy error") -> None:
        self._script(instance_id).deploy_error = reason

    def _delay(self, svc: ServiceInstance) -> float:
        if callable(self.startup_delay):
            return float(self.startup_delay(svc))
        if isinstance(self.startup_delay, Mapping):
            return float(self.startup_delay.get(svc.service, self.startup_delay.get("*", 3.0)))
        return float(self.startup_delay)

    # contract
    def deploy(self, desc: DeploymentDescription) -> DeploymentHandle:
        with self._lock:
            if desc.instance_id in self._active:
                raise DuplicateDeployment(f"{desc.instance_id} is already deployed")
            script = self._scripts.get(desc.instance_id, _Script())
            if script.deploy_error:
                raise ConnectorError(script.deploy_error)
            now = self.clock.now()
            handle = DeploymentHandle(f"sim-{next(self._ids):06d}", desc.instance_id, now)
            services = {}
            for inst in desc.services:
                sim = _SimService(inst, ready_at=now + self._delay(inst))
                for name in (inst.service, inst.name):
                    if name in script.fail:
                        after, reason = script.fail[name]
                        sim.fail_at, sim.fail_reason = now + after, reason
                    if name in script.stop:
                        sim.stop_at = now + script.stop[name]
                services[inst.name] = sim
            self._deployments[handle.id] = _SimDeployment(handle, desc, services, status_errors=script.status_errors)
            self._active[desc.instance_id] = handle.id
            return handle

    def _get(self, handle: DeploymentHandle) -> _SimDeployment:
        try:
            return self._deployments[handle.id]
        except KeyError:
            raise UnknownHandle(handle.id) from None

    def status(self, handle: DeploymentHandle) -> HealthStatus:
        dep = self._get(handle)
        if dep.status_errors > 0:
            dep.status_errors -= 1
            raise ConnectorError(f"status of {handle.instance_id} unavailable")
        now = self.clock.now()
        return HealthStatus({name: svc.state_at(now) for name, svc in dep.services.items()})

    def stop(self, handle: DeploymentHandle) -> bool:
        with self._lock:
            dep = self._get(handle)
            if dep.stopped_at is None:
                now = self.clock.now()
                dep.stopped_at = now
                for svc in dep.services.values():
                    if svc.stopped_at is None:
                        svc.stopped_at = now
                self._active.pop(handle.instance_id, None)
            return True

    # inspection
    def active_services(self) -> int:
        """Services not yet stopped (leak check)."""
        now = self.clock.now()
        return sum(
            1 for dep in self._deployments.values() for svc in dep.services.values() if svc.state_at(now) != STOPPED
        )

    def ready_time(self, instance_id: str, service_name: str) -> float:
        """When ``service_name`` of the newest deployment of ``instance_id`` came up."""
        for dep in reversed(list(self._deployments.values())):
            if dep.desc.instance_id == instance_id and service_name in dep.services:
                return dep.services[service_name].ready_at
        raise KeyError((instance_id, service_name))

    def running_on(self, hostname: str) -> list[tuple[DeploymentDescription, ServiceInstance]]:
        now = self.clock.now()
        out = []
        for dep in self._deployments.values():
            for svc in dep.services.values():
                if svc.instance.hostname == hostname and svc.state_at(now) == RUNNING:
                    out.append((dep.desc, svc.instance))
        return sorted(out, key=lambda pair: pair[1].name)

    def collect_output(self, handle: DeploymentHandle) -> dict[str, str]:
        dep = self._get(handle)
        end = dep.stopped_at if dep.stopped_at is not None else self.clock.now()
        out = {}
        for target in dep.desc.targets:
            svcs = [s for s in dep.services.values() if s.instance.target == target]
            up_from = max(s.ready_at for s in svcs)
            failed = any(s.fail_at is not None and s.fail_at < end for s in svcs)
            cutoff = min([s.fail_at for s in svcs if s.fail_at is not None] + [end])
            rng = random.Random(f"{self.seed}:{dep.desc.instance_id}:{target}")
            metrics = synthetic_app_metrics(dep.desc, max(0.0, cutoff - up_from), rng)
            out[target] = "" if metrics is None or (failed and cutoff <= up_from) else format_app_metrics(metrics)
        return out


# Throughput figures of a medium edge server, used only to give simulated
# runs plausible magnitudes.
_ML_BATCHES_PER_SECOND = {
    ("local", "onnx"): 241.61,
    ("local", "ncnn"): 27.73,
    ("local", "tensorflow"): 10.2,
    ("streaming", "onnx"): 82.86,
    ("streaming", "ncnn"): 21.56,
    ("streaming", "tensorflow"): 3.5,
}


def synthetic_app_metrics(desc: DeploymentDescription, seconds: float, rng: random.Random) -> AppMetrics | None:
    params: Mapping[str, Any] = desc.parameters
    kind = desc.kind
    if kind == "stressor":
        return None
    jitter = lambda: 1.0 + rng.uniform(-0.02, 0.02)  # noqa: E731
    m = AppMetrics(kind=kind)
    if kind == "iperf-network":
        m.values["packets_total"] = int(seconds * 8000 * jitter())
    elif kind == "streaming-analytics":
        rate = params.get("engine_parameters", {}).get("tuples_per_second", 1000)
        tuples = int(seconds * rate * jitter())
        m.values["tuples_total"] = tuples
        m.values["latency_total"] = round(tuples * 0.8 * jitter(), 3)
    elif kind == "database":
        for minute in range(1, int(seconds // 60) + 1):
            for op in ("read", "update", "insert"):
                avg = round(1000 * jitter(), 3)
                spread = round(100 * jitter(), 3)
                m.operations.setdefault(op, {})[minute] = OperationStats(
                    count=60, min=round(avg - spread, 3), max=round(avg + spread, 3), average=avg
                )
    elif kind == "ml-inference":
        bps = _ML_BATCHES_PER_SECOND.get((params.get("mode"), params.get("backend")), 7.2) * jitter()
        queries = int(bps * seconds)
        m.values["accuracy_percent"] = 76.0
        m.values["batches_per_second"] = round(bps, 4)
        m.values["completed_queries"] = queries
        m.values["mean_latency"] = round(1000.0 / bps, 3)
    return m


# -- swarm -------------------------------------------------------------------------


def _stack_name(instance_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9_-]+", "_", instance_id)


def swarm_adapter_render(desc: DeploymentDescription) -> str:
    """Compose-style stack document with services pinned by node hostname."""
    services = {}
    for svc in desc.services:
        services[svc.name] = {
            "image": svc.image,
            "environment": dict(svc.environment),
            "deploy": {
                "replicas": 1,
                "restart_policy": {"condition": "none"},
                "placement": {"constraints": [f"node.hostname == {svc.hostname}"]},
                "labels": {
                    "colobench.record": desc.record_name,
                    "colobench.instance": desc.instance_id,
                    "colobench.role": svc.role,
                    "colobench.target": svc.target,
                },
            },
        }
    return _yaml.dump_document({"version": "3.8", "services": services})


_SWARM_STATES = {
    "new": "pending",
    "pending": "pending",
    "assigned": "pending",
    "accepted": "pending",
    "preparing": "pending",
    "ready": "pending",
    "starting": "pending",
    "running": "running",
    "complete": "stopped",
    "shutdown": "stopped",
    "remove": "stopped",
    "failed": "failed",
    "rejected": "failed",
    "orphaned": "failed",
}

Runner = Callable[[Sequence[str]], "subprocess.CompletedProcess"]


def _default_runner(argv: Sequence[str]) -> subprocess.CompletedProcess:
    return subprocess.run(list(argv), capture_output=True, text=True, check=False)


class SwarmConnector:
    """Submits stacks through the ``docker`` CLI on the manager.

    ``runner`` executes an argv and returns a CompletedProcess; tests swap in
    a fake. Stack files are written to ``workdir``.
    """

    def __init__(self, clock: Clock, workdir: str | Path, runner: Runner = _default_runner):
        self.clock = clock
        self.workdir = Path(workdir)
        self.runner = runner
        self._handles: dict[str, DeploymentDescription] = {}
        self._stopped: set[str] = set()
        self._ids = itertools.count(1)

    def deploy(self, desc: DeploymentDescription) -> DeploymentHandle:
        stack = _stack_name(desc.instance_id)
        if any(d.instance_id == desc.instance_id for h, d in self._handles.items() if h not in self._stopped):
            raise DuplicateDeployment(f"{desc.instance_id} is already deployed")
        self.workdir.mkdir(parents=True, exist_ok=True)
        path = self.workdir / f"{stack}.yml"
        path.write_text(swarm_adapter_render(desc), encoding="utf-8")
        proc = self.runner(["docker", "stack", "deploy", "--compose-file", str(path), stack])
        if proc.returncode != 0:
            raise ConnectorError(f"docker stack deploy {stack} failed: {(proc.stderr or '').strip()}")
        handle = DeploymentHandle(f"swarm-{next(self._ids):06d}", desc.instance_id, self.clock.now())
        self._handles[handle.id] = desc
        return handle

    def status(self, handle: DeploymentHandle) -> HealthStatus:
        desc = self._handles.get(handle.id)
        if desc is None:
            raise UnknownHandle(handle.id)
        if handle.id in self._stopped:
            return HealthStatus({svc.name: STOPPED for svc in desc.services})
        stack = _stack_name(desc.instance_id)
        proc = self.runner(["docker", "stack", "ps", stack, "--no-trunc", "--format", "{{.Name}}|{{.CurrentState}}"])
        if proc.returncode != 0:
            raise ConnectorError(f"docker stack ps {stack} failed: {(proc.stderr or '').strip()}")
        states: dict[str, ServiceState] = {svc.name: PENDING for svc in desc.services}
        for line in (proc.stdout or "").splitlines():
            name, _, current = line.partition("|")
            service = name.strip().removeprefix(f"{stack}_").rsplit(".", 1)[0]
            word = current.strip().split(" ", 1)[0].lower()
            if service in states and word:
                mapped = _SWARM_STATES.get(word, "pending")
                states[service] = ServiceState(mapped, current.strip() if mapped == "failed" else None)
        return HealthStatus(states)

    def stop(self, handle: DeploymentHandle) -> bool:
        desc = self._handles.get(handle.id)
        if desc is None:
            raise UnknownHandle(handle.id)
        if handle.id not in self._stopped:
            proc = self.runner(["docker", "stack", "rm", _stack_name(desc.instance_id)])
            if proc.returncode != 0:
                raise ConnectorError(f"docker stack rm failed: {(proc.stderr or '').strip()}")
            self._stopped.add(handle.id)
        return True

    def collect_output(self, handle: DeploymentHandle) -> dict[str, str]:
        """``metric=value`` lines from the service logs, grouped by target node."""
        desc = self._handles.get(handle.id)
        if desc is None:
            raise UnknownHandle(handle.id)
        out = {}
        stack = _stack_name(desc.instance_id)
        for target in desc.targets:
            text = []
            for svc in desc.services:
                if svc.target != target:
                    continue
                proc = self.runner(["docker", "service", "logs", "--raw", f"{stack}_{svc.name}"])
                if proc.returncode == 0:
                    text.extend(line for line in (proc.stdout or "").splitlines() if "=" in line and " " not in line)
            out[target] = "\n".join(text)
        return out
