"""Synthetic metric feeds for simulated nodes.

A :class:`SyntheticScenario` maps metric keys to value generators (constant,
step, ramp, optionally with seeded noise). :class:`SimulatedNodeEndpoint`
serves those values in the scrape line protocol at the shared clock's
current time. Given a :class:`SimulatedConnector` it also reports
service-scope metrics for the services running on its node, and derives
system utilization, power and temperature from them.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol

from .catalog import DeploymentDescription, ServiceInstance
from .clock import Clock
from .connector import SimulatedConnector
from .errors import ProbeError, ScrapeError
from .monitoring import DEFAULT_INTERVAL, MetricKey, render_exposition


class Generator(Protocol):
    def value_at(self, t: float) -> float: ...


@dataclass(frozen=True)
class Constant:
    value: float

    def value_at(self, t: float) -> float:
        return self.value


@dataclass(frozen=True)
class Step:
    """``before`` until ``at``, ``after`` from ``at`` on."""

    before: float
    after: float
    at: float

    def value_at(self, t: float) -> float:
        return self.after if t >= self.at else self.before


@dataclass(frozen=True)
class Ramp:
    start: float
    slope: float  # units per second
    t0: float = 0.0

    def value_at(self, t: float) -> float:
        return self.start + self.slope * max(0.0, t - self.t0)


@dataclass(frozen=True)
class Noisy:
    """Gaussian noise keyed on (seed, key, time), so streams don't depend on call order."""

    base: Generator
    sigma: float
    seed: int = 0
    label: str = ""

    def value_at(self, t: float) -> float:
        rng = random.Random(f"{self.seed}|{self.label}|{t!r}")
        return self.base.value_at(t) + rng.gauss(0.0, self.sigma)


def _clamp(key: MetricKey, value: float) -> float:
    value = max(0.0, value)
    if key.metric == "cpu_utilization_percent" and key.scope == "system":
        value = min(100.0, value)
    return value


@dataclass
class SyntheticScenario:
    generators: dict[MetricKey, Generator] = field(default_factory=dict)
    seed: int = 0

    def set(self, key: MetricKey, generator: Generator, noise: float = 0.0) -> "SyntheticScenario":
        if noise:
            generator = Noisy(generator, noise, self.seed, str(key))
        self.generators[key] = generator
        return self

    def system(self, node: str, metric: str, generator: Generator, noise: float = 0.0) -> "SyntheticScenario":
        return self.set(MetricKey.system(node, metric), generator, noise)

    def service(
        self, node: str, service: str, metric: str, generator: Generator, noise: float = 0.0
    ) -> "SyntheticScenario":
        return self.set(MetricKey.for_service(node, service, metric), generator, noise)

    @property
    def nodes(self) -> list[str]:
        return sorted({k.node for k in self.generators})

    def values_at(self, node: str, t: float) -> dict[MetricKey, float]:
        return {k: _clamp(k, g.value_at(t)) for k, g in self.generators.items() if k.node == node}


# -- per-service load profiles for the simulated connector --------------------------


@dataclass(frozen=True)
class ServiceProfile:
    """Steady-state resource use of one simulated service.

    ``cpu`` is percent of one core. Memory sits at ``memory_mib`` until
    ``load_seconds`` after the service is up, then steps to
    ``loaded_memory_mib`` (the cold start). Disk and network are rates and
    are reported per scrape interval.
    """

    cpu: float
    memory_mib: float
    loaded_memory_mib: float | None = None
    load_seconds: float = 0.0
    disk_kib_per_s: float = 0.0
    network_bytes_per_s: float = 0.0


_ML_LOAD_SECONDS = {"onnx": 35.0, "ncnn": 35.0, "tensorflow": 360.0}


def default_profile(desc: DeploymentDescription, svc: ServiceInstance) -> ServiceProfile:
    p = desc.parameters
    kind, role = desc.kind, svc.role
    if kind == "ml-inference":
        if role == "generator":
            return ServiceProfile(cpu=8.0, memory_mib=180.0, network_bytes_per_s=450_000.0)
        streaming = p.get("mode") == "streaming"
        return ServiceProfile(
            cpu=45.0 if streaming else 120.0,
            memory_mib=150.0,
            loaded_memory_mib=1500.0 if streaming else 2500.0,
            load_seconds=_ML_LOAD_SECONDS.get(p.get("backend"), 60.0),
            network_bytes_per_s=450_000.0 if streaming else 0.0,
        )
    if kind == "database":
        if role == "store":
            return ServiceProfile(cpu=80.0, memory_mib=7200.0, disk_kib_per_s=2048.0)
        return ServiceProfile(cpu=35.0, memory_mib=320.0)
    if kind == "streaming-analytics":
        by_role = {
            "engine": ServiceProfile(cpu=40.0, memory_mib=1100.0, network_bytes_per_s=3000.0),
            "queue": ServiceProfile(cpu=12.0, memory_mib=750.0, disk_kib_per_s=64.0, network_bytes_per_s=3000.0),
            "store": ServiceProfile(cpu=6.0, memory_mib=90.0),
            "generator": ServiceProfile(cpu=10.0, memory_mib=200.0, network_bytes_per_s=3000.0),
        }
        return by_role.get(role, ServiceProfile(cpu=5.0, memory_mib=100.0))
    if kind == "stressor":
        workers = p.get("workers", 1)
        target = p.get("target", "cpu")
        if target == "cpu":
            return ServiceProfile(cpu=98.0 * workers, memory_mib=4.0)
        if target == "memory":
            return ServiceProfile(cpu=95.0 * workers, memory_mib=256.0 * workers)
        if target == "io":
            return ServiceProfile(cpu=60.0 * workers, memory_mib=8.0, disk_kib_per_s=40_000.0)
        return ServiceProfile(cpu=2.0, memory_mib=6.0, network_bytes_per_s=10_000_000.0)
    if kind == "iperf-network":
        return ServiceProfile(cpu=3.0, memory_mib=6.0, network_bytes_per_s=10_000_000.0)
    return ServiceProfile(cpu=5.0, memory_mib=100.0)


@dataclass(frozen=True)
class NodeProfile:
    """How a simulated node turns service load into system-scope readings."""

    cores: int = 8
    idle_cpu_percent: float = 2.0
    base_memory_mib: float = 900.0
    idle_watts: float = 88.0
    watts_per_cpu_percent: float = 0.5
    idle_temperature: float = 35.0
    temperature_per_cpu_percent: float = 0.25


class SimulatedNodeEndpoint:
    """Scrape endpoint of one simulated node.

    ``outages`` are closed ``(start, end)`` intervals during which scraping
    fails. Explicit scenario generators win over values derived from the
    connector.
    """

    def __init__(
        self,
        node: str,
        clock: Clock,
        scenario: SyntheticScenario | None = None,
        connector: SimulatedConnector | None = None,
        profile: NodeProfile | None = None,
        outages: Iterable[tuple[float, float]] = (),
        interval: float = DEFAULT_INTERVAL,
        seed: int = 0,
        noise: float = 0.0,
        service_profile=default_profile,
    ):
        self.node = node
        self.clock = clock
        self.scenario = scenario or SyntheticScenario(seed=seed)
        self.connector = connector
        self.profile = profile or NodeProfile()
        self.outages = list(outages)
        self.interval = interval
        self.seed = seed
        self.noise = noise
        self.service_profile = service_profile

    def _jitter(self, label: str, t: float) -> float:
        if not self.noise:
            return 1.0
        return 1.0 + random.Random(f"{self.seed}|{self.node}|{label}|{t!r}").uniform(-self.noise, self.noise)

    def current_values(self, t: float) -> dict[MetricKey, float]:
        values: dict[MetricKey, float] = {}
        if self.connector is not None:
            values.update(self._derived(t))
        for key, value in self.scenario.values_at(self.node, t).items():
            values[key] = value
        return {k: _clamp(k, v) for k, v in values.items()}

    def _derived(self, t: float) -> dict[MetricKey, float]:
        values: dict[MetricKey, float] = {}
        total_cpu = total_mem = total_disk = total_net = 0.0
        for desc, svc in self.connector.running_on(self.node):
            prof = self.service_profile(desc, svc)
            handle_ready = self._ready_at(desc, svc)
            mem = prof.memory_mib
            if prof.loaded_memory_mib is not None and t - handle_ready >= prof.load_seconds:
                mem = prof.loaded_memory_mib
            readings = {
                "cpu_utilization_percent": prof.cpu * self._jitter(svc.name + ":cpu", t),
                "memory_used_mib": mem * self._jitter(svc.name + ":mem", t),
                "disk_io_kib": prof.disk_kib_per_s * self.interval * self._jitter(svc.name + ":disk", t),
                "network_io_bytes": prof.network_bytes_per_s * self.interval * self._jitter(svc.name + ":net", t),
            }
            for metric, value in readings.items():
                values[MetricKey.for_service(self.node, svc.name, metric)] = value
            total_cpu += readings["cpu_utilization_percent"]
            total_mem += readings["memory_used_mib"]
            total_disk += readings["disk_io_kib"]
            total_net += readings["network_io_bytes"]
        p = self.profile
        cpu = min(100.0, p.idle_cpu_percent + total_cpu / p.cores)
        system = {
            "cpu_utilization_percent": cpu,
            "memory_used_mib": p.base_memory_mib + total_mem,
            "disk_io_kib": total_disk,
            "network_io_bytes": total_net,
            "power_watts": (p.idle_watts + p.watts_per_cpu_percent * cpu) * self._jitter("power", t),
            "cpu_temperature_celsius": (p.idle_temperature + p.temperature_per_cpu_percent * cpu)
            * self._jitter("temp", t),
        }
        for metric, value in system.items():
            values[MetricKey.system(self.node, metric)] = value
        return values

    def _ready_at(self, desc: DeploymentDescription, svc: ServiceInstance) -> float:
        return self.connector.ready_time(desc.instance_id, svc.name)

    def fetch(self) -> str:
        t = self.clock.now()
        for start, end in self.outages:
            if start <= t <= end:
                raise ScrapeError(f"{self.node}: unreachable (simulated outage)")
        return render_exposition(t, self.current_values(t))


class SimulatedPowerProbe:
    """Reads ``power_watts`` from a scenario (or a fixed mapping of node -> watts)."""

    def __init__(self, clock: Clock, scenario: SyntheticScenario | None = None, fixed: Mapping[str, float] | None = None):
        self.clock = clock
        self.scenario = scenario
        self.fixed = dict(fixed or {})

    def read(self, node: str) -> float:
        if node in self.fixed:
            return float(self.fixed[node])
        if self.scenario is not None:
            key = MetricKey.system(node, "power_watts")
            if key in self.scenario.generators:
                return _clamp(key, self.scenario.generators[key].value_at(self.clock.now()))
        raise ProbeError(f"no simulated power reading for {node}")
