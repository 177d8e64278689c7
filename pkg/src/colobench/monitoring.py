"""Metric scraping, storage and querying.

Endpoints speak a small line protocol::

    # ts 60
    cpu_utilization_percent{scope="system"} 16.73
    memory_used_mib{scope="service",service="model-server-rpi"} 1480

Power and CPU temperature only exist at system scope. Missing scrapes are
recorded as gaps and never interpolated.
"""

from __future__ import annotations

import json
import logging
import math
import re
import threading
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Protocol

from .clock import Clock, Repeating
from .errors import ProbeError, ScrapeError, UnknownKey

log = logging.getLogger(__name__)

METRICS = (
    "cpu_utilization_percent",
    "memory_used_mib",
    "disk_io_kib",
    "network_io_bytes",
    "power_watts",
    "cpu_temperature_celsius",
)
SYSTEM_ONLY = frozenset({"power_watts", "cpu_temperature_celsius"})
SERVICE_METRICS = tuple(m for m in METRICS if m not in SYSTEM_ONLY)
DEFAULT_INTERVAL = 5.0

_LINE = re.compile(r"([a-z_]+)\{([^{}]*)\}\s+(\S+)")
_LABEL = re.compile(r'\s*([a-z_]+)="([^"]*)"\s*')


@dataclass(frozen=True, order=True)
class MetricKey:
    node: str
    scope: str
    service: str
    metric: str

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.scope == "system":
            if self.service:
                raise ValueError("system-scope keys carry no service name")
        elif self.scope == "service":
            if not self.service:
                raise ValueError("service-scope keys need a service name")
            if self.metric in SYSTEM_ONLY:
                raise ValueError(f"{self.metric} is only collected at system scope")
        else:
            raise ValueError(f"unknown scope {self.scope!r}")

    @classmethod
    def system(cls, node: str, metric: str) -> "MetricKey":
        return cls(node, "system", "", metric)

    @classmethod
    def for_service(cls, node: str, service: str, metric: str) -> "MetricKey":
        return cls(node, "service", service, metric)

    def __str__(self) -> str:
        where = self.node if self.scope == "system" else f"{self.node}/{self.service}"
        return f"{where}:{self.metric}"


@dataclass(frozen=True)
class MetricSample:
    key: MetricKey
    timestamp: float
    value: float


@dataclass
class TimeSeries:
    key: MetricKey
    samples: list[MetricSample] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[MetricSample]:
        return iter(self.samples)

    @property
    def timestamps(self) -> list[float]:
        return [s.timestamp for s in self.samples]

    @property
    def values(self) -> list[float]:
        return [s.value for s in self.samples]

    @classmethod
    def from_pairs(cls, key: MetricKey, pairs: Iterable[tuple[float, float]]) -> "TimeSeries":
        return cls(key, [MetricSample(key, float(t), float(v)) for t, v in pairs])


def check_value(key: MetricKey, value: float) -> str | None:
    if not math.isfinite(value):
        return "value is not finite"
    if value < 0:
        return "value is negative"
    if key.metric == "cpu_utilization_percent" and key.scope == "system" and value > 100:
        return "system CPU utilization above 100%"
    return None


# -- store ----------------------------------------------------------------------


class MetricStore:
    """Per-key time series with explicit gaps.

    Appends to one key are serialized; distinct keys can be written from
    several threads. When ``path`` is given every append is also written to
    ``<path>/samples.jsonl`` and :meth:`close` writes ``<path>/index.json``.
    """

    def __init__(self, path: str | Path | None = None):
        self._series: dict[MetricKey, list[MetricSample]] = {}
        self._gaps: dict[str, list[float]] = {}
        self._lock = threading.Lock()
        self.path = Path(path) if path is not None else None
        self._log = None
        if self.path is not None:
            self.path.mkdir(parents=True, exist_ok=True)
            self._log = open(self.path / "samples.jsonl", "a", encoding="utf-8")

    def append(self, sample: MetricSample) -> None:
        problem = check_value(sample.key, sample.value)
        if problem:
            raise ValueError(f"{sample.key}: {problem}")
        with self._lock:
            series = self._series.setdefault(sample.key, [])
            if series and sample.timestamp <= series[-1].timestamp:
                raise ValueError(
                    f"{sample.key}: timestamp {sample.timestamp} not after {series[-1].timestamp}"
                )
            series.append(sample)
            if self._log is not None:
                k = sample.key
                self._log.write(
                    json.dumps({"k": [k.node, k.scope, k.service, k.metric], "t": sample.timestamp, "v": sample.value})
                    + "\n"
                )

    def extend(self, samples: Iterable[MetricSample]) -> None:
        for sample in samples:
            self.append(sample)

    def record_gap(self, node: str, timestamp: float) -> None:
        with self._lock:
            self._gaps.setdefault(node, []).append(timestamp)
            if self._log is not None:
                self._log.write(json.dumps({"gap": node, "t": timestamp}) + "\n")

    def gaps(self, node: str, start: float | None = None, end: float | None = None) -> list[float]:
        with self._lock:
            stamps = list(self._gaps.get(node, ()))
        return [t for t in stamps if (start is None or t >= start) and (end is None or t <= end)]

    def keys(self) -> list[MetricKey]:
        with self._lock:
            return sorted(self._series)

    def __contains__(self, key: object) -> bool:
        return key in self._series

    def series(self, key: MetricKey) -> TimeSeries:
        with self._lock:
            if key not in self._series:
                raise UnknownKey(key)
            return TimeSeries(key, list(self._series[key]))

    def all_samples(self) -> Iterator[MetricSample]:
        for key in self.keys():
            yield from self.series(key)

    def close(self) -> None:
        if self._log is None:
            return
        self._log.close()
        self._log = None
        index = {
            "series": [
                {"node": k.node, "scope": k.scope, "service": k.service, "metric": k.metric, "samples": len(v)}
                for k, v in sorted(self._series.items())
            ],
            "gaps": {node: stamps for node, stamps in sorted(self._gaps.items())},
        }
        (self.path / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "MetricStore":
        store = cls()
        with open(Path(path) / "samples.jsonl", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                row = json.loads(line)
                if "gap" in row:
                    store.record_gap(row["gap"], row["t"])
                else:
                    store.append(MetricSample(MetricKey(*row["k"]), row["t"], row["v"]))
        return store


def query(store: MetricStore, key: MetricKey, window: tuple[float, float] | None = None) -> TimeSeries:
    """Samples of ``key`` with timestamps inside the closed ``window``."""
    series = store.series(key)
    if window is None:
        return series
    start, end = window
    return TimeSeries(key, [s for s in series.samples if start <= s.timestamp <= end])


# -- wire format ----------------------------------------------------------------


def render_exposition(timestamp: float, values: Mapping[MetricKey, float]) -> str:
    lines = [f"# ts {timestamp!r}"]
    for key in sorted(values):
        if key.scope == "system":
            labels = 'scope="system"'
        else:
            labels = f'scope="service",service="{key.service}"'
        lines.append(f"{key.metric}{{{labels}}} {float(values[key])!r}")
    return "\n".join(lines) + "\n"


@dataclass
class ScrapeResult:
    node: str
    timestamp: float
    samples: list[MetricSample]
    warnings: list[str] = field(default_factory=list)


def parse_exposition(node: str, text: str) -> ScrapeResult:
    timestamp = None
    samples: list[MetricSample] = []
    warnings: list[str] = []
    pending: list[tuple[int, str]] = []
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "ts":
                try:
                    timestamp = float(parts[1])
                except ValueError:
                    raise ScrapeError(f"{node}: bad timestamp header {line!r}") from None
            continue
        pending.append((n, line))
    if timestamp is None or not math.isfinite(timestamp):
        raise ScrapeError(f"{node}: response has no '# ts' header")

    seen: set[MetricKey] = set()
    for n, line in pending:
        match = _LINE.fullmatch(line)
        if match is None:
            warnings.append(f"line {n}: unparseable")
            continue
        metric, label_text, value_text = match.groups()
        labels = {}
        for part in filter(None, label_text.split(",")):
            lm = _LABEL.fullmatch(part)
            if lm is None:
                labels = None
                break
            labels[lm.group(1)] = lm.group(2)
        if labels is None or set(labels) - {"scope", "service"}:
            warnings.append(f"line {n}: bad labels")
            continue
        try:
            key = MetricKey(node, labels.get("scope", ""), labels.get("service", ""), metric)
            value = float(value_text)
        except ValueError as exc:
            warnings.append(f"line {n}: {exc}")
            continue
        problem = check_value(key, value)
        if problem or key in seen:
            warnings.append(f"line {n}: {problem or 'duplicate key'}")
            continue
        seen.add(key)
        samples.append(MetricSample(key, timestamp, value))
    return ScrapeResult(node, timestamp, samples, warnings)


# -- endpoints and probes -----------------------------------------------------------


class Endpoint(Protocol):
    def fetch(self) -> str:
        """Return one exposition document; raise ScrapeError when unreachable."""


class HttpEndpoint:
    def __init__(self, url: str, timeout: float = 2.0):
        self.url = url
        self.timeout = timeout

    def fetch(self) -> str:
        try:
            with urllib.request.urlopen(self.url, timeout=self.timeout) as resp:
                return resp.read().decode("utf-8", errors="replace")
        except (urllib.error.URLError, OSError) as exc:
            raise ScrapeError(f"{self.url}: {exc}") from None


class PowerProbe(Protocol):
    def read(self, node: str) -> float: ...


class SmartPlugProbe:
    """Wi-Fi smart plug adapter slot. No driver ships with colobench."""

    def read(self, node: str) -> float:
        raise ProbeError("smart-plug probe has no driver configured")


class SnmpPduProbe:
    """SNMP power-distribution-unit adapter slot. No driver ships with colobench."""

    def read(self, node: str) -> float:
        raise ProbeError("SNMP PDU probe has no driver configured")


class ProbedEndpoint:
    """Adds a system-scope ``power_watts`` line read from ``probe``."""

    def __init__(self, node: str, endpoint: Endpoint, probe: PowerProbe):
        self.node = node
        self.endpoint = endpoint
        self.probe = probe

    def fetch(self) -> str:
        text = self.endpoint.fetch()
        try:
            watts = float(self.probe.read(self.node))
        except ProbeError as exc:
            log.warning("power probe for %s failed: %s", self.node, exc)
            return text
        return text.rstrip("\n") + f'\npower_watts{{scope="system"}} {watts!r}\n'


def scrape_once(node: str, endpoint: Endpoint) -> ScrapeResult:
    """One scrape; malformed lines are skipped and counted in ``warnings``."""
    return parse_exposition(node, endpoint.fetch())


# -- collector ---------------------------------------------------------------------


class Collector:
    """Scrapes every endpoint on a fixed interval of the shared clock."""

    def __init__(
        self,
        endpoints: Mapping[str, Endpoint],
        store: MetricStore,
        clock: Clock,
        interval: float = DEFAULT_INTERVAL,
        max_workers: int | None = None,
    ):
        self.endpoints = dict(endpoints)
        self.store = store
        self.clock = clock
        self.interval = interval
        self.max_workers = max_workers
        self.warnings = 0
        self.scrapes = 0
        self._repeating: Repeating | None = None

    def start(self, at: float | None = None) -> None:
        if self._repeating is not None:
            raise RuntimeError("collector already running")
        # priority -1: a scrape due at the same instant as a deploy or stop sees the state before it
        self._repeating = self.clock.call_every(self.interval, self.scrape_all, start=at, priority=-1)

    def stop(self) -> None:
        if self._repeating is not None:
            self._repeating.cancel()
            self._repeating = None

    @property
    def running(self) -> bool:
        return self._repeating is not None

    def _fetch(self, node: str) -> ScrapeResult | ScrapeError:
        try:
            return scrape_once(node, self.endpoints[node])
        except ScrapeError as exc:
            return exc

    def scrape_all(self) -> None:
        now = self.clock.now()
        nodes = sorted(self.endpoints)
        if self.clock.live and self.max_workers and self.max_workers > 1:
            with ThreadPoolExecutor(self.max_workers) as pool:
                results = list(pool.map(self._fetch, nodes))
        else:
            results = [self._fetch(node) for node in nodes]
        self.scrapes += 1
        for node, result in zip(nodes, results):
            if isinstance(result, ScrapeError):
                log.info("scrape of %s failed at %s: %s", node, now, result)
                self.store.record_gap(node, now)
                continue
            self.warnings += len(result.warnings)
            for sample in result.samples:
                try:
                    self.store.append(sample)
                except ValueError as exc:
                    self.warnings += 1
                    log.warning("dropped sample: %s", exc)


def run_collector(
    endpoints: Mapping[str, Endpoint],
    clock: Clock,
    store: MetricStore,
    until: float,
    interval: float = DEFAULT_INTERVAL,
) -> Collector:
    """Collect from now until ``until`` (inclusive) and stop."""
    collector = Collector(endpoints, store, clock, interval)
    collector.start()
    clock.run_until(until)
    collector.stop()
    return collector
