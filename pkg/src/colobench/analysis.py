"""Per-run aggregates, energy per batch, cold-start detection, co-location
ratios and long-format CSV export."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .catalog import AppMetrics, OperationStats
from .coordinator import ExperimentRecord, WorkloadRun
from .errors import AnalysisError, EmptySeries, InsufficientData, MissingMetric, ZeroThroughput
from .monitoring import METRICS, MetricKey, MetricSample, TimeSeries

AGGREGATE_SPEC: Mapping[str, tuple[str, ...]] = {
    "cpu_utilization_percent": ("mean",),
    "memory_used_mib": ("mean", "peak"),
    "disk_io_kib": ("total",),
    "network_io_bytes": ("total",),
    "power_watts": ("mean",),
    "cpu_temperature_celsius": ("mean",),
}
assert set(AGGREGATE_SPEC) == set(METRICS)

DEFAULT_STEP_WINDOW = 3
DEFAULT_STEP_FRACTION = 0.25
RATIO_METRICS = ("throughput", "cold_start", "mean_power", "mean_cpu")


def _values(series: TimeSeries | Iterable[float]) -> list[float]:
    if isinstance(series, TimeSeries):
        return series.values
    return [float(v) for v in series]


def aggregate(series: TimeSeries | Iterable[float], kind: str) -> float:
    """``mean``, ``total`` or ``peak`` of the sample values."""
    values = _values(series)
    if kind == "total":
        return math.fsum(values)
    if not values:
        raise EmptySeries(f"{kind} of an empty series")
    if kind == "mean":
        return float(np.mean(np.asarray(values, dtype=float)))
    if kind == "peak":
        return max(values)
    raise ValueError(f"unknown aggregation {kind!r}")


def energy_per_batch(mean_power_watts: float, throughput_batches_per_second: float) -> float:
    """Joules per batch: watts divided by batches per second."""
    if not throughput_batches_per_second > 0:
        raise ZeroThroughput(f"throughput must be positive, got {throughput_batches_per_second}")
    if mean_power_watts < 0:
        raise AnalysisError(f"power must be non-negative, got {mean_power_watts}")
    return mean_power_watts / throughput_batches_per_second


# -- cold start -----------------------------------------------------------------


@dataclass(frozen=True)
class ColdStartResult:
    detected: bool
    step_time: float | None = None  # seconds after the trigger
    pre_level: float | None = None
    post_level: float | None = None
    threshold: float | None = None


def detect_cold_start(
    series: TimeSeries | Sequence[tuple[float, float]],
    trigger: float,
    min_step_mib: float | None = None,
    window: float | None = None,
    w: int = DEFAULT_STEP_WINDOW,
) -> ColdStartResult:
    """Locate the memory step that marks a finished model load.

    At every index i the mean of the next ``w`` samples is compared with the
    mean of the previous ``w``. The earliest run of consecutive indices whose
    increase reaches the threshold is the step; its position is the index
    with the largest increase inside that run. Without ``min_step_mib`` the
    threshold is a quarter of the highest sample in range.
    """
    if w < 1:
        raise ValueError("w must be at least 1")
    pairs = [(s.timestamp, s.value) for s in series] if isinstance(series, TimeSeries) else list(series)
    end = math.inf if window is None else trigger + window
    pairs = [(t, v) for t, v in pairs if trigger <= t <= end]
    if len(pairs) < 2 * w:
        raise InsufficientData(f"need at least {2 * w} samples after the trigger, got {len(pairs)}")
    times = [t for t, _ in pairs]
    values = np.asarray([v for _, v in pairs], dtype=float)
    threshold = DEFAULT_STEP_FRACTION * float(values.max()) if min_step_mib is None else float(min_step_mib)

    best = None
    for i in range(w, len(values) - w + 1):
        pre = float(values[i - w : i].mean())
        post = float(values[i : i + w].mean())
        diff = post - pre
        if diff > 0 and diff >= threshold:
            if best is None or diff > best[1]:
                best = (i, diff, pre, post)
        elif best is not None:
            break
    if best is None:
        return ColdStartResult(False, threshold=threshold)
    i, _, pre, post = best
    return ColdStartResult(True, times[i] - trigger, pre, post, threshold)


# -- report ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Derived:
    value: float
    inputs: tuple[str, ...]


@dataclass
class AnalysisEntry:
    record_name: str
    repetition: int
    node: str
    workload: str
    kind: str
    instance_id: str
    outcome: str
    aggregates: dict[str, float] = field(default_factory=dict)
    app_metrics: dict[str, float] = field(default_factory=dict)
    derived: dict[str, Derived] = field(default_factory=dict)
    quantities: dict[str, Derived] = field(default_factory=dict)  # inputs of the co-location ratios

    @property
    def key(self) -> tuple[str, int, str, str]:
        return (self.record_name, self.repetition, self.node, self.workload)

    def quantity(self, name: str) -> float | None:
        q = self.quantities.get(name)
        return None if q is None else q.value


@dataclass
class AnalysisReport:
    entries: list[AnalysisEntry] = field(default_factory=list)
    baseline: str | None = None

    def find(self, record_name: str, repetition: int, node: str, workload: str) -> AnalysisEntry:
        for entry in self.entries:
            if entry.key == (record_name, repetition, node, workload):
                return entry
        raise KeyError((record_name, repetition, node, workload))

    def rows(self) -> list[tuple]:
        """Long format: one row per entry and quantity, deterministic order."""
        out = []
        for entry in sorted(self.entries, key=lambda e: e.key):
            head = (entry.record_name, entry.repetition, entry.node, entry.workload, entry.kind)
            out.append((*head, "outcome", entry.outcome, ""))
            for name, value in sorted(entry.aggregates.items()):
                out.append((*head, name, value, ""))
            for name, value in sorted(entry.app_metrics.items()):
                out.append((*head, f"app.{name}", value, ""))
            for name, d in sorted(entry.derived.items()):
                out.append((*head, name, d.value, ";".join(d.inputs)))
        return out


def _quantity(entry: AnalysisEntry | Mapping[str, float], name: str) -> float | None:
    if isinstance(entry, AnalysisEntry):
        return entry.quantity(name)
    value = entry.get(name)
    return None if value is None else float(value)


def colocation_delta(
    baseline: AnalysisEntry | Mapping[str, float],
    colocated: AnalysisEntry | Mapping[str, float],
    metrics: Sequence[str] | None = None,
) -> dict[str, float]:
    """``colocated / baseline`` per quantity; below 1 on throughput means degradation.

    Plain mappings of quantity name to value are accepted as well as report
    entries. With ``metrics`` unset every quantity known on both sides is
    compared; a quantity present on one side only is an error.
    """
    if isinstance(baseline, AnalysisEntry) and isinstance(colocated, AnalysisEntry):
        if baseline.kind != colocated.kind or baseline.node != colocated.node:
            raise AnalysisError(
                f"cannot compare {colocated.kind} on {colocated.node} with {baseline.kind} on {baseline.node}"
            )
    explicit = metrics is not None
    names = list(metrics) if explicit else list(RATIO_METRICS)
    ratios = {}
    for name in names:
        b, c = _quantity(baseline, name), _quantity(colocated, name)
        if b is None and c is None and not explicit:
            continue
        if b is None or c is None:
            side = "baseline" if b is None else "co-located"
            raise MissingMetric(f"{name} missing on the {side} side")
        if b == 0:
            if c == 0:
                ratios[name] = 1.0
                continue
            raise AnalysisError(f"{name}: baseline is zero")
        ratios[name] = c / b
    if not ratios:
        raise MissingMetric("no comparable quantities")
    return ratios


def _throughput(app: AppMetrics | None, seconds: float) -> tuple[float, str] | None:
    if app is None:
        return None
    if "batches_per_second" in app.values:
        return app.values["batches_per_second"], "batches_per_second"
    ops = app.mean_operations_per_second()
    if ops is not None:
        return ops, "operations.average"
    for name in ("tuples_total", "packets_total", "completed_queries"):
        if name in app.values and seconds > 0:
            return app.values[name] / seconds, name
    return None


def _window(series: TimeSeries, start: float, end: float) -> TimeSeries:
    return TimeSeries(series.key, [s for s in series.samples if start <= s.timestamp <= end])


def _entry(record: ExperimentRecord, run: WorkloadRun, node: str) -> AnalysisEntry:
    entry = AnalysisEntry(
        record_name=record.record_name,
        repetition=record.repetition,
        node=node,
        workload=run.name,
        kind=run.kind,
        instance_id=run.instance_id,
        outcome=run.outcome,
    )
    system = {k.metric: s for k, s in record.series.items() if k.node == node and k.scope == "system"}
    for metric, series in sorted(system.items()):
        for kind in AGGREGATE_SPEC[metric]:
            if series.samples or kind == "total":
                entry.aggregates[f"system.{metric}.{kind}"] = aggregate(series, kind)
    hosted = set(run.services.get(node, ()))
    own = {k: s for k, s in record.series.items() if k.node == node and k.scope == "service" and k.service in hosted}
    for key, series in sorted(own.items()):
        for kind in AGGREGATE_SPEC[key.metric]:
            if series.samples or kind == "total":
                entry.aggregates[f"service.{key.service}.{key.metric}.{kind}"] = aggregate(series, kind)

    app = run.app_metrics.get(node)
    if app is not None:
        entry.app_metrics = app.flat()

    trigger = run.trigger_time if run.trigger_time is not None else run.planned_trigger
    end = record.end if record.end is not None else record.planned_end
    app_ref = f"app:{run.instance_id}:{node}"

    cpu_keys = sorted(k for k in own if k.metric == "cpu_utilization_percent" and own[k].samples)
    if cpu_keys:
        value = math.fsum(aggregate(own[k], "mean") for k in cpu_keys)
        entry.quantities["mean_cpu"] = Derived(value, tuple(str(k) for k in cpu_keys))

    cold_start = None
    mem_keys = [k for k in own if k.metric == "memory_used_mib" and len(own[k]) > 0]
    if mem_keys:
        # the service with the widest memory swing carries the working set
        mem_key = max(sorted(mem_keys), key=lambda k: max(own[k].values) - min(own[k].values))
        try:
            result = detect_cold_start(own[mem_key], trigger)
        except InsufficientData:
            result = None
        if result is not None and result.detected:
            cold_start = result.step_time
            d = Derived(result.step_time, (str(mem_key),))
            entry.derived["cold_start_seconds"] = d
            entry.quantities["cold_start"] = d

    post_start = trigger + (cold_start or 0.0)
    power = system.get("power_watts")
    if power is not None:
        post = _window(power, post_start, end)
        if post.samples:
            entry.quantities["mean_power"] = Derived(aggregate(post, "mean"), (str(power.key),))

    tp = _throughput(app, end - post_start)
    if tp is not None:
        entry.quantities["throughput"] = Derived(tp[0], (f"{app_ref}:{tp[1]}",))
        if "batches_per_second" in app.values and "mean_power" in entry.quantities and tp[0] > 0:
            p = entry.quantities["mean_power"]
            inputs = p.inputs + entry.quantities["throughput"].inputs
            if cold_start is not None:
                inputs += entry.derived["cold_start_seconds"].inputs
            entry.derived["energy_per_batch_joules"] = Derived(energy_per_batch(p.value, tp[0]), inputs)
    return entry


def analyze(records: Sequence[ExperimentRecord], baseline: str | None = None) -> AnalysisReport:
    report = AnalysisReport(baseline=baseline)
    for record in records:
        for run in record.workloads:
            for node in run.nodes:
                report.entries.append(_entry(record, run, node))
    if baseline is None:
        return report
    base = [e for e in report.entries if e.record_name == baseline]
    if not base:
        raise AnalysisError(f"baseline record {baseline!r} not found")
    for entry in report.entries:
        if entry.record_name == baseline:
            continue
        candidates = [b for b in base if b.kind == entry.kind and b.node == entry.node]
        if not candidates:
            continue
        same_rep = [b for b in candidates if b.repetition == entry.repetition]
        ref = (same_rep or sorted(candidates, key=lambda b: b.repetition))[0]
        shared = [m for m in RATIO_METRICS if ref.quantity(m) is not None and entry.quantity(m) is not None]
        if not shared:
            continue
        try:
            ratios = colocation_delta(ref, entry, shared)
        except AnalysisError:
            continue
        for name, value in ratios.items():
            inputs = ref.quantities[name].inputs + entry.quantities[name].inputs
            entry.derived[f"ratio.{name}"] = Derived(value, inputs)
    return report


# -- CSV export ----------------------------------------------------------------------------

METRICS_HEADER = ("timestamp", "offset_s", "node", "scope", "service", "metric", "value")
APP_HEADER = ("workload", "instance_id", "node", "metric", "value")
ANALYSIS_HEADER = ("record_name", "repetition", "node", "workload", "kind", "quantity", "value", "inputs")
MANIFEST = "manifest.json"


def _num(value: Any) -> str:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        return str(value)
    value = float(value)
    if value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def _stamp(t: float, live: bool) -> str:
    if live:
        return datetime.fromtimestamp(t, tz=timezone.utc).isoformat()
    return _num(t)


def _unstamp(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return datetime.fromisoformat(text).timestamp()


def _csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    for row in rows:
        writer.writerow([_num(v) for v in row])
    return buf.getvalue()


def record_prefix(record: ExperimentRecord) -> str:
    return f"{record.file_stem}.rep{record.repetition}"


def metrics_rows(record: ExperimentRecord) -> list[tuple]:
    origin = record.start if record.start is not None else record.planned_start
    rows = []
    for key in sorted(record.series):
        for s in record.series[key].samples:
            rows.append(
                (_stamp(s.timestamp, record.live), s.timestamp - origin, key.node, key.scope, key.service, key.metric, s.value)
            )
    return rows


def app_rows(record: ExperimentRecord) -> list[tuple]:
    rows = []
    for run in record.workloads:
        for node in sorted(run.app_metrics):
            for name, value in sorted(run.app_metrics[node].flat().items()):
                rows.append((run.name, run.instance_id, node, name, value))
    return rows


def _manifest(records: Sequence[ExperimentRecord], report: AnalysisReport | None) -> dict:
    out = []
    for record in records:
        out.append(
            {
                "record_name": record.record_name,
                "file_stem": record.file_stem,
                "experiment_index": record.experiment_index,
                "repetition": record.repetition,
                "planned_start": record.planned_start,
                "planned_end": record.planned_end,
                "start": record.start,
                "end": record.end,
                "interrupted": record.interrupted,
                "live": record.live,
                "gaps": {node: stamps for node, stamps in sorted(record.gaps.items())},
                "metrics_file": f"{record_prefix(record)}.metrics.csv",
                "app_file": f"{record_prefix(record)}.app.csv",
                "workloads": [
                    {
                        "index": run.index,
                        "name": run.name,
                        "kind": run.kind,
                        "instance_id": run.instance_id,
                        "nodes": list(run.nodes),
                        "services": run.services,
                        "planned_trigger": run.planned_trigger,
                        "trigger_time": run.trigger_time,
                        "outcome": run.outcome,
                        "app_kinds": {node: m.kind for node, m in sorted(run.app_metrics.items())},
                    }
                    for run in record.workloads
                ],
            }
        )
    return {"format": 1, "baseline": report.baseline if report else None, "records": out}


def export_csv(
    records: Sequence[ExperimentRecord], report: AnalysisReport | None, out_dir: str | Path
) -> list[Path]:
    """Write the per-record CSVs, ``analysis.csv`` and a manifest; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    prefixes = [record_prefix(r) for r in records]
    if len(set(prefixes)) != len(prefixes):
        raise AnalysisError("two records map to the same file name")

    def write(name: str, text: str) -> None:
        path = out / name
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        written.append(path)

    for record, prefix in zip(records, prefixes):
        write(f"{prefix}.metrics.csv", _csv_text(METRICS_HEADER, metrics_rows(record)))
        write(f"{prefix}.app.csv", _csv_text(APP_HEADER, app_rows(record)))
    if report is not None:
        write("analysis.csv", _csv_text(ANALYSIS_HEADER, report.rows()))
    write(MANIFEST, json.dumps(_manifest(records, report), indent=2, sort_keys=True) + "\n")
    return written


def _read_csv(path: Path) -> list[dict[str, str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def _app_from_rows(kind: str, rows: Iterable[dict[str, str]]) -> AppMetrics:
    m = AppMetrics(kind=kind)
    for row in rows:
        name, value = row["metric"], float(row["value"])
        if name.startswith("op."):
            _, op, minute, stat = name.split(".")
            stats = m.operations.setdefault(op, {}).setdefault(int(minute), OperationStats())
            setattr(stats, stat, value)
        else:
            m.values[name] = value
    return m


def load_run(run_dir: str | Path) -> list[ExperimentRecord]:
    """Rebuild records from a directory written by :func:`export_csv`."""
    base = Path(run_dir)
    try:
        manifest = json.loads((base / MANIFEST).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise AnalysisError(f"{base} holds no {MANIFEST}") from None
    records = []
    for raw in manifest["records"]:
        record = ExperimentRecord(
            record_name=raw["record_name"],
            file_stem=raw["file_stem"],
            experiment_index=raw["experiment_index"],
            repetition=raw["repetition"],
            planned_start=raw["planned_start"],
            planned_end=raw["planned_end"],
            start=raw["start"],
            end=raw["end"],
            interrupted=raw["interrupted"],
            live=raw["live"],
            gaps={k: list(v) for k, v in raw["gaps"].items()},
        )
        samples: dict[MetricKey, list[MetricSample]] = {}
        for row in _read_csv(base / raw["metrics_file"]):
            key = MetricKey(row["node"], row["scope"], row["service"], row["metric"])
            samples.setdefault(key, []).append(MetricSample(key, _unstamp(row["timestamp"]), float(row["value"])))
        record.series = {k: TimeSeries(k, v) for k, v in samples.items()}
        app = _read_csv(base / raw["app_file"])
        for w in raw["workloads"]:
            run = _LoadedRun(
                index=w["index"],
                name=w["name"],
                kind=w["kind"],
                instance_id=w["instance_id"],
                nodes=tuple(w["nodes"]),
                planned_trigger=w["planned_trigger"],
                trigger_time=w["trigger_time"],
                services={k: list(v) for k, v in w["services"].items()},
            )
            run.saved_outcome = w["outcome"]
            for node, kind in w["app_kinds"].items():
                rows = [r for r in app if r["instance_id"] == run.instance_id and r["node"] == node]
                run.app_metrics[node] = _app_from_rows(kind, rows)
            record.workloads.append(run)
        records.append(record)
    return records


@dataclass
class _LoadedRun(WorkloadRun):
    saved_outcome: str = ""

    @property
    def outcome(self) -> str:
        return self.saved_outcome
