"""Declarative experiment descriptions: parsing, validation and serialization.

A suite document looks like::

    experiments:
      - experiment:
          record_name: "streaming_with_db"
          repetition: 2
          duration: "20m"
          workloads:
            - name: "database"
              cluster: ["rpi", "small_server"]
              parameters: {db: "mongodb"}
    idle_between_experiments: "2m"
    orchestrator: "docker swarm"
"""

from __future__ import annotations

import copy
import re
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Mapping

from . import _yaml
from .catalog import WorkloadCatalog, default_catalog
from .durations import Duration, format_duration, parse_duration
from .errors import FormatError, SchemaError, UnknownWorkload

if TYPE_CHECKING:
    from .bootstrap import ClusterConfig

__all__ = [
    "Duration",
    "Experiment",
    "ExperimentSuite",
    "Finding",
    "ValidationReport",
    "WorkloadSpec",
    "format_duration",
    "parse_duration",
    "parse_suite",
    "serialize_suite",
    "validate_suite",
]

ORCHESTRATORS = frozenset({"docker swarm"})
ENGINE_PARAMETERS = "engine_parameters"
ENGINE_PARAMETERS_ALIASES = ("enging_parameters",)

_SUITE_KEYS = {"experiments", "idle_between_experiments", "orchestrator"}
_EXPERIMENT_KEYS = {"record_name", "repetition", "duration", "workloads"}
_WORKLOAD_KEYS = {"name", "cluster", "parameters", "shift"}
_UNSAFE = re.compile(r"[\s/\\]+")


def sanitize_record_name(name: str) -> str:
    """Filesystem-safe stem: path separators and whitespace become ``_``."""
    return _UNSAFE.sub("_", name.strip())


@dataclass(frozen=True)
class WorkloadSpec:
    name: str
    cluster: tuple[str, ...]
    parameters: Mapping[str, Any] = field(default_factory=dict)
    shift: Duration = Duration(0)


@dataclass(frozen=True)
class Experiment:
    record_name: str
    duration: Duration
    workloads: tuple[WorkloadSpec, ...]
    repetition: int = 1

    @property
    def file_stem(self) -> str:
        return sanitize_record_name(self.record_name)


@dataclass(frozen=True)
class ExperimentSuite:
    experiments: tuple[Experiment, ...]
    idle_between_experiments: Duration = Duration(0)
    orchestrator: str = "docker swarm"

    @property
    def total_runs(self) -> int:
        return sum(exp.repetition for exp in self.experiments)


@dataclass(frozen=True)
class Finding:
    severity: str  # "error" or "warning"
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.severity}: {self.path}: {self.message}"


@dataclass
class ValidationReport:
    findings: list[Finding] = field(default_factory=list)

    @property
    def errors(self) -> list[Finding]:
        return [f for f in self.findings if f.severity == "error"]

    @property
    def warnings(self) -> list[Finding]:
        return [f for f in self.findings if f.severity == "warning"]

    @property
    def ok(self) -> bool:
        return not self.errors


# -- parsing ----------------------------------------------------------------


def _expect_mapping(value: Any, path: str) -> Mapping[str, Any]:
    if not isinstance(value, Mapping):
        raise SchemaError(f"expected a mapping, got {_describe(value)}", path)
    for key in value:
        if not isinstance(key, str):
            raise SchemaError(f"keys must be strings, got {key!r}", path)
    return value


def _reject_unknown(data: Mapping[str, Any], allowed: set[str], path: str) -> None:
    for key in data:
        if key not in allowed:
            raise SchemaError(f"unknown key {key!r}", f"{path}.{key}" if path else key)


def _require(data: Mapping[str, Any], key: str, path: str) -> Any:
    if key not in data or data[key] is None:
        raise SchemaError("required field is missing", f"{path}.{key}" if path else key)
    return data[key]


def _describe(value: Any) -> str:
    if value is None:
        return "nothing"
    return f"{type(value).__name__} {value!r}"


def _duration(value: Any, path: str, *, positive: bool = False) -> Duration:
    if isinstance(value, bool) or not isinstance(value, str):
        raise SchemaError(f"expected a duration like '20m', got {_describe(value)}", path)
    try:
        duration = parse_duration(value)
    except FormatError as exc:
        raise SchemaError(str(exc), path) from None
    if positive and duration.seconds == 0:
        raise SchemaError("duration must be greater than zero", path)
    return duration


def _canonical_parameters(raw: Any, path: str) -> dict[str, Any]:
    if raw is None:
        return {}
    params = dict(_expect_mapping(raw, path))
    for alias in ENGINE_PARAMETERS_ALIASES:
        if alias in params:
            if ENGINE_PARAMETERS in params:
                raise SchemaError(f"both {alias!r} and {ENGINE_PARAMETERS!r} given", f"{path}.{alias}")
            params = {(ENGINE_PARAMETERS if k == alias else k): v for k, v in params.items()}
    return copy.deepcopy(params)


def _parse_workload(raw: Any, path: str, catalog: WorkloadCatalog) -> WorkloadSpec:
    data = _expect_mapping(raw, path)
    _reject_unknown(data, _WORKLOAD_KEYS, path)
    name = _require(data, "name", path)
    if not isinstance(name, str):
        raise SchemaError(f"expected a workload name, got {_describe(name)}", f"{path}.name")
    try:
        catalog.resolve(name)
    except UnknownWorkload:
        known = ", ".join(sorted(catalog.names))
        raise SchemaError(f"unknown workload {name!r} (known: {known})", f"{path}.name") from None
    cluster = _require(data, "cluster", path)
    if not isinstance(cluster, list) or not cluster:
        raise SchemaError(f"expected a non-empty list of hostnames, got {_describe(cluster)}", f"{path}.cluster")
    for i, host in enumerate(cluster):
        if not isinstance(host, str) or not host:
            raise SchemaError(f"expected a hostname, got {_describe(host)}", f"{path}.cluster[{i}]")
    shift = Duration(0)
    if data.get("shift") is not None:
        shift = _duration(data["shift"], f"{path}.shift")
    return WorkloadSpec(
        name=name,
        cluster=tuple(cluster),
        parameters=_canonical_parameters(data.get("parameters"), f"{path}.parameters"),
        shift=shift,
    )


def _parse_experiment(raw: Any, path: str, catalog: WorkloadCatalog) -> Experiment:
    data = _expect_mapping(raw, path)
    _reject_unknown(data, _EXPERIMENT_KEYS, path)
    record_name = _require(data, "record_name", path)
    if not isinstance(record_name, str) or not sanitize_record_name(record_name).strip("_"):
        raise SchemaError(f"expected a non-empty name, got {_describe(record_name)}", f"{path}.record_name")
    repetition = data.get("repetition", 1)
    if repetition is None:
        repetition = 1
    if isinstance(repetition, bool) or not isinstance(repetition, int) or repetition < 1:
        raise SchemaError(f"expected a positive integer, got {_describe(repetition)}", f"{path}.repetition")
    duration = _duration(_require(data, "duration", path), f"{path}.duration", positive=True)
    workloads = _require(data, "workloads", path)
    if not isinstance(workloads, list) or not workloads:
        raise SchemaError(f"expected a non-empty list, got {_describe(workloads)}", f"{path}.workloads")
    return Experiment(
        record_name=record_name,
        duration=duration,
        workloads=tuple(_parse_workload(w, f"{path}.workloads[{i}]", catalog) for i, w in enumerate(workloads)),
        repetition=repetition,
    )


def parse_suite(text: str | bytes, catalog: WorkloadCatalog | None = None) -> ExperimentSuite:
    """Parse a suite document.

    Raises :class:`ConfigSyntaxError` for malformed text and
    :class:`SchemaError` (carrying the offending path, e.g.
    ``experiments[0].workloads[0].name``) for invalid content. Experiment
    entries left empty, as in abbreviated listings ending in ``...``, are
    skipped.
    """
    catalog = catalog or default_catalog()
    doc = _yaml.load_document(text)
    if doc is None:
        raise SchemaError("document is empty")
    data = _expect_mapping(doc, "")
    _reject_unknown(data, _SUITE_KEYS, "")
    entries = _require(data, "experiments", "")
    if not isinstance(entries, list):
        raise SchemaError(f"expected a list, got {_describe(entries)}", "experiments")
    experiments = []
    for i, entry in enumerate(entries):
        path = f"experiments[{i}]"
        entry = _expect_mapping(entry, path)
        _reject_unknown(entry, {"experiment"}, path)
        if "experiment" not in entry:
            raise SchemaError("required field is missing", f"{path}.experiment")
        if entry["experiment"] is None:
            continue
        experiments.append(_parse_experiment(entry["experiment"], path, catalog))
    if not experiments:
        raise SchemaError("at least one experiment is required", "experiments")

    idle = Duration(0)
    if data.get("idle_between_experiments") is not None:
        idle = _duration(data["idle_between_experiments"], "idle_between_experiments")
    orchestrator = data.get("orchestrator", "docker swarm")
    if not isinstance(orchestrator, str) or orchestrator not in ORCHESTRATORS:
        raise SchemaError(
            f"unknown orchestrator {orchestrator!r} (known: {', '.join(sorted(ORCHESTRATORS))})", "orchestrator"
        )
    return ExperimentSuite(experiments=tuple(experiments), idle_between_experiments=idle, orchestrator=orchestrator)


def load_suite(path, catalog: WorkloadCatalog | None = None) -> ExperimentSuite:
    with open(path, "rb") as fh:
        return parse_suite(fh.read(), catalog)


# -- serialization -------------------------------------------------------------


def _plain(value: Any) -> Any:
    if isinstance(value, Mapping):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def suite_to_dict(suite: ExperimentSuite) -> dict[str, Any]:
    experiments = []
    for exp in suite.experiments:
        workloads = []
        for w in exp.workloads:
            entry: dict[str, Any] = {"name": w.name, "cluster": list(w.cluster)}
            if w.parameters:
                entry["parameters"] = _plain(w.parameters)
            if w.shift.seconds:
                entry["shift"] = format_duration(w.shift)
            workloads.append(entry)
        experiments.append(
            {
                "experiment": {
                    "record_name": exp.record_name,
                    "repetition": exp.repetition,
                    "duration": format_duration(exp.duration),
                    "workloads": workloads,
                }
            }
        )
    return {
        "experiments": experiments,
        "idle_between_experiments": format_duration(suite.idle_between_experiments),
        "orchestrator": suite.orchestrator,
    }


def serialize_suite(suite: ExperimentSuite) -> str:
    return _yaml.dump_document(suite_to_dict(suite))


# -- cross-referential validation ----------------------------------------------


def validate_suite(
    suite: ExperimentSuite,
    cluster: "ClusterConfig",
    catalog: WorkloadCatalog | None = None,
) -> ValidationReport:
    """Check a parsed suite against a cluster and the workload catalog.

    Findings come back in document order; nothing here raises.
    """
    catalog = catalog or default_catalog()
    hostnames = set(cluster.hostnames)
    report = ValidationReport()
    for i, exp in enumerate(suite.experiments):
        for j, workload in enumerate(exp.workloads):
            base = f"experiments[{i}].workloads[{j}]"
            seen: set[str] = set()
            for k, host in enumerate(workload.cluster):
                if host not in hostnames:
                    report.findings.append(Finding("error", f"{base}.cluster[{k}]", f"node {host!r} is not in the cluster"))
                elif host in seen:
                    report.findings.append(Finding("warning", f"{base}.cluster[{k}]", f"node {host!r} listed twice"))
                seen.add(host)
            if workload.name in catalog:
                for path, message in catalog.check_parameters(workload.name, workload.parameters, f"{base}.parameters"):
                    report.findings.append(Finding("error", path, message))
            else:
                report.findings.append(Finding("error", f"{base}.name", f"unknown workload {workload.name!r}"))
            if workload.shift >= exp.duration:
                report.findings.append(
                    Finding(
                        "error",
                        f"{base}.shift",
                        f"shift {format_duration(workload.shift)} is not shorter than the "
                        f"experiment duration {format_duration(exp.duration)}",
                    )
                )
    return report
