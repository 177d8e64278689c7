"""Workload templates, parameter schemas and application-metric parsing.

The built-in templates live in ``catalog.yaml`` next to this module so users
can read the defaults directly. :func:`render` turns a template plus a user's
workload entry into a :class:`DeploymentDescription` with every parameter
resolved.
"""

from __future__ import annotations

import copy
import functools
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from types import MappingProxyType
from typing import TYPE_CHECKING, Any, Iterator, Mapping

from . import _yaml
from .durations import Duration
from .errors import MetricParseError, ParameterError, PlacementError, UnknownWorkload

if TYPE_CHECKING:
    from .bootstrap import ClusterConfig
    from .experiment_model import WorkloadSpec

ROLES = ("generator", "receiver", "server", "engine", "store", "queue")
PLACEMENTS = ("on-target-node", "on-manager")
PARAM_TYPES = ("int", "number", "string", "bool", "enum", "mapping")
METRIC_TYPES = ("count", "number", "percent", "milliseconds", "operation-stats")
OPERATION_STATS = ("count", "min", "max", "average")

_PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z0-9_.]*)\}")


@dataclass(frozen=True)
class ParamSpec:
    name: str
    type: str
    default: Any = None
    required: bool = False
    choices: tuple = ()
    min: float | None = None
    fields: Mapping[str, "ParamSpec"] = field(default_factory=dict)

    def default_value(self) -> Any:
        if self.type == "mapping":
            return {name: sub.default_value() for name, sub in self.fields.items() if not sub.required}
        return copy.deepcopy(self.default)


@dataclass(frozen=True)
class ServiceTemplate:
    name: str
    image: str
    role: str
    placement: str
    env: Mapping[str, str] = field(default_factory=dict)
    when: Mapping[str, Any] = field(default_factory=dict)

    def applies_to(self, params: Mapping[str, Any]) -> bool:
        return all(params.get(key) == value for key, value in self.when.items())


@dataclass(frozen=True)
class MetricSpec:
    name: str
    type: str


@dataclass(frozen=True)
class WorkloadTemplate:
    kind: str
    services: tuple[ServiceTemplate, ...]
    parameters: Mapping[str, ParamSpec]
    metrics: tuple[MetricSpec, ...]
    aliases: tuple[str, ...] = ()
    description: str = ""

    def defaults(self) -> dict[str, Any]:
        return {name: spec.default_value() for name, spec in self.parameters.items() if not spec.required}

    def services_for(self, params: Mapping[str, Any]) -> list[ServiceTemplate]:
        """Services deployed for a fully merged parameter tree."""
        return [svc for svc in self.services if svc.applies_to(params)]


@dataclass(frozen=True)
class ServiceInstance:
    name: str
    service: str
    image: str
    role: str
    hostname: str
    target: str
    environment: Mapping[str, str]


@dataclass(frozen=True)
class DeploymentDescription:
    record_name: str
    instance_id: str
    workload: str
    kind: str
    services: tuple[ServiceInstance, ...]
    shift: Duration = Duration(0)
    parameters: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.services:
            raise ValueError("a deployment description needs at least one service")

    @property
    def targets(self) -> list[str]:
        return list(dict.fromkeys(svc.target for svc in self.services))

    def by_node(self) -> dict[str, list[ServiceInstance]]:
        nodes: dict[str, list[ServiceInstance]] = {}
        for svc in self.services:
            nodes.setdefault(svc.hostname, []).append(svc)
        return nodes


@dataclass
class OperationStats:
    """Operations per second observed for one operation during one minute."""

    count: float | None = None
    min: float | None = None
    max: float | None = None
    average: float | None = None


@dataclass
class AppMetrics:
    kind: str
    values: dict[str, float] = field(default_factory=dict)
    operations: dict[str, dict[int, OperationStats]] = field(default_factory=dict)

    def __getitem__(self, name: str) -> float:
        return self.values[name]

    def get(self, name: str, default: float | None = None) -> float | None:
        return self.values.get(name, default)

    def is_empty(self) -> bool:
        return not self.values and not self.operations

    def flat(self) -> dict[str, float]:
        """All metrics as ``name -> value``, database rows as ``op.<name>.<minute>.<stat>``."""
        out = dict(self.values)
        for op, minutes in self.operations.items():
            for minute, stats in minutes.items():
                for stat in OPERATION_STATS:
                    value = getattr(stats, stat)
                    if value is not None:
                        out[f"op.{op}.{minute}.{stat}"] = value
        return out

    def mean_operations_per_second(self) -> float | None:
        """Average of every per-minute ``average`` across operations, or None."""
        averages = [s.average for m in self.operations.values() for s in m.values() if s.average is not None]
        if not averages:
            return None
        return math.fsum(averages) / len(averages)


# -- schema loading ---------------------------------------------------------


def _param_from_dict(name: str, raw: Mapping[str, Any]) -> ParamSpec:
    ptype = raw.get("type")
    if ptype not in PARAM_TYPES:
        raise ValueError(f"parameter {name!r}: unknown type {ptype!r}")
    fields = {}
    if ptype == "mapping":
        fields = {sub: _param_from_dict(f"{name}.{sub}", spec) for sub, spec in (raw.get("fields") or {}).items()}
    required = "default" not in raw and ptype != "mapping"
    spec = ParamSpec(
        name=name,
        type=ptype,
        default=raw.get("default"),
        required=required,
        choices=tuple(raw.get("choices") or ()),
        min=raw.get("min"),
        fields=MappingProxyType(fields),
    )
    if ptype == "enum" and not spec.choices:
        raise ValueError(f"parameter {name!r}: enum needs choices")
    if not required and ptype != "mapping" and _type_problem(spec, spec.default):
        raise ValueError(f"parameter {name!r}: default {spec.default!r} violates its own schema")
    return spec


def _template_from_dict(kind: str, raw: Mapping[str, Any]) -> WorkloadTemplate:
    services = []
    for svc in raw.get("services") or ():
        if svc["role"] not in ROLES:
            raise ValueError(f"{kind}: service {svc['name']!r} has unknown role {svc['role']!r}")
        if svc["placement"] not in PLACEMENTS:
            raise ValueError(f"{kind}: service {svc['name']!r} has unknown placement {svc['placement']!r}")
        services.append(
            ServiceTemplate(
                name=svc["name"],
                image=svc["image"],
                role=svc["role"],
                placement=svc["placement"],
                env=MappingProxyType({k: str(v) for k, v in (svc.get("env") or {}).items()}),
                when=MappingProxyType(dict(svc.get("when") or {})),
            )
        )
    if not services:
        raise ValueError(f"{kind}: a template needs at least one service")
    params = {name: _param_from_dict(name, spec) for name, spec in (raw.get("parameters") or {}).items()}
    metrics = []
    for m in raw.get("metrics") or ():
        if m["type"] not in METRIC_TYPES:
            raise ValueError(f"{kind}: metric {m['name']!r} has unknown type {m['type']!r}")
        metrics.append(MetricSpec(m["name"], m["type"]))
    return WorkloadTemplate(
        kind=kind,
        services=tuple(services),
        parameters=MappingProxyType(params),
        metrics=tuple(metrics),
        aliases=tuple(raw.get("aliases") or ()),
        description=raw.get("description", ""),
    )


class WorkloadCatalog:
    """Immutable set of workload templates addressed by kind or alias."""

    def __init__(self, templates: Mapping[str, WorkloadTemplate]):
        self._templates = dict(templates)
        self._names: dict[str, str] = {}
        for kind, template in self._templates.items():
            for name in (kind, *template.aliases):
                if name in self._names:
                    raise ValueError(f"workload name {name!r} defined twice")
                self._names[name] = kind

    @classmethod
    def from_text(cls, text: str) -> "WorkloadCatalog":
        doc = _yaml.load_document(text)
        return cls({kind: _template_from_dict(kind, raw) for kind, raw in doc["workloads"].items()})

    @property
    def kinds(self) -> tuple[str, ...]:
        return tuple(self._templates)

    @property
    def names(self) -> frozenset[str]:
        """Every accepted workload name, aliases included."""
        return frozenset(self._names)

    def resolve(self, name: str) -> str:
        try:
            return self._names[name]
        except (KeyError, TypeError):
            raise UnknownWorkload(name) from None

    def lookup(self, name: str) -> WorkloadTemplate:
        return self._templates[self.resolve(name)]

    def __contains__(self, name: object) -> bool:
        return name in self._names

    def __iter__(self) -> Iterator[WorkloadTemplate]:
        return iter(self._templates.values())

    def parameter_defaults(self, name: str) -> dict[str, Any]:
        return self.lookup(name).defaults()

    def check_parameters(self, name: str, params: Mapping[str, Any], path: str = "parameters") -> list[tuple[str, str]]:
        """Return ``(path, message)`` for every schema violation, in document order."""
        template = self.lookup(name)
        return _check_tree(template.parameters, params, path)

    def render(self, spec: "WorkloadSpec", cluster: "ClusterConfig", **kwargs) -> DeploymentDescription:
        return render(self.lookup(spec.name), spec, cluster, **kwargs)

    def parse_app_metrics(self, name: str, raw: str) -> AppMetrics:
        return parse_app_metrics(self.lookup(name), raw)


@functools.lru_cache(maxsize=1)
def default_catalog() -> WorkloadCatalog:
    text = resources.files(__package__).joinpath("catalog.yaml").read_text(encoding="utf-8")
    return WorkloadCatalog.from_text(text)


def lookup_template(kind: str, catalog: WorkloadCatalog | None = None) -> WorkloadTemplate:
    return (catalog or default_catalog()).lookup(kind)


def parameter_defaults(kind: str, catalog: WorkloadCatalog | None = None) -> dict[str, Any]:
    return (catalog or default_catalog()).parameter_defaults(kind)


# -- parameter checking and rendering ----------------------------------------


def _type_problem(spec: ParamSpec, value: Any) -> str | None:
    t = spec.type
    if t == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            return f"expected an integer, got {value!r}"
    elif t == "number":
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            return f"expected a number, got {value!r}"
    elif t == "string":
        if not isinstance(value, str):
            return f"expected a string, got {value!r}"
    elif t == "bool":
        if not isinstance(value, bool):
            return f"expected true/false, got {value!r}"
    elif t == "enum":
        if value not in spec.choices:
            return f"{value!r} is not one of {list(spec.choices)}"
    elif t == "mapping":
        if not isinstance(value, Mapping):
            return f"expected a mapping, got {value!r}"
    if spec.min is not None and t in ("int", "number") and value < spec.min:
        return f"must be >= {spec.min}, got {value!r}"
    return None


def _check_tree(schema: Mapping[str, ParamSpec], params: Any, path: str) -> list[tuple[str, str]]:
    if params is None:
        params = {}
    if not isinstance(params, Mapping):
        return [(path, f"expected a mapping, got {params!r}")]
    problems = []
    for key, value in params.items():
        sub_path = f"{path}.{key}"
        spec = schema.get(key) if isinstance(key, str) else None
        if spec is None:
            problems.append((sub_path, f"unknown parameter {key!r}"))
            continue
        problem = _type_problem(spec, value)
        if problem:
            problems.append((sub_path, problem))
        elif spec.type == "mapping":
            problems.extend(_check_tree(spec.fields, value, sub_path))
    for key, spec in schema.items():
        if spec.required and key not in params:
            problems.append((f"{path}.{key}", "required parameter is missing"))
    return problems


def _merge(defaults: dict[str, Any], overrides: Mapping[str, Any]) -> dict[str, Any]:
    merged = copy.deepcopy(defaults)
    for key, value in overrides.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def flatten(tree: Mapping[str, Any], prefix: str = "") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, value in tree.items():
        name = f"{prefix}{key}"
        if isinstance(value, Mapping):
            out.update(flatten(value, name + "."))
        else:
            out[name] = value
    return out


def env_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _substitute(template: str, values: Mapping[str, str], where: str) -> str:
    def repl(match: re.Match) -> str:
        key = match.group(1)
        if key not in values:
            raise ParameterError(f"template references unknown value {{{key}}}", where)
        return values[key]

    return _PLACEHOLDER.sub(repl, template)


def render(
    template: WorkloadTemplate,
    spec: "WorkloadSpec",
    cluster: "ClusterConfig",
    *,
    record_name: str = "",
    instance_id: str | None = None,
) -> DeploymentDescription:
    """Resolve ``template`` against the user's workload entry.

    One service instance is produced per (service template, target node);
    ``on-manager`` services are placed on the cluster manager but still get
    one instance per target so every target has its own feed.
    """
    problems = _check_tree(template.parameters, spec.parameters, "parameters")
    if problems:
        path, message = problems[0]
        raise ParameterError(message, path)
    if not spec.cluster:
        raise PlacementError(f"workload {spec.name!r} has no target nodes")
    known = set(cluster.hostnames)
    for host in spec.cluster:
        if host not in known:
            raise PlacementError(f"workload {spec.name!r}: node {host!r} is not in the cluster")

    merged = _merge(template.defaults(), spec.parameters or {})
    flat = {k: env_value(v) for k, v in flatten(merged).items()}
    instances = []
    for target in dict.fromkeys(spec.cluster):
        values = {**flat, "node": target}
        for svc in template.services_for(merged):
            base_name = _substitute(svc.name, values, f"{template.kind}.services")
            hostname = cluster.manager.hostname if svc.placement == "on-manager" else target
            env = dict(flat)
            for key, raw in svc.env.items():
                env[key] = _substitute(raw, values, f"{template.kind}.{base_name}.env.{key}")
            instances.append(
                ServiceInstance(
                    name=f"{base_name}-{target}",
                    service=base_name,
                    image=_substitute(svc.image, values, f"{template.kind}.{base_name}.image"),
                    role=svc.role,
                    hostname=hostname,
                    target=target,
                    environment=MappingProxyType(dict(sorted(env.items()))),
                )
            )
    return DeploymentDescription(
        record_name=record_name,
        instance_id=instance_id or f"{record_name or 'adhoc'}.{spec.name}",
        workload=spec.name,
        kind=template.kind,
        services=tuple(instances),
        shift=spec.shift,
        parameters=MappingProxyType(merged),
    )


# -- application metrics ------------------------------------------------------


def _number(text: str, line_no: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise MetricParseError(f"line {line_no}: {text!r} is not a number") from None
    if not math.isfinite(value):
        raise MetricParseError(f"line {line_no}: value must be finite")
    return int(value) if value.is_integer() and "." not in text and "e" not in text.lower() else value


def parse_app_metrics(template: WorkloadTemplate | str, raw: str, catalog: WorkloadCatalog | None = None) -> AppMetrics:
    """Parse ``metric=value`` lines for one workload family.

    Database rows use ``op.<name>.<minute>.<stat>=value``. Lines starting
    with ``#`` and blank lines are ignored; missing metrics stay absent.
    Families without application statistics ignore their output entirely.
    """
    if isinstance(template, str):
        template = lookup_template(template, catalog)
    metrics = AppMetrics(kind=template.kind)
    if not template.metrics:
        return metrics
    if not isinstance(raw, str):
        raise MetricParseError(f"expected text output, got {type(raw).__name__}")
    types = {m.name: m.type for m in template.metrics}
    per_op = "operation-stats" in types.values()
    for line_no, line in enumerate(raw.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value_text = line.partition("=")
        key, value_text = key.strip(), value_text.strip()
        if not sep or not key:
            raise MetricParseError(f"line {line_no}: expected metric=value, got {line!r}")
        value = _number(value_text, line_no)
        if value < 0:
            raise MetricParseError(f"line {line_no}: {key} must be >= 0")
        if per_op and key.startswith("op."):
            parts = key.split(".")
            stat = parts[-1] if len(parts) == 4 else None
            if stat == "avg":
                stat = "average"
            if stat not in OPERATION_STATS or not parts[1] or not parts[2].isdigit():
                raise MetricParseError(f"line {line_no}: expected op.<name>.<minute>.<stat>, got {key!r}")
            row = metrics.operations.setdefault(parts[1], {}).setdefault(int(parts[2]), OperationStats())
            setattr(row, stat, value)
            continue
        mtype = types.get(key)
        if mtype is None or mtype == "operation-stats":
            raise MetricParseError(f"line {line_no}: unknown {template.kind} metric {key!r}")
        if mtype == "count" and not float(value).is_integer():
            raise MetricParseError(f"line {line_no}: {key} must be a whole count")
        if mtype == "percent" and value > 100:
            raise MetricParseError(f"line {line_no}: {key} must be within [0, 100]")
        metrics.values[key] = value
    return metrics


def format_app_metrics(metrics: AppMetrics) -> str:
    """Inverse of :func:`parse_app_metrics` (used for fixtures and simulation)."""
    lines = [f"{key}={_fmt(value)}" for key, value in metrics.values.items()]
    for op in sorted(metrics.operations):
        for minute in sorted(metrics.operations[op]):
            stats = metrics.operations[op][minute]
            for stat in OPERATION_STATS:
                value = getattr(stats, stat)
                if value is not None:
                    lines.append(f"op.{op}.{minute}.{stat}={_fmt(value)}")
    return "\n".join(lines) + ("\n" if lines else "")


def _fmt(value: float) -> str:
    if isinstance(value, int) and not isinstance(value, bool):
        return str(value)
    return repr(float(value))
