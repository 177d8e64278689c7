from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from colobench.catalog import (
    AppMetrics,
    OperationStats,
    default_catalog,
    flatten,
    format_app_metrics,
    lookup_template,
    parameter_defaults,
    parse_app_metrics,
    render,
)
from colobench.durations import Duration
from colobench.errors import MetricParseError, ParameterError, PlacementError, UnknownWorkload
from colobench.experiment_model import WorkloadSpec


def spec(name, params=None, cluster=("rpi",), shift=0):
    return WorkloadSpec(name=name, cluster=tuple(cluster), parameters=params or {}, shift=Duration(shift))


def by_host(desc):
    return {h: sorted(s.service for s in svcs) for h, svcs in desc.by_node().items()}


def test_kinds_and_alias():
    cat = default_catalog()
    assert set(cat.kinds) == {"stressor", "iperf-network", "streaming-analytics", "database", "ml-inference"}
    assert cat.resolve("marketing-campaign") == "streaming-analytics"
    assert lookup_template("marketing-campaign") is lookup_template("streaming-analytics")


def test_unknown_kind():
    with pytest.raises(UnknownWorkload):
        lookup_template("unknown-kind")
    with pytest.raises(UnknownWorkload):
        parameter_defaults("unknown-kind")


def test_database_template():
    t = lookup_template("database")
    services = {s.name: (s.role, s.placement) for s in t.services}
    assert services == {"ycsb-driver": ("generator", "on-target-node"), "db-server": ("store", "on-target-node")}
    db = t.parameters["db"]
    assert db.required and "mongodb" in db.choices
    assert set(t.parameters["distribution"].choices) == {"zipfian", "latest", "uniform"}
    assert {"records", "operations", "threads"} <= set(t.parameters)


def test_defaults():
    assert parameter_defaults("database")["distribution"] == "zipfian"
    assert parameter_defaults("database")["records"] == 2_500_000
    assert parameter_defaults("ml-inference")["mode"] == "local"
    assert parameter_defaults("streaming-analytics")["engine_parameters"]["tuples_per_second"] == 1000
    a = parameter_defaults("ml-inference")
    a["mode"] = "changed"
    assert parameter_defaults("ml-inference")["mode"] == "local"


def test_every_template_is_complete():
    for t in default_catalog():
        for p in t.parameters.values():
            assert p.type
            assert p.required or p.default is not None or p.type == "mapping"
        for s in t.services:
            assert s.placement in ("on-target-node", "on-manager")


def test_render_database_from_streaming_suite(cluster):
    desc = render(lookup_template("database"), spec("database", {"db": "mongodb"}, ("rpi", "small_server")), cluster)
    assert by_host(desc) == {"rpi": ["db-server", "ycsb-driver"], "small_server": ["db-server", "ycsb-driver"]}
    for svc in desc.services:
        assert svc.environment["db"] == "mongodb"
        assert svc.environment["distribution"] == "zipfian"
        assert svc.environment["records"] == "2500000"
    assert {s.image for s in desc.services if s.service == "db-server"} == {"colobench/db-mongodb:latest"}


def test_render_stressor_workers(cluster):
    desc = render(lookup_template("stressor"), spec("stressor", {"target": "cpu", "workers": 4}, ("rpi", "small_server")), cluster)
    assert [(s.service, s.hostname) for s in desc.services] == [("stress", "rpi"), ("stress", "small_server")]
    assert all(s.environment["workers"] == "4" for s in desc.services)


def test_render_streaming_pipeline(cluster):
    params = {"engine": "storm", "engine_parameters": {"tuples_per_second": 1000, "capacity_per_window": 10}}
    desc = render(lookup_template("marketing-campaign"), spec("marketing-campaign", params), cluster)
    assert [(s.service, s.role, s.hostname) for s in desc.services] == [
        ("kafka-queue", "queue", "rpi"),
        ("redis-store", "store", "rpi"),
        ("storm-engine", "engine", "rpi"),
        ("data-generator", "generator", "manager"),
    ]
    gen = desc.services[-1]
    assert gen.environment["rate"] == "1000"
    assert gen.environment["target_host"] == "rpi"
    assert gen.environment["engine_parameters.capacity_per_window"] == "10"
    assert desc.kind == "streaming-analytics" and desc.workload == "marketing-campaign"


def test_render_ml_modes(cluster):
    local = render(lookup_template("ml-inference"), spec("ml-inference"), cluster)
    assert by_host(local) == {"rpi": ["mlperf-local"]}
    streaming = render(lookup_template("ml-inference"), spec("ml-inference", {"mode": "streaming"}), cluster)
    assert by_host(streaming) == {"rpi": ["model-server"], "manager": ["image-generator"]}
    assert streaming.services[1].environment["server_host"] == "rpi"


def test_render_placement_and_shift(cluster):
    desc = render(lookup_template("iperf-network"), spec("iperf-network", cluster=("rpi",), shift=300), cluster)
    assert desc.shift == Duration(300)
    hosts = {s.hostname for s in desc.services}
    assert hosts <= {"rpi", "manager"}
    with pytest.raises(PlacementError):
        render(lookup_template("stressor"), spec("stressor", cluster=("ghost",)), cluster)


@pytest.mark.parametrize(
    "name, params, path",
    [
        ("database", {}, "parameters.db"),
        ("database", {"db": "cassandra"}, "parameters.db"),
        ("database", {"db": "redis", "threads": "4"}, "parameters.threads"),
        ("database", {"db": "redis", "threads": 0}, "parameters.threads"),
        ("stressor", {"workers": True}, "parameters.workers"),
        ("streaming-analytics", {"engine_parameters": {"tuples": 5}}, "parameters.engine_parameters.tuples"),
        ("streaming-analytics", {"engine_parameters": 5}, "parameters.engine_parameters"),
        ("ml-inference", {"max_latency_ms": float("nan")}, "parameters.max_latency_ms"),
    ],
)
def test_parameter_errors(cluster, name, params, path):
    with pytest.raises(ParameterError) as info:
        render(lookup_template(name), spec(name, params), cluster)
    assert info.value.path == path


def test_render_is_deterministic(cluster):
    s = spec("streaming-analytics", {"engine": "flink"}, ("rpi", "small_server"))
    assert render(lookup_template(s.name), s, cluster) == render(lookup_template(s.name), s, cluster)


def test_empty_parameters_use_exact_defaults(cluster):
    for t in default_catalog():
        if any(p.required for p in t.parameters.values()):
            continue
        desc = render(t, spec(t.kind), cluster)
        assert dict(desc.parameters) == t.defaults()


# -- override soundness fuzz ---------------------------------------------------------


def _leaf_values(p):
    if p.type == "enum":
        return st.sampled_from(p.choices)
    if p.type == "int":
        return st.integers(min_value=int(p.min if p.min is not None else -1000), max_value=10**6)
    if p.type == "number":
        return st.floats(min_value=p.min if p.min is not None else -1e6, max_value=1e6, allow_nan=False)
    if p.type == "bool":
        return st.booleans()
    return st.text("abc123", min_size=1, max_size=5)


def _leaves(schema, prefix=()):
    for name, p in schema.items():
        if p.type == "mapping":
            yield from _leaves(p.fields, prefix + (name,))
        else:
            yield prefix + (name,), p


def _nest(path, value):
    out = value
    for key in reversed(path):
        out = {key: out}
    return out


def _required(t):
    return {n: p.choices[0] for n, p in t.parameters.items() if p.required}


@settings(max_examples=300)
@given(st.sampled_from(sorted(default_catalog().kinds)), st.data())
def test_override_soundness(kind, data):
    from colobench.bootstrap import ClusterConfig, NodeConfig

    cluster = ClusterConfig(NodeConfig("10.0.0.1", "manager", ssh_key_path="/k"), (NodeConfig("10.0.0.2", "rpi", ssh_key_path="/k"),))
    t = lookup_template(kind)
    leaves = list(_leaves(t.parameters))
    path, p = data.draw(st.sampled_from(leaves))
    value = data.draw(_leaf_values(p))
    params = {**_required(t), **_nest(path, value)}
    desc = render(t, spec(kind, params), cluster)
    flat = flatten(dict(desc.parameters))
    assert flat[".".join(path)] == value
    defaults = flatten(t.defaults())
    for other, _ in leaves:
        key = ".".join(other)
        if other != path and other[0] not in _required(t):
            assert flat[key] == defaults[key]


@settings(max_examples=300)
@given(
    st.sampled_from(sorted(default_catalog().kinds)),
    st.text("abcdefghijklmnopqrstuvwxyz_", min_size=1, max_size=12),
    st.one_of(st.integers(), st.text(max_size=4), st.booleans()),
    st.booleans(),
)
def test_unknown_keys_always_rejected(kind, key, value, nested):
    from colobench.bootstrap import ClusterConfig, NodeConfig

    cluster = ClusterConfig(NodeConfig("10.0.0.1", "manager", ssh_key_path="/k"), (NodeConfig("10.0.0.2", "rpi", ssh_key_path="/k"),))
    t = lookup_template(kind)
    mapping_params = [n for n, p in t.parameters.items() if p.type == "mapping"]
    if nested and mapping_params:
        fields = t.parameters[mapping_params[0]].fields
        if key in fields:
            return
        params = {**_required(t), mapping_params[0]: {key: value}}
        expected = f"parameters.{mapping_params[0]}.{key}"
    else:
        if key in t.parameters:
            return
        params = {**_required(t), key: value}
        expected = f"parameters.{key}"
    with pytest.raises(ParameterError) as info:
        render(t, spec(kind, params), cluster)
    assert info.value.path == expected


# -- application metrics ------------------------------------------------------------


def test_parse_ml_output():
    m = parse_app_metrics("ml-inference", "accuracy_percent=76.0\nbatches_per_second=7.2\ncompleted_queries=8640\nmean_latency=138.9\n")
    assert m.values == {"accuracy_percent": 76.0, "batches_per_second": 7.2, "completed_queries": 8640, "mean_latency": 138.9}


def test_stressor_output_ignored():
    assert parse_app_metrics("stressor", "anything at all\n=== \x00").is_empty()


def test_parse_database_row():
    m = parse_app_metrics("database", "op.read.1.count=60\nop.read.1.min=900\nop.read.1.max=1100\nop.read.1.avg=1000\n")
    assert m.operations == {"read": {1: OperationStats(count=60, min=900, max=1100, average=1000)}}
    assert m.mean_operations_per_second() == 1000


def test_missing_lines_stay_absent():
    m = parse_app_metrics("ml-inference", "# header\n\nbatches_per_second=7.2\n")
    assert m.values == {"batches_per_second": 7.2}
    assert m.get("accuracy_percent") is None


@pytest.mark.parametrize(
    "kind, raw",
    [
        ("ml-inference", "accuracy_percent=101"),
        ("ml-inference", "completed_queries=-1"),
        ("ml-inference", "completed_queries=2.5"),
        ("ml-inference", "throughput=3"),
        ("ml-inference", "no equals sign"),
        ("ml-inference", "batches_per_second=fast"),
        ("iperf-network", "packets_total=inf"),
        ("database", "op.read.x.count=1"),
        ("database", "op.read.1.median=1"),
        ("database", "operations=5"),
    ],
)
def test_malformed_metrics(kind, raw):
    with pytest.raises(MetricParseError):
        parse_app_metrics(kind, raw)


counts = st.integers(min_value=0, max_value=10**9)
reals = st.floats(min_value=0, max_value=1e9, allow_nan=False)


@st.composite
def app_metrics(draw):
    kind = draw(st.sampled_from(["iperf-network", "streaming-analytics", "database", "ml-inference"]))
    m = AppMetrics(kind=kind)
    if kind == "iperf-network":
        if draw(st.booleans()):
            m.values["packets_total"] = draw(counts)
    elif kind == "streaming-analytics":
        m.values = draw(st.fixed_dictionaries({}, optional={"tuples_total": counts, "latency_total": reals}))
    elif kind == "ml-inference":
        m.values = draw(
            st.fixed_dictionaries(
                {},
                optional={
                    "accuracy_percent": st.floats(min_value=0, max_value=100),
                    "batches_per_second": reals,
                    "completed_queries": counts,
                    "mean_latency": reals,
                },
            )
        )
    else:
        for op in draw(st.lists(st.sampled_from(["read", "update", "insert", "scan"]), unique=True, max_size=3)):
            for minute in draw(st.lists(st.integers(1, 30), unique=True, min_size=1, max_size=3)):
                m.operations.setdefault(op, {})[minute] = OperationStats(
                    count=draw(counts), min=draw(reals), max=draw(reals), average=draw(reals)
                )
    return m


@settings(max_examples=300)
@given(app_metrics())
def test_app_metrics_round_trip(m):
    assert parse_app_metrics(m.kind, format_app_metrics(m)) == m
