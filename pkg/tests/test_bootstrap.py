from __future__ import annotations

import json
import logging

import pytest
from hypothesis import given, settings, strategies as st

from colobench.bootstrap import (
    MANAGER_STEP_KINDS,
    STEP_KINDS,
    ClusterConfig,
    NodeConfig,
    SSHTransport,
    execute_provisioning,
    load_cluster_config,
    parse_cluster_config,
    plan_provisioning,
)
from colobench.errors import ConfigSyntaxError, SchemaError, TransportError

from .fakes import FakeTransport

WORKERS = ("raspberrypi", "rpi", "small_server")


def test_minimal_cluster_fields(fixtures):
    c = load_cluster_config(fixtures / "cluster_minimal.yaml")
    assert c.manager.ip == "0.0.0.0"
    assert c.manager.hostname == "manager"
    assert c.manager.ssh_key_path == "/conf/ssh_keys/ssh_key.pem"
    assert c.manager.password is None
    (pi,) = c.nodes
    assert (pi.ip, pi.hostname, pi.username, pi.password) == ("10.10.10.10", "raspberrypi", "pi", "raspberrypi")
    assert pi.ssh_key_path is None


def _doc(node_body: str, extra: str = "") -> str:
    return f"""
cluster:
  manager: {{ip: "10.0.0.1", hostname: manager, ssh_key_path: /k.pem}}
  nodes:
    - {node_body}
{extra}"""


@pytest.mark.parametrize(
    "body",
    [
        '{ip: "10.0.0.2", hostname: rpi, username: pi, password: x, ssh_key_path: /k}',
        '{ip: "10.0.0.2", hostname: rpi, username: pi}',
        '{ip: "10.0.0.2", hostname: rpi, password: x}',
        '{ip: "999.0.0.2", hostname: rpi, ssh_key_path: /k}',
        '{ip: "10.0.0.2", ssh_key_path: /k}',
        '{ip: "10.0.0.2", hostname: rpi, ssh_key_path: /k, port: 22}',
        '{ip: 10, hostname: rpi, ssh_key_path: /k}',
    ],
)
def test_node_schema_errors(body):
    with pytest.raises(SchemaError):
        parse_cluster_config(_doc(body))


def test_duplicate_hostname():
    with pytest.raises(SchemaError):
        parse_cluster_config(_doc('{ip: "10.0.0.2", hostname: rpi, ssh_key_path: /k}', '    - {ip: "10.0.0.3", hostname: rpi, ssh_key_path: /k}'))


def test_empty_nodes():
    with pytest.raises(SchemaError):
        parse_cluster_config('cluster:\n  manager: {ip: "10.0.0.1", hostname: m, ssh_key_path: /k}\n  nodes: []\n')


def test_ipv6_and_username_with_key():
    c = parse_cluster_config(_doc('{ip: "fe80::1", hostname: rpi, username: pi, ssh_key_path: /k}'))
    assert c.nodes[0].auth_method == "ssh-key"


def test_syntax_error():
    with pytest.raises(ConfigSyntaxError):
        parse_cluster_config("cluster: [\n")


def test_repr_hides_credentials(cluster):
    text = repr(cluster)
    assert "raspberrypi" in text
    assert "/conf/ssh_keys" not in text and "password" not in text


# -- planning -----------------------------------------------------------------------


def test_plan_shape(cluster):
    plan = plan_provisioning(cluster)
    assert [p.hostname for p in plan.nodes] == ["manager", *WORKERS]
    assert [s.kind for s in plan.nodes[0].steps] == list(MANAGER_STEP_KINDS)
    for p in plan.nodes[1:]:
        assert [s.kind for s in p.steps] == [
            "probe-reachability",
            "install-runtime",
            "install-monitor-agent",
            "join-cluster",
            "verify",
        ]
    tokens = [s.token for p in plan.nodes for s in p.steps]
    assert len(set(tokens)) == len(tokens)


def test_plan_deterministic_and_credential_free(cluster):
    a, b = plan_provisioning(cluster).to_text(), plan_provisioning(cluster).to_text()
    assert a == b
    for secret in ("/conf/ssh_keys", '"pi"', "username"):
        assert secret not in a
    assert json.loads(a)["nodes"][1]["hostname"] == "raspberrypi"


# -- execution --------------------------------------------------------------------------


def test_all_applied_then_idempotent(cluster):
    plan = plan_provisioning(cluster)
    transport = FakeTransport()
    first = execute_provisioning(plan, transport)
    assert first.ok
    assert {o.status for o in first.outcomes} == {"applied"}
    assert len(first.outcomes) == sum(len(p.steps) for p in plan.nodes)
    second = execute_provisioning(plan, transport)
    assert second.count("applied") == 0
    assert {o.status for o in second.outcomes} == {"already-satisfied"}


def test_unreachable_node_isolated(cluster):
    transport = FakeTransport(unreachable={"rpi"})
    report = execute_provisioning(plan_provisioning(cluster), transport)
    rpi = report.for_node("rpi")
    assert [o.status for o in rpi] == ["failed"] * len(STEP_KINDS)
    assert {o.reason for o in rpi} == {"probe-reachability: unreachable"}
    for host in ("manager", "raspberrypi", "small_server"):
        assert {o.status for o in report.for_node(host)} == {"applied"}


def test_failure_stops_node_at_first_failed_step(cluster):
    transport = FakeTransport(failures={"small_server": {"docker swarm join": 1}})
    report = execute_provisioning(plan_provisioning(cluster), transport)
    assert [o.status for o in report.for_node("small_server")] == ["applied", "applied", "applied", "failed", "failed"]
    assert report.for_node("small_server")[3].reason == "join-cluster: exit status 1"
    assert not any("docker info" in c for c in transport.nodes["small_server"].commands)
    # a second run resumes where the first stopped
    transport.failures.clear()
    again = execute_provisioning(plan_provisioning(cluster), transport)
    assert [o.status for o in again.for_node("small_server")] == ["already-satisfied"] * 3 + ["applied"] * 2


def test_dropped_connection_is_a_failed_step(cluster):
    transport = FakeTransport(failures={"rpi": {"get.docker.com": None}})
    report = execute_provisioning(plan_provisioning(cluster), transport)
    assert [o.status for o in report.for_node("rpi")] == ["applied"] + ["failed"] * 4
    assert report.for_node("rpi")[1].reason.startswith("install-runtime: transport error")


def test_no_credentials_in_report_or_logs(caplog):
    caplog.set_level(logging.DEBUG)
    cluster = ClusterConfig(
        NodeConfig("10.0.0.1", "manager", username="admin", ssh_key_path="/secret/keys/manager.pem"),
        (
            NodeConfig("10.0.0.2", "rpi", username="pi", password="hunter2-s3cret"),
            NodeConfig("10.0.0.3", "small_server", username="edge", password="pa55-uncommon"),
        ),
    )
    transport = FakeTransport(unreachable={"rpi", "manager"}, failures={"small_server": {"uname": None}})
    report = execute_provisioning(plan_provisioning(cluster), transport)
    assert not report.ok
    text = report.to_text() + caplog.text
    for node in (cluster.manager, *cluster.nodes):
        for secret in (node.password, node.ssh_key_path):
            if secret:
                assert secret not in text
    assert "pi@" not in text and "admin@" not in text


def test_parallel_execution_matches_serial(cluster):
    plan = plan_provisioning(cluster)
    serial = execute_provisioning(plan, FakeTransport(unreachable={"rpi"}))
    parallel = execute_provisioning(plan, FakeTransport(unreachable={"rpi"}), max_workers=4)
    assert serial.outcomes == parallel.outcomes


def test_ssh_adapter_refuses_password_nodes():
    with pytest.raises(TransportError):
        SSHTransport().connect(NodeConfig("10.0.0.2", "rpi", username="pi", password="x"))


# -- properties ---------------------------------------------------------------------------

HOSTS = [f"node{i}" for i in range(6)]


def _cluster(n):
    return ClusterConfig(
        NodeConfig("10.0.0.1", "manager", ssh_key_path="/k"),
        tuple(NodeConfig(f"10.0.1.{i}", HOSTS[i], username="u", password=f"pw{i}") for i in range(n)),
    )


@settings(max_examples=100)
@given(
    st.integers(min_value=1, max_value=6),
    st.data(),
)
def test_failure_isolation_under_permutation(n, data):
    cluster = _cluster(n)
    bad = data.draw(st.sets(st.sampled_from(HOSTS[:n])))
    failing = data.draw(st.dictionaries(st.sampled_from(HOSTS[:n]), st.sampled_from(["docker swarm join", "get.docker.com", "uname"]), max_size=2))
    order = data.draw(st.permutations(list(cluster.nodes)))
    transport_args = dict(unreachable=bad, failures={h: {c: 3} for h, c in failing.items()})

    baseline = execute_provisioning(plan_provisioning(cluster), FakeTransport(**transport_args))
    shuffled = ClusterConfig(cluster.manager, tuple(order))
    permuted = execute_provisioning(plan_provisioning(shuffled), FakeTransport(**transport_args))
    for host in HOSTS[:n]:
        assert baseline.for_node(host) == permuted.for_node(host)
        outcomes = baseline.for_node(host)
        if host not in bad and host not in failing:
            assert {o.status for o in outcomes} == {"applied"}
    # isolation: a clean cluster gives the same outcomes on every healthy node
    clean = execute_provisioning(plan_provisioning(cluster), FakeTransport())
    for host in HOSTS[:n]:
        if host not in bad and host not in failing:
            assert baseline.for_node(host) == clean.for_node(host)
    assert {o.status for o in clean.outcomes} == {"applied"}


@settings(max_examples=100)
@given(st.integers(min_value=1, max_value=6), st.sets(st.sampled_from(HOSTS)))
def test_idempotency_property(n, unreachable):
    cluster = _cluster(n)
    plan = plan_provisioning(cluster)
    transport = FakeTransport(unreachable=unreachable)
    execute_provisioning(plan, transport)
    transport.unreachable.clear()
    execute_provisioning(plan, transport)
    third = execute_provisioning(plan, transport)
    assert third.count("applied") == 0
    assert third.count("already-satisfied") == len(third.outcomes)
