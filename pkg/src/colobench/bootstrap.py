"""Cluster bootstrapping: configuration, provisioning plans and their execution.

Provisioning goes through a :class:`RemoteTransport`, so tests can drive it
with an in-memory fake and production can use :class:`SSHTransport`. Every
step is guarded by a marker file on the node; a step whose marker exists is
reported as already satisfied, which makes re-running a plan a no-op.
"""

from __future__ import annotations

import hashlib
import ipaddress
import json
import logging
import shlex
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping, Protocol, Sequence

from . import _yaml
from .errors import SchemaError, TransportError

log = logging.getLogger(__name__)

STEP_KINDS = ("probe-reachability", "install-runtime", "install-monitor-agent", "join-cluster", "verify")
MANAGER_STEP_KINDS = ("probe-reachability", "install-runtime", "install-monitor-agent", "cluster-initialize", "verify")
MARKER_DIR = "/var/lib/colobench/provision"

_NODE_KEYS = {"ip", "hostname", "username", "password", "ssh_key_path"}

# {ip} is the node's address, {manager_ip} the manager's.
STEP_COMMANDS = {
    "probe-reachability": "uname -a",
    "install-runtime": "command -v docker >/dev/null || (curl -fsSL https://get.docker.com | sh)",
    "install-monitor-agent": (
        "docker inspect colobench-agent >/dev/null 2>&1 || docker run -d --name colobench-agent "
        "--restart unless-stopped --pid host --network host -v /proc:/host/proc:ro "
        "-v /sys:/host/sys:ro -v /var/run/docker.sock:/var/run/docker.sock:ro netdata/netdata"
    ),
    "cluster-initialize": "docker swarm init --advertise-addr {ip} || docker info | grep -q 'Swarm: active'",
    "join-cluster": "docker swarm join --token \"$(cat /etc/colobench/swarm-token)\" {manager_ip}:2377",
    "verify": "docker info --format '{{{{.Swarm.LocalNodeState}}}}' | grep -q active",
}


@dataclass(frozen=True)
class NodeConfig:
    ip: str
    hostname: str
    username: str | None = field(default=None, repr=False)
    password: str | None = field(default=None, repr=False)
    ssh_key_path: str | None = field(default=None, repr=False)

    @property
    def auth_method(self) -> str:
        return "password" if self.password is not None else "ssh-key"

    def public_dict(self) -> dict[str, str]:
        """Identity without any credential material."""
        return {"hostname": self.hostname, "ip": self.ip, "auth": self.auth_method}


@dataclass(frozen=True)
class ClusterConfig:
    manager: NodeConfig
    nodes: tuple[NodeConfig, ...]

    def __post_init__(self):
        if not self.nodes:
            raise SchemaError("at least one node is required", "cluster.nodes")
        seen: set[str] = set()
        for node in (self.manager, *self.nodes):
            if node.hostname in seen:
                raise SchemaError(f"duplicate hostname {node.hostname!r}", "cluster")
            seen.add(node.hostname)

    @property
    def hostnames(self) -> tuple[str, ...]:
        return (self.manager.hostname, *(n.hostname for n in self.nodes))

    def node(self, hostname: str) -> NodeConfig:
        for n in (self.manager, *self.nodes):
            if n.hostname == hostname:
                return n
        raise KeyError(hostname)


def _parse_node(raw: Any, path: str) -> NodeConfig:
    if not isinstance(raw, Mapping):
        raise SchemaError(f"expected a mapping, got {raw!r}", path)
    for key in raw:
        if key not in _NODE_KEYS:
            raise SchemaError(f"unknown key {key!r}", f"{path}.{key}")
    values = {}
    for key in _NODE_KEYS:
        value = raw.get(key)
        if value is not None and not isinstance(value, str):
            raise SchemaError(f"expected a string, got {type(value).__name__}", f"{path}.{key}")
        values[key] = value
    for key in ("ip", "hostname"):
        if not values[key]:
            raise SchemaError("required field is missing", f"{path}.{key}")
    try:
        ipaddress.ip_address(values["ip"])
    except ValueError:
        raise SchemaError(f"{values['ip']!r} is not an IP address", f"{path}.ip") from None
    has_password = values["password"] is not None
    has_key = values["ssh_key_path"] is not None
    if has_password and has_key:
        raise SchemaError("give either password or ssh_key_path, not both", path)
    if not has_password and not has_key:
        raise SchemaError("one of password or ssh_key_path is required", path)
    if has_password and not values["username"]:
        raise SchemaError("password authentication needs a username", f"{path}.username")
    return NodeConfig(**values)


def parse_cluster_config(text: str | bytes) -> ClusterConfig:
    doc = _yaml.load_document(text)
    if not isinstance(doc, Mapping) or set(doc) != {"cluster"}:
        raise SchemaError("expected a single top-level 'cluster' mapping")
    cluster = doc["cluster"]
    if not isinstance(cluster, Mapping):
        raise SchemaError("expected a mapping", "cluster")
    for key in cluster:
        if key not in ("manager", "nodes"):
            raise SchemaError(f"unknown key {key!r}", f"cluster.{key}")
    if cluster.get("manager") is None:
        raise SchemaError("required field is missing", "cluster.manager")
    manager = _parse_node(cluster["manager"], "cluster.manager")
    nodes = cluster.get("nodes")
    if not isinstance(nodes, list) or not nodes:
        raise SchemaError("expected a non-empty list of nodes", "cluster.nodes")
    parsed = tuple(_parse_node(n, f"cluster.nodes[{i}]") for i, n in enumerate(nodes))
    return ClusterConfig(manager=manager, nodes=parsed)


def load_cluster_config(path) -> ClusterConfig:
    with open(path, "rb") as fh:
        return parse_cluster_config(fh.read())


# -- planning -----------------------------------------------------------------


@dataclass(frozen=True)
class ProvisionStep:
    hostname: str
    kind: str
    token: str
    command: str

    @property
    def marker(self) -> str:
        return f"{MARKER_DIR}/{self.token}"


@dataclass(frozen=True)
class NodePlan:
    node: NodeConfig
    role: str  # "manager" or "worker"
    steps: tuple[ProvisionStep, ...]

    @property
    def hostname(self) -> str:
        return self.node.hostname


@dataclass(frozen=True)
class ProvisioningPlan:
    nodes: tuple[NodePlan, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "nodes": [
                {
                    **plan.node.public_dict(),
                    "role": plan.role,
                    "steps": [{"kind": s.kind, "token": s.token, "command": s.command} for s in plan.steps],
                }
                for plan in self.nodes
            ]
        }

    def to_text(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _token(node: NodeConfig, kind: str, command: str) -> str:
    digest = hashlib.sha256(f"{node.hostname}\0{node.ip}\0{kind}\0{command}".encode()).hexdigest()
    return f"{kind}-{digest[:16]}"


def plan_provisioning(cluster: ClusterConfig) -> ProvisioningPlan:
    """Fixed step template per node; the manager initializes the swarm instead of joining it."""
    plans = []
    for role, node in [("manager", cluster.manager), *(("worker", n) for n in cluster.nodes)]:
        kinds = MANAGER_STEP_KINDS if role == "manager" else STEP_KINDS
        steps = []
        for kind in kinds:
            command = STEP_COMMANDS[kind].format(ip=node.ip, manager_ip=cluster.manager.ip)
            steps.append(ProvisionStep(node.hostname, kind, _token(node, kind, command), command))
        plans.append(NodePlan(node=node, role=role, steps=tuple(steps)))
    return ProvisioningPlan(tuple(plans))


# -- execution ------------------------------------------------------------------


@dataclass(frozen=True)
class CommandResult:
    exit_status: int
    output: str = ""


class Session(Protocol):
    def run(self, command: str) -> CommandResult: ...

    def put_file(self, path: str, data: bytes) -> None: ...

    def close(self) -> None: ...


class RemoteTransport(Protocol):
    """Opens sessions to nodes. Must allow concurrent sessions to distinct nodes."""

    def connect(self, node: NodeConfig) -> Session: ...


@dataclass(frozen=True)
class StepOutcome:
    hostname: str
    kind: str
    token: str
    status: str  # "applied", "already-satisfied" or "failed"
    reason: str | None = None


@dataclass
class ProvisionReport:
    outcomes: list[StepOutcome] = field(default_factory=list)

    def for_node(self, hostname: str) -> list[StepOutcome]:
        return [o for o in self.outcomes if o.hostname == hostname]

    def count(self, status: str) -> int:
        return sum(1 for o in self.outcomes if o.status == status)

    @property
    def ok(self) -> bool:
        return self.count("failed") == 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "outcomes": [
                {"hostname": o.hostname, "kind": o.kind, "token": o.token, "status": o.status, "reason": o.reason}
                for o in self.outcomes
            ]
        }

    def to_text(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _scrub(message: str, node: NodeConfig) -> str:
    for secret in (node.password, node.ssh_key_path):
        if secret:
            message = message.replace(secret, "***")
    if node.username:
        message = message.replace(f"{node.username}@", "***@")
    return message


def _execute_node(plan: NodePlan, transport: RemoteTransport) -> list[StepOutcome]:
    outcomes: list[StepOutcome] = []
    steps = list(plan.steps)

    def fail_rest(start: int, reason: str) -> list[StepOutcome]:
        reason = _scrub(reason, plan.node)
        log.warning("provisioning %s stopped: %s", plan.hostname, reason)
        return outcomes + [StepOutcome(s.hostname, s.kind, s.token, "failed", reason) for s in steps[start:]]

    try:
        session = transport.connect(plan.node)
    except TransportError as exc:
        log.debug("connect to %s failed: %s", plan.hostname, _scrub(str(exc), plan.node))
        return fail_rest(0, f"{steps[0].kind}: unreachable")
    try:
        for i, step in enumerate(steps):
            try:
                if session.run(f"test -f {shlex.quote(step.marker)}").exit_status == 0:
                    outcomes.append(StepOutcome(step.hostname, step.kind, step.token, "already-satisfied"))
                    continue
                result = session.run(step.command)
                if result.exit_status != 0:
                    return fail_rest(i, f"{step.kind}: exit status {result.exit_status}")
                session.put_file(step.marker, step.token.encode())
            except TransportError as exc:
                return fail_rest(i, f"{step.kind}: transport error ({exc})")
            log.info("provisioned %s %s", step.hostname, step.kind)
            outcomes.append(StepOutcome(step.hostname, step.kind, step.token, "applied"))
    finally:
        try:
            session.close()
        except TransportError:
            pass
    return outcomes


def execute_provisioning(plan: ProvisioningPlan, transport: RemoteTransport, max_workers: int = 1) -> ProvisionReport:
    """Run ``plan``; a failure stops that node's remaining steps but never other nodes.

    Outcomes are reported in plan order regardless of ``max_workers``.
    """
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            per_node = list(pool.map(lambda p: _execute_node(p, transport), plan.nodes))
    else:
        per_node = [_execute_node(p, transport) for p in plan.nodes]
    return ProvisionReport([o for outcomes in per_node for o in outcomes])


# -- transports ---------------------------------------------------------------


class _SSHSession:
    def __init__(self, argv: Sequence[str], timeout: float):
        self._argv = list(argv)
        self._timeout = timeout

    def _call(self, command: str, data: bytes | None = None) -> subprocess.CompletedProcess:
        try:
            return subprocess.run(
                [*self._argv, command], input=data, capture_output=True, timeout=self._timeout, check=False
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise TransportError(type(exc).__name__) from None

    def run(self, command: str) -> CommandResult:
        proc = self._call(command)
        if proc.returncode == 255:
            raise TransportError("ssh connection failed")
        return CommandResult(proc.returncode, proc.stdout.decode(errors="replace"))

    def put_file(self, path: str, data: bytes) -> None:
        directory = path.rsplit("/", 1)[0] or "/"
        proc = self._call(f"mkdir -p {shlex.quote(directory)} && cat > {shlex.quote(path)}", data)
        if proc.returncode != 0:
            raise TransportError(f"could not write {path}")

    def close(self) -> None:
        pass


class SSHTransport:
    """Runs commands through the system ``ssh`` client (key authentication only).

    Password authentication would need an interactive prompt, so nodes
    configured with a password are reported unreachable.
    """

    def __init__(self, ssh_binary: str = "ssh", connect_timeout: int = 10, command_timeout: float = 900.0):
        self.ssh_binary = ssh_binary
        self.connect_timeout = connect_timeout
        self.command_timeout = command_timeout

    def connect(self, node: NodeConfig) -> _SSHSession:
        if node.ssh_key_path is None:
            raise TransportError("password authentication is not supported by the ssh adapter")
        target = f"{node.username}@{node.ip}" if node.username else node.ip
        argv = [
            self.ssh_binary,
            "-o", "BatchMode=yes",
            "-o", f"ConnectTimeout={self.connect_timeout}",
            "-i", node.ssh_key_path,
            target,
        ]
        session = _SSHSession(argv, self.command_timeout)
        session.run("true")
        return session
