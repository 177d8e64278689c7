"""In-memory stand-ins for remote nodes."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

from colobench.bootstrap import CommandResult, NodeConfig
from colobench.errors import TransportError


@dataclass
class FakeNode:
    files: dict[str, bytes] = field(default_factory=dict)
    commands: list[str] = field(default_factory=list)


class FakeSession:
    def __init__(self, transport: "FakeTransport", node: FakeNode, hostname: str):
        self.transport = transport
        self.node = node
        self.hostname = hostname

    def run(self, command: str) -> CommandResult:
        self.node.commands.append(command)
        if command.startswith("test -f "):
            path = command[len("test -f "):].strip("'")
            return CommandResult(0 if path in self.node.files else 1)
        for needle, status in self.transport.failures.get(self.hostname, {}).items():
            if needle in command:
                if status is None:
                    raise TransportError(f"connection to {self.hostname} dropped")
                return CommandResult(status, "boom")
        return CommandResult(0, "ok")

    def put_file(self, path: str, data: bytes) -> None:
        self.node.files[path] = data

    def close(self) -> None:
        pass


class FakeTransport:
    """Scripted remote execution.

    ``unreachable`` hostnames refuse connections. ``failures`` maps a
    hostname to {command substring: exit status}; an exit status of None
    drops the connection instead.
    """

    def __init__(self, unreachable=(), failures=None):
        self.unreachable = set(unreachable)
        self.failures = failures or {}
        self.nodes: dict[str, FakeNode] = {}
        self.connects: list[str] = []
        self._lock = threading.Lock()

    def connect(self, node: NodeConfig) -> FakeSession:
        with self._lock:
            self.connects.append(node.hostname)
            state = self.nodes.setdefault(node.hostname, FakeNode())
        if node.hostname in self.unreachable:
            raise TransportError(f"ssh {node.username}@{node.ip} refused (key {node.ssh_key_path}, pw {node.password})")
        return FakeSession(self, state, node.hostname)
