"""Workload generation: seeded key choice, open/closed-loop arrival schedules.

Conflicting keys come from a small shared pool with the configured
probability; everything else draws from per-client partitions of a private
keyspace, cycling within the partition so a conflict rate of zero really means
zero interference.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from random import Random
from typing import Optional

from .core import Command, CommandId
from .rsm import PUT, KvOp

MODE_OPEN = "open"
MODE_CLOSED = "closed"
MODE_SCRIPT = "script"


@dataclass(frozen=True)
class WorkloadSpec:
    mode: str = MODE_OPEN
    commands_total: int = 100
    conflict_percent: float = 0.0
    shared_pool_size: int = 100
    keyspace_size: int = 10_000
    clients_per_node: int = 1
    total_clients: Optional[int] = None   # overrides clients_per_node when set
    arrival_gap: float = 20.0             # mean inter-arrival ticks (open loop)
    start_tick: int = 0
    script: tuple = ()                    # ((tick, node, key, kind, value), ...)


class WorkloadDriver:
    """Deterministic command source for one run."""

    def __init__(self, spec: WorkloadSpec, n: int, seed: int):
        self.spec = spec
        self.n = n
        self.rng = Random(f"workload-{seed}")
        self._seq = [0] * n
        self._client_of = {}    # cmd_id -> client index
        self._queues = []       # per client: remaining command count
        self._clients = []      # client index -> node
        self._priv_next = []    # per client: rotating private key offset
        if spec.mode != MODE_SCRIPT:
            total = spec.total_clients if spec.total_clients else n * spec.clients_per_node
            total = max(1, total)
            self._clients = [i % n for i in range(total)]
            base, extra = divmod(spec.commands_total, total)
            self._queues = [base + (1 if c < extra else 0) for c in range(total)]
            self._priv_next = [0] * total

    # ------------------------------------------------------------ commands

    def _next_command(self, client: int) -> Command:
        node = self._clients[client]
        spec = self.spec
        if spec.conflict_percent > 0 and self.rng.random() * 100.0 < spec.conflict_percent:
            key = f"s{self.rng.randrange(spec.shared_pool_size):03d}"
        else:
            part = max(1, spec.keyspace_size // max(1, len(self._clients)))
            key = f"p{client}k{self._priv_next[client] % part}"
            self._priv_next[client] += 1
        cmd_id = CommandId(node, self._seq[node])
        self._seq[node] += 1
        cmd = Command(cmd_id, KvOp(key, PUT, f"v{cmd_id.seq % 1000:03d}"))
        self._client_of[cmd_id] = client
        return cmd

    def initial_events(self) -> list:
        """(tick, node, command) proposals scheduled at run start."""
        spec = self.spec
        events = []
        if spec.mode == MODE_SCRIPT:
            for i, (tick, node, key, kind, value) in enumerate(spec.script):
                cmd_id = CommandId(node, self._seq[node])
                self._seq[node] += 1
                events.append((tick, node, Command(cmd_id, KvOp(key, kind, value))))
            return events
        if spec.mode == MODE_CLOSED:
            for client, node in enumerate(self._clients):
                if self._queues[client] > 0:
                    self._queues[client] -= 1
                    events.append((spec.start_tick + client, node, self._next_command(client)))
            return events
        # Open loop: one deterministic arrival schedule for the whole run.
        t = float(spec.start_tick)
        remaining = spec.commands_total
        client = 0
        while remaining > 0:
            cmd = self._next_command(client % len(self._clients))
            events.append((int(t), self._clients[client % len(self._clients)], cmd))
            t += max(1.0, self.rng.expovariate(1.0 / max(1.0, spec.arrival_gap)))
            client += 1
            remaining -= 1
        return events

    def on_decide(self, node: int, cmd_id: CommandId, tick: int) -> list:
        """Closed-loop continuation: the owning client proposes its next command."""
        if self.spec.mode != MODE_CLOSED:
            return []
        client = self._client_of.get(cmd_id)
        if client is None or self._clients[client] != node:
            return []
        if self._queues[client] <= 0:
            return []
        self._queues[client] -= 1
        return [(tick + 1, node, self._next_command(client))]
