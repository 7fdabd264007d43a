"""Core domain types: timestamps, logical clocks, commands, history entries, quorums.

Everything here is a plain value type. The ordering of `Timestamp` is the
protocol's currency: a strict total order where ties on the counter are broken
by the owning node's index, so no two nodes ever mint equal timestamps.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple, Optional


class Timestamp(NamedTuple):
    """Logical timestamp ``(counter, owner)`` with lexicographic total order."""

    counter: int
    owner: int

    def __str__(self) -> str:
        return f"{self.counter}.{self.owner}"

    @classmethod
    def parse(cls, text: str) -> "Timestamp":
        k, o = text.split(".")
        return cls(int(k), int(o))


def timestamp_less(a: Timestamp, b: Timestamp) -> bool:
    """Strict order: a < b iff counter less, or equal counter and lower owner."""
    return a.counter < b.counter or (a.counter == b.counter and a.owner < b.owner)


class LogicalClock:
    """Per-node monotone clock over `Timestamp` values.

    `emit` returns the current value and advances past it, so consecutive
    emissions of one node are strictly increasing. `observe` lifts the clock
    strictly above any incoming timestamp that is not already below it.
    """

    __slots__ = ("current",)

    def __init__(self, owner: int, counter: int = 0):
        self.current = Timestamp(counter, owner)

    def emit(self) -> Timestamp:
        ts = self.current
        self.current = Timestamp(ts.counter + 1, ts.owner)
        return ts

    def observe(self, ts: Timestamp) -> None:
        cur = self.current
        if ts >= cur:
            # Smallest value owned by this node strictly above ts.
            k = ts.counter if cur.owner > ts.owner else ts.counter + 1
            self.current = Timestamp(k, cur.owner)

    def copy(self) -> "LogicalClock":
        return LogicalClock(self.current.owner, self.current.counter)


def clock_advance(clock: LogicalClock, observed: Timestamp) -> LogicalClock:
    """Functional form of `LogicalClock.observe` (returns a new clock)."""
    out = clock.copy()
    out.observe(observed)
    return out


class CommandId(NamedTuple):
    """Globally unique command identifier: proposing node plus local sequence."""

    node: int
    seq: int

    def __str__(self) -> str:
        return f"{self.node}.{self.seq}"

    @classmethod
    def parse(cls, text: str) -> "CommandId":
        n, s = text.split(".")
        return cls(int(n), int(s))


@dataclass(frozen=True, slots=True)
class Command:
    """A client command: unique id plus an opaque state-machine operation."""

    id: CommandId
    op: object


class Status(str, enum.Enum):
    FAST_PENDING = "fast-pending"
    SLOW_PENDING = "slow-pending"
    ACCEPTED = "accepted"
    REJECTED = "rejected"
    STABLE = "stable"

    def __str__(self) -> str:  # trace-friendly
        return self.value


# Same-ballot status transitions an acceptor may take. STABLE is terminal
# for a given ballot; a higher ballot may overwrite anything.
LEGAL_TRANSITIONS = {
    Status.FAST_PENDING: {Status.REJECTED, Status.SLOW_PENDING, Status.ACCEPTED, Status.STABLE},
    Status.SLOW_PENDING: {Status.REJECTED, Status.ACCEPTED, Status.STABLE},
    Status.REJECTED: {Status.SLOW_PENDING, Status.ACCEPTED, Status.STABLE},
    Status.ACCEPTED: {Status.STABLE},
    Status.STABLE: set(),
}


@dataclass(slots=True)
class HistoryEntry:
    """Per-command record in a node's history.

    `pred` is the live predecessor set (pruned in place once stable);
    `decided_pred` freezes the predecessor set exactly as broadcast in the
    finalizing message, which is what recovery echoes and checkers consume.
    """

    command: Command
    ts: Timestamp
    pred: set
    status: Status
    ballot: int
    forced: bool
    decided_pred: Optional[frozenset] = None
    version: int = 0

    @property
    def id(self) -> CommandId:
        return self.command.id

    def clone(self) -> "HistoryEntry":
        return HistoryEntry(
            self.command, self.ts, set(self.pred), self.status, self.ballot,
            self.forced, self.decided_pred, self.version,
        )


class BallotMap:
    """Per-command ballot numbers, default 0, never decreasing."""

    __slots__ = ("_map",)

    def __init__(self, items=None):
        self._map = dict(items or {})

    def get(self, cmd_id) -> int:
        return self._map.get(cmd_id, 0)

    def raise_to(self, cmd_id, ballot: int) -> int:
        cur = self._map.get(cmd_id, 0)
        if ballot > cur:
            self._map[cmd_id] = ballot
            return ballot
        return cur

    def items(self):
        return self._map.items()

    def copy(self) -> "BallotMap":
        return BallotMap(self._map)


class QuorumConfig(NamedTuple):
    n: int
    cq: int
    fq: int
    f: int


def quorum_sizes(n: int) -> QuorumConfig:
    """Classic/fast quorum sizes and the crash budget for an n-node group.

    cq = floor(n/2)+1, fq = ceil(3n/4), f = n - cq. Requires n >= 3.
    """
    if n < 3:
        raise ValueError(f"need at least 3 nodes, got {n}")
    cq = n // 2 + 1
    fq = -(-3 * n // 4)  # ceil(3n/4)
    return QuorumConfig(n=n, cq=cq, fq=fq, f=n - cq)
