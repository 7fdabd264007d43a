"""Replicated key-value state machine and the command conflict relation.

Two commands interfere when the outcome of executing both depends on their
order. For the key-value workload that means: same key, and not both reads.
The conflict relation is pluggable so the checkers can substitute adversarial
relations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Hashable, NamedTuple

PUT = "put"
GET = "get"


class KvOp(NamedTuple):
    """A state-machine operation; payload kept small (~15 bytes encoded)."""

    key: str
    kind: str
    value: str = ""


def conflicts(a: KvOp, b: KvOp) -> bool:
    """Same-key accesses conflict, except read/read pairs, which commute."""
    if a.key != b.key:
        return False
    return not (a.kind == GET and b.kind == GET)


@dataclass(frozen=True)
class ConflictModel:
    """Conflict predicate plus a bucketing hint.

    `bucket` maps an op to a hashable candidate-group key; only ops in the
    same bucket can conflict. For a pure predicate with no usable structure,
    bucket everything together.
    """

    predicate: Callable[[object, object], bool]
    bucket: Callable[[object], Hashable]


KV_CONFLICTS = ConflictModel(predicate=conflicts, bucket=lambda op: op.key)

ALL_CONFLICT = ConflictModel(predicate=lambda a, b: True, bucket=lambda op: 0)


class Store:
    """Per-node key-value store; deterministic function of the decision log."""

    __slots__ = ("data",)

    def __init__(self, data=None):
        self.data = dict(data or {})

    def apply(self, op: KvOp) -> str:
        if op.kind == PUT:
            self.data[op.key] = op.value
            return op.value
        return self.data.get(op.key, "")

    def copy(self) -> "Store":
        return Store(self.data)

    def __eq__(self, other) -> bool:
        return isinstance(other, Store) and self.data == other.data


def apply(store: Store, op: KvOp) -> str:
    return store.apply(op)
