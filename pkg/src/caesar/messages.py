"""The nine protocol messages.

Proposal-side messages carry the full command (receivers may have never seen
it); replies carry only the command id. `whitelist` is tri-state: None means
"no whitelist", an empty frozenset is a real, empty whitelist. The two are
distinct on the wire and in the predecessor computation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .core import Command, CommandId, Status, Timestamp


@dataclass(frozen=True, slots=True)
class FastPropose:
    KIND = "FastPropose"
    command: Command
    ballot: int
    ts: Timestamp
    whitelist: Optional[frozenset] = None


@dataclass(frozen=True, slots=True)
class FastProposeR:
    KIND = "FastProposeR"
    cmd_id: CommandId
    ballot: int
    ok: bool
    ts: Timestamp
    pred: frozenset


@dataclass(frozen=True, slots=True)
class SlowPropose:
    KIND = "SlowPropose"
    command: Command
    ballot: int
    ts: Timestamp
    pred: frozenset


@dataclass(frozen=True, slots=True)
class SlowProposeR:
    KIND = "SlowProposeR"
    cmd_id: CommandId
    ballot: int
    ok: bool
    ts: Timestamp
    pred: frozenset


@dataclass(frozen=True, slots=True)
class Retry:
    KIND = "Retry"
    command: Command
    ballot: int
    ts: Timestamp
    pred: frozenset


@dataclass(frozen=True, slots=True)
class RetryR:
    KIND = "RetryR"
    cmd_id: CommandId
    ballot: int
    ts: Timestamp
    pred: frozenset
    extra_pred: frozenset


@dataclass(frozen=True, slots=True)
class Stable:
    KIND = "Stable"
    command: Command
    ballot: int
    ts: Timestamp
    pred: frozenset


@dataclass(frozen=True, slots=True)
class Recovery:
    KIND = "Recovery"
    cmd_id: CommandId
    ballot: int


@dataclass(frozen=True, slots=True)
class RecoveryInfo:
    """History-entry snapshot carried in a RecoveryR reply."""

    ts: Timestamp
    pred: frozenset
    status: Status
    ballot: int
    forced: bool


@dataclass(frozen=True, slots=True)
class RecoveryR:
    KIND = "RecoveryR"
    cmd_id: CommandId
    ballot: int
    info: Optional[RecoveryInfo]  # None encodes "no entry" (NOP)


Message = (
    FastPropose | FastProposeR | SlowPropose | SlowProposeR
    | Retry | RetryR | Stable | Recovery | RecoveryR
)


def command_of(msg) -> CommandId:
    cmd = getattr(msg, "cmd_id", None)
    if cmd is not None:
        return cmd
    return msg.command.id
