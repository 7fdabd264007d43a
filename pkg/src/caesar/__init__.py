"""Caesar: multi-leader timestamp-ordered generalized consensus, with a
deterministic simulator, fault injection, consistency checkers, and an
experiment CLI."""

from .core import (
    BallotMap, Command, CommandId, HistoryEntry, LogicalClock, QuorumConfig,
    Status, Timestamp, clock_advance, quorum_sizes, timestamp_less,
)
from .protocol import Node, Outputs, ProtocolConfig
from .rsm import KV_CONFLICTS, ConflictModel, KvOp, Store, conflicts

__all__ = [
    "BallotMap", "Command", "CommandId", "ConflictModel", "HistoryEntry",
    "KV_CONFLICTS", "KvOp", "LogicalClock", "Node", "Outputs", "ProtocolConfig",
    "QuorumConfig", "Status", "Store", "Timestamp", "clock_advance",
    "conflicts", "quorum_sizes", "timestamp_less",
]

__version__ = "0.1.0"
