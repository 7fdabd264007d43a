"""Per-node engine for the timestamp-ordered multi-leader consensus protocol.

A `Node` is a single-threaded, event-driven state machine. Hosts (the
deterministic simulator, the model explorer, the live TCP runner) feed it one
message, proposal, or timer at a time; everything it wants done comes back as
plain values in an `Outputs` bundle. Nothing here touches shared state or a
wall clock, which is what makes runs replayable and explorable.

The flow per command: the proposer broadcasts a fast proposal carrying a fresh
timestamp; acceptors answer with the conflicting lower-timestamp commands they
know (the predecessor set), possibly after deferring while a higher-timestamp
conflicting command is still in flight (the wait condition). A full fast
quorum of non-rejecting replies finalizes in two delays; any rejection routes
through a retry round at a higher timestamp; a timeout with only a classic
quorum of clean replies inserts a slow proposal round. Recovery (see
`recovery.py`) re-drives a command under a higher ballot.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

from . import recovery as recovery_mod
from .core import (
    BallotMap, Command, CommandId, HistoryEntry, LogicalClock, QuorumConfig,
    Status, Timestamp, quorum_sizes,
)
from .messages import (
    FastPropose, FastProposeR, Recovery, RecoveryR, Retry, RetryR,
    SlowPropose, SlowProposeR, Stable,
)
from .rsm import KV_CONFLICTS, ConflictModel, Store

log = logging.getLogger(__name__)

# Deliberate protocol weakenings used by the checker's mutation tests.
MUTATION_NONE = "none"
MUTATION_SKIP_WAIT = "skip_wait"
MUTATION_FAST_ON_CQ = "fast_on_cq"
MUTATION_SKIP_WHITELIST = "skip_whitelist"
MUTATIONS = (MUTATION_NONE, MUTATION_SKIP_WAIT, MUTATION_FAST_ON_CQ, MUTATION_SKIP_WHITELIST)


@dataclass(frozen=True)
class ProtocolConfig:
    n: int
    conflict: ConflictModel = KV_CONFLICTS
    fq_timeout: int = 1000           # ticks before falling back to a classic quorum
    suspicion_base: int = 4000       # ticks of leader silence before suspecting
    suspicion_stagger: int = 0       # extra ticks per node index; staggers rival recoverers
    mutation: str = MUTATION_NONE

    def quorums(self) -> QuorumConfig:
        return quorum_sizes(self.n)


@dataclass(slots=True)
class Decision:
    """One command applied to the local state machine."""

    cmd_id: CommandId
    ts: Timestamp
    pred: frozenset
    ballot: int
    index: int
    result: str


class Outputs:
    """Everything a handler wants performed, returned as values."""

    __slots__ = ("messages", "decisions", "timers", "events")

    def __init__(self):
        self.messages: list = []    # (destination, message)
        self.decisions: list = []   # Decision
        self.timers: list = []      # (delay_ticks, token)
        self.events: list = []      # trace events, e.g. ("park", cmd_id)

    def send(self, to: int, msg) -> None:
        self.messages.append((to, msg))

    def broadcast(self, n: int, msg) -> None:
        for i in range(n):
            self.messages.append((i, msg))

    def timer(self, delay: int, token) -> None:
        self.timers.append((delay, token))

    def event(self, ev) -> None:
        self.events.append(ev)


PHASE_FAST = "fast"
PHASE_SLOW = "slow"
PHASE_RETRY = "retry"
PHASE_RECOVERY = "recovery"


class Phase:
    """Leader-side reply collection for one command at one ballot."""

    __slots__ = ("kind", "ballot", "ts", "pred", "whitelist", "command", "replies", "timeout_fired")

    def __init__(self, kind, ballot, command, ts=None, pred=None, whitelist=None):
        self.kind = kind
        self.ballot = ballot
        self.command = command
        self.ts = ts
        self.pred = set(pred or ())
        self.whitelist = whitelist
        self.replies = {}
        self.timeout_fired = False

    def clone(self) -> "Phase":
        ph = Phase(self.kind, self.ballot, self.command, self.ts, self.pred, self.whitelist)
        ph.replies = dict(self.replies)
        ph.timeout_fired = self.timeout_fired
        return ph


class ParkedWait:
    """A propose handler deferred by the wait condition, to be re-run later."""

    __slots__ = ("kind", "ballot", "ts", "whitelist", "sender", "version", "since")

    def __init__(self, kind, ballot, ts, whitelist, sender, version, since):
        self.kind = kind          # PHASE_FAST or PHASE_SLOW
        self.ballot = ballot
        self.ts = ts
        self.whitelist = whitelist
        self.sender = sender
        self.version = version    # history-entry version this wait belongs to
        self.since = since

    def clone(self) -> "ParkedWait":
        return ParkedWait(self.kind, self.ballot, self.ts, self.whitelist,
                          self.sender, self.version, self.since)


OK = "ok"
NACK = "nack"
DEFER = "defer"


class Node:
    """One protocol participant; all methods are synchronous and deterministic."""

    def __init__(self, node_id: int, config: ProtocolConfig):
        self.id = node_id
        self.config = config
        q = config.quorums()
        self.n = q.n
        self.cq = q.cq
        self.fq = q.fq
        self.clock = LogicalClock(node_id)
        self.history: dict[CommandId, HistoryEntry] = {}
        self.ballots = BallotMap()
        self.decided: set[CommandId] = set()
        self.log: list[Decision] = []
        self.store = Store()
        self.phases: dict[CommandId, Phase] = {}
        self.parked: dict[CommandId, ParkedWait] = {}
        self.key_index: dict = {}            # bucket -> set of command ids
        self.pending_preds: dict[CommandId, set] = {}   # stable, undecided -> undecided preds
        self.blocked_on: dict[CommandId, set] = {}      # pred id -> stable cmds waiting on it
        self.leader_of: dict[CommandId, int] = {}
        self.last_heard: dict[int, int] = {}
        self.fd_outstanding: set[CommandId] = set()
        self._touched: set = set()           # buckets with history changes this step
        self._next_seq = 0

    # ------------------------------------------------------------------ API

    def suspicion_timeout(self) -> int:
        return self.config.suspicion_base + self.id * self.config.suspicion_stagger

    def effective_fq(self) -> int:
        if self.config.mutation == MUTATION_FAST_ON_CQ:
            return self.cq
        return self.fq

    def new_command(self, op) -> Command:
        cmd = Command(CommandId(self.id, self._next_seq), op)
        self._next_seq += 1
        return cmd

    def propose(self, command: Command, now: int) -> Outputs:
        out = Outputs()
        if command.id in self.history or command.id in self.phases:
            log.warning("node %d: duplicate proposal of %s ignored", self.id, command.id)
            out.event(("dup_propose", command.id))
            return out
        ts = self.clock.emit()
        self.leader_of[command.id] = self.id
        self._start_fast_proposal(out, command, 0, ts, None, now)
        self._drain(out, now)
        return out

    def handle(self, msg, sender: int, now: int) -> Outputs:
        out = Outputs()
        self.last_heard[sender] = now
        kind = msg.KIND
        if kind == "FastPropose":
            self._on_fast_propose(out, msg, sender, now)
        elif kind == "FastProposeR":
            self._on_proposal_reply(out, msg, sender, now, PHASE_FAST)
        elif kind == "SlowPropose":
            self._on_slow_propose(out, msg, sender, now)
        elif kind == "SlowProposeR":
            self._on_proposal_reply(out, msg, sender, now, PHASE_SLOW)
        elif kind == "Retry":
            self._on_retry(out, msg, sender, now)
        elif kind == "RetryR":
            self._on_retry_reply(out, msg, sender, now)
        elif kind == "Stable":
            self._on_stable(out, msg, sender, now)
        elif kind == "Recovery":
            recovery_mod.on_recovery(self, out, msg, sender, now)
        elif kind == "RecoveryR":
            recovery_mod.on_recovery_reply(self, out, msg, sender, now)
        else:  # pragma: no cover - exhaustive over the message union
            raise ValueError(f"unknown message kind {kind}")
        self._drain(out, now)
        return out

    def on_timer(self, token, now: int) -> Outputs:
        out = Outputs()
        kind = token[0]
        if kind == "fqt":
            _, cmd_id, ballot = token
            self.fire_fast_timeout(out, cmd_id, ballot, now)
        elif kind == "fd":
            _, cmd_id = token
            self.fd_outstanding.discard(cmd_id)
            self._fd_check(out, cmd_id, now)
        self._drain(out, now)
        return out

    def fire_fast_timeout(self, out: Outputs, cmd_id: CommandId, ballot: int, now: int) -> None:
        ph = self.phases.get(cmd_id)
        if ph is None or ph.kind != PHASE_FAST or ph.ballot != ballot or ph.timeout_fired:
            return
        ph.timeout_fired = True
        out.event(("timeout", cmd_id, ballot))
        self._check_fast_transition(out, cmd_id, now)

    def suspect(self, cmd_id: CommandId, now: int) -> Outputs:
        """Failure-detector entry point: try to take over cmd's leadership."""
        out = Outputs()
        recovery_mod.start_recovery(self, out, cmd_id, now)
        self._drain(out, now)
        return out

    # ------------------------------------------------------ failure detector

    def _request_fd(self, out: Outputs, cmd_id: CommandId, now: int) -> None:
        if cmd_id in self.fd_outstanding:
            return
        self.fd_outstanding.add(cmd_id)
        out.timer(self.suspicion_timeout(), ("fd", cmd_id))

    def _fd_check(self, out: Outputs, cmd_id: CommandId, now: int) -> None:
        entry = self.history.get(cmd_id)
        if entry is None or entry.status is Status.STABLE or cmd_id in self.decided:
            return
        leader = self.leader_of.get(cmd_id, cmd_id.node)
        timeout = self.suspicion_timeout()
        if leader == self.id:
            # Our own takeover stalled; escalate with a fresh ballot.
            recovery_mod.start_recovery(self, out, cmd_id, now)
            self._request_fd(out, cmd_id, now)
            return
        heard = self.last_heard.get(leader, -1)
        if heard >= 0 and heard + timeout > now:
            self.fd_outstanding.add(cmd_id)
            out.timer(heard + timeout - now, ("fd", cmd_id))
            return
        recovery_mod.start_recovery(self, out, cmd_id, now)
        self._request_fd(out, cmd_id, now)

    # --------------------------------------------------------- wait condition

    def _conflicting_entries(self, op, exclude: CommandId):
        bucket = self.config.conflict.bucket(op)
        ids = self.key_index.get(bucket)
        if not ids:
            return
        pred = self.config.conflict.predicate
        for cid in ids:
            if cid == exclude:
                continue
            entry = self.history[cid]
            if pred(op, entry.command.op):
                yield entry

    def compute_predecessors(self, command: Command, ts: Timestamp,
                             whitelist: Optional[frozenset]) -> set:
        """Conflicting commands that must precede `command` at timestamp `ts`.

        Without a whitelist: every known conflicting command with a smaller
        timestamp. With one (recovery re-proposals): only whitelisted entries
        or those already past the fast-pending state, which is exactly the
        information a recovered decision is allowed to trust.
        """
        preds = set()
        for e in self._conflicting_entries(command.op, command.id):
            if e.ts >= ts:
                continue
            if whitelist is None:
                preds.add(e.id)
            elif e.id in whitelist or e.status in (
                    Status.SLOW_PENDING, Status.ACCEPTED, Status.STABLE):
                preds.add(e.id)
        return preds

    def wait_verdict(self, command: Command, ts: Timestamp) -> str:
        """OK / NACK / DEFER for proposing `command` at `ts`.

        A conflicting command with a greater timestamp whose predecessor set
        does not include us forces a NACK once finalized (accepted/stable),
        and a deferral while it can still change. Only greater timestamps can
        block, so wait chains are ordered and never cycle.
        """
        if self.config.mutation == MUTATION_SKIP_WAIT:
            return OK
        verdict = OK
        for e in self._conflicting_entries(command.op, command.id):
            if e.ts > ts and command.id not in e.pred:
                if e.status in (Status.ACCEPTED, Status.STABLE):
                    verdict = NACK
                else:
                    return DEFER
        return verdict

    def wait_blockers(self, command: Command, ts: Timestamp) -> list:
        """Entries currently deferring `command` (for diagnostics/invariants)."""
        out = []
        for e in self._conflicting_entries(command.op, command.id):
            if (e.ts > ts and command.id not in e.pred
                    and e.status not in (Status.ACCEPTED, Status.STABLE)):
                out.append(e)
        return out

    # ------------------------------------------------------------- proposals

    def _start_fast_proposal(self, out, command, ballot, ts, whitelist, now):
        self.phases[command.id] = Phase(PHASE_FAST, ballot, command, ts, (), whitelist)
        out.broadcast(self.n, FastPropose(command, ballot, ts, whitelist))
        out.timer(self.config.fq_timeout, ("fqt", command.id, ballot))

    def _start_slow_proposal(self, out, command, ballot, ts, pred, now):
        self.phases[command.id] = Phase(PHASE_SLOW, ballot, command, ts, pred)
        out.broadcast(self.n, SlowPropose(command, ballot, ts, frozenset(pred)))

    def _start_retry(self, out, command, ballot, ts, pred, now):
        self.phases[command.id] = Phase(PHASE_RETRY, ballot, command, ts, pred)
        out.broadcast(self.n, Retry(command, ballot, ts, frozenset(pred)))

    def _start_stable(self, out, command, ballot, ts, pred, now):
        self.phases.pop(command.id, None)
        out.broadcast(self.n, Stable(command, ballot, ts, frozenset(pred)))

    def _supersede(self, out, cmd_id, ballot):
        """A higher ballot invalidates our in-flight leadership and parked replies."""
        ph = self.phases.get(cmd_id)
        if ph is not None and ph.ballot < ballot:
            del self.phases[cmd_id]
        pk = self.parked.get(cmd_id)
        if pk is not None and pk.ballot < ballot:
            del self.parked[cmd_id]
            out.event(("resume", cmd_id, "cancel"))

    # ------------------------------------------------------ acceptor handlers

    def _gate(self, out, cmd_id, ballot, kind) -> bool:
        """Ballot gate plus stale-reordering guards. True = drop the message."""
        if ballot < self.ballots.get(cmd_id):
            out.event(("gated", kind, cmd_id, ballot))
            return True
        entry = self.history.get(cmd_id)
        if entry is not None and entry.ballot == ballot:
            # Reordered delivery inside one ballot: never step a command's
            # status backwards.
            stale = (
                (kind == "FastPropose")
                or (kind == "SlowPropose" and entry.status in (Status.ACCEPTED, Status.STABLE))
                or (kind == "Retry" and entry.status is Status.STABLE)
            )
            if stale:
                out.event(("gated", kind, cmd_id, ballot))
                return True
        if entry is not None and entry.ballot > ballot and kind != "Stable":
            out.event(("gated", kind, cmd_id, ballot))
            return True
        return False

    def _accept_leader_msg(self, out, msg, sender):
        cmd_id = msg.command.id
        self.ballots.raise_to(cmd_id, msg.ballot)
        self._supersede(out, cmd_id, msg.ballot)
        self.leader_of[cmd_id] = sender

    def _on_fast_propose(self, out, msg, sender, now):
        self.clock.observe(msg.ts)
        if self._gate(out, msg.command.id, msg.ballot, msg.KIND):
            return
        self._accept_leader_msg(out, msg, sender)
        c = msg.command
        pred = self.compute_predecessors(c, msg.ts, msg.whitelist)
        entry = self._install(out, c, msg.ts, pred, Status.FAST_PENDING, msg.ballot,
                              forced=msg.whitelist is not None, now=now)
        self._eval_proposal(out, PHASE_FAST, c, msg.ballot, msg.ts, msg.whitelist,
                            sender, entry.version, now)

    def _on_slow_propose(self, out, msg, sender, now):
        self.clock.observe(msg.ts)
        if self._gate(out, msg.command.id, msg.ballot, msg.KIND):
            return
        self._accept_leader_msg(out, msg, sender)
        c = msg.command
        # The slow round pins down exactly the broadcast predecessor set: the
        # entry (and hence any recovery snapshot of it) must match what the
        # round can finalize, so local knowledge is NOT merged in here.
        entry = self._install(out, c, msg.ts, set(msg.pred), Status.SLOW_PENDING,
                              msg.ballot, forced=False, now=now)
        self._eval_proposal(out, PHASE_SLOW, c, msg.ballot, msg.ts, None,
                            sender, entry.version, now)

    def _eval_proposal(self, out, kind, command, ballot, ts, whitelist, sender, version, now):
        verdict = self.wait_verdict(command, ts)
        if verdict == DEFER:
            old = self.parked.get(command.id)
            if old is not None:
                out.event(("resume", command.id, "cancel"))
            self.parked[command.id] = ParkedWait(kind, ballot, ts, whitelist,
                                                 sender, version, now)
            out.event(("park", command.id))
            return
        self._finish_proposal_reply(out, kind, command, ballot, ts, whitelist,
                                    sender, verdict, now)

    def _finish_proposal_reply(self, out, kind, command, ballot, ts, whitelist,
                               sender, verdict, now):
        entry = self.history[command.id]
        if verdict == OK:
            reply_ts, reply_pred, ok = ts, frozenset(entry.pred), True
        else:
            # Reject: suggest a fresh timestamp (above everything seen here)
            # and recompute what must precede the command at that timestamp.
            reply_ts = self.clock.emit()
            reply_pred = frozenset(self.compute_predecessors(command, reply_ts, whitelist))
            self._update_entry(out, entry, reply_ts, set(reply_pred),
                               Status.REJECTED, ballot, forced=False)
            ok = False
        if kind == PHASE_FAST:
            out.send(sender, FastProposeR(command.id, ballot, ok, reply_ts, reply_pred))
        else:
            out.send(sender, SlowProposeR(command.id, ballot, ok, reply_ts, reply_pred))

    def _on_retry(self, out, msg, sender, now):
        self.clock.observe(msg.ts)
        if self._gate(out, msg.command.id, msg.ballot, msg.KIND):
            return
        self._accept_leader_msg(out, msg, sender)
        c = msg.command
        # A retry is never rejected: install as accepted and report any
        # conflicting commands the new, higher timestamp now trails.
        self._install(out, c, msg.ts, set(msg.pred), Status.ACCEPTED, msg.ballot,
                      forced=False, now=now)
        extra = frozenset(self.compute_predecessors(c, msg.ts, None))
        out.send(sender, RetryR(c.id, msg.ballot, msg.ts, msg.pred, extra))

    def _on_stable(self, out, msg, sender, now):
        self.clock.observe(msg.ts)
        if self._gate(out, msg.command.id, msg.ballot, msg.KIND):
            return
        self._accept_leader_msg(out, msg, sender)
        c = msg.command
        self._install(out, c, msg.ts, set(msg.pred), Status.STABLE, msg.ballot,
                      forced=False, now=now, decided_pred=frozenset(msg.pred))
        self._break_loop(c.id)
        self._refresh_pending(c.id)
        self._deliver_ready(out, now)

    # ------------------------------------------------------- leader handlers

    def _on_proposal_reply(self, out, msg, sender, now, kind):
        self.clock.observe(msg.ts)
        ph = self.phases.get(msg.cmd_id)
        if ph is None or ph.kind != kind or ph.ballot != msg.ballot:
            out.event(("stale_reply", msg.KIND, msg.cmd_id))
            return
        if sender in ph.replies:
            return
        ph.replies[sender] = msg
        if kind == PHASE_FAST:
            self._check_fast_transition(out, msg.cmd_id, now)
        else:
            self._check_slow_transition(out, msg.cmd_id, now)

    def _union_preds(self, ph) -> set:
        pred = set(ph.pred)
        for r in ph.replies.values():
            pred |= r.pred
        return pred

    def _to_retry(self, out, ph, now):
        suggestions = [r.ts for r in ph.replies.values() if not r.ok]
        ts = max(suggestions)
        self._start_retry(out, ph.command, ph.ballot, ts, self._union_preds(ph), now)

    def _check_fast_transition(self, out, cmd_id, now):
        ph = self.phases.get(cmd_id)
        if ph is None or ph.kind != PHASE_FAST:
            return
        total = len(ph.replies)
        any_nack = any(not r.ok for r in ph.replies.values())
        if total >= self.effective_fq():
            if any_nack:
                self._to_retry(out, ph, now)
            else:
                self._start_stable(out, ph.command, ph.ballot, ph.ts,
                                   self._union_preds(ph), now)
        elif ph.timeout_fired and total >= self.cq:
            if any_nack:
                self._to_retry(out, ph, now)
            else:
                self._start_slow_proposal(out, ph.command, ph.ballot, ph.ts,
                                          self._union_preds(ph), now)

    def _check_slow_transition(self, out, cmd_id, now):
        ph = self.phases.get(cmd_id)
        if ph is None or ph.kind != PHASE_SLOW:
            return
        if len(ph.replies) < self.cq:
            return
        if any(not r.ok for r in ph.replies.values()):
            self._to_retry(out, ph, now)
        else:
            # Finalize exactly the broadcast set; a clean slow round never
            # widens it, which is what makes the decision reconstructible.
            self._start_stable(out, ph.command, ph.ballot, ph.ts, ph.pred, now)

    def _on_retry_reply(self, out, msg, sender, now):
        self.clock.observe(msg.ts)
        ph = self.phases.get(msg.cmd_id)
        if ph is None or ph.kind != PHASE_RETRY or ph.ballot != msg.ballot:
            out.event(("stale_reply", msg.KIND, msg.cmd_id))
            return
        if sender in ph.replies:
            return
        ph.replies[sender] = msg
        if len(ph.replies) < self.cq:
            return
        pred = set(ph.pred)
        for r in ph.replies.values():
            pred |= r.extra_pred
        self._start_stable(out, ph.command, ph.ballot, ph.ts, pred, now)

    # ------------------------------------------------------- history plumbing

    def _install(self, out, command, ts, pred, status, ballot, forced, now,
                 decided_pred=None) -> HistoryEntry:
        entry = self.history.get(command.id)
        bucket = self.config.conflict.bucket(command.op)
        if entry is None:
            entry = HistoryEntry(command, ts, set(pred), status, ballot, forced,
                                 decided_pred, version=0)
            self.history[command.id] = entry
            self.key_index.setdefault(bucket, set()).add(command.id)
        else:
            entry.ts = ts
            entry.pred = set(pred)
            entry.status = status
            entry.ballot = ballot
            entry.forced = forced
            entry.decided_pred = decided_pred if decided_pred is not None else entry.decided_pred
            entry.version += 1
        if decided_pred is not None:
            entry.decided_pred = decided_pred
        self._touched.add(bucket)
        if status is not Status.STABLE and self.leader_of.get(command.id, command.id.node) != self.id:
            self._request_fd(out, command.id, now)
        return entry

    def _update_entry(self, out, entry, ts, pred, status, ballot, forced):
        entry.ts = ts
        entry.pred = pred
        entry.status = status
        entry.ballot = ballot
        entry.forced = forced
        entry.version += 1
        self._touched.add(self.config.conflict.bucket(entry.command.op))

    def _break_loop(self, cmd_id):
        """Prune stable predecessor edges so delivery order follows timestamps.

        For a freshly stable command c: any stable predecessor with a smaller
        timestamp drops c from its own set; any with a greater timestamp is
        dropped from c's set. Afterwards the stable conflict graph is acyclic.
        """
        entry = self.history[cmd_id]
        for bid in sorted(entry.pred):
            be = self.history.get(bid)
            if be is None or be.status is not Status.STABLE:
                continue
            if be.ts < entry.ts:
                if cmd_id in be.pred:
                    be.pred.discard(cmd_id)
                    self._prune_pending(bid, cmd_id)
                    self._touched.add(self.config.conflict.bucket(be.command.op))
            elif be.ts > entry.ts:
                entry.pred.discard(bid)
                self._prune_pending(cmd_id, bid)
                self._touched.add(self.config.conflict.bucket(entry.command.op))

    def _prune_pending(self, waiter, blocker):
        pend = self.pending_preds.get(waiter)
        if pend is not None:
            pend.discard(blocker)
        watchers = self.blocked_on.get(blocker)
        if watchers is not None:
            watchers.discard(waiter)

    def _refresh_pending(self, cmd_id):
        entry = self.history[cmd_id]
        missing = {p for p in entry.pred if p not in self.decided}
        self.pending_preds[cmd_id] = missing
        for p in missing:
            self.blocked_on.setdefault(p, set()).add(cmd_id)

    def _deliver_ready(self, out, now):
        ready = sorted(
            (self.history[cid].ts, cid)
            for cid, missing in self.pending_preds.items()
            if not missing and cid not in self.decided
        )
        while ready:
            _, cid = ready.pop(0)
            if cid in self.decided:
                continue
            self._decide(out, cid, now)
            unblocked = []
            for w in sorted(self.blocked_on.pop(cid, ())):
                pend = self.pending_preds.get(w)
                if pend is None:
                    continue
                pend.discard(cid)
                if not pend and w not in self.decided:
                    unblocked.append((self.history[w].ts, w))
            if unblocked:
                ready.extend(unblocked)
                ready.sort()

    def _decide(self, out, cmd_id, now):
        entry = self.history[cmd_id]
        self.decided.add(cmd_id)
        self.pending_preds.pop(cmd_id, None)
        pred = entry.decided_pred if entry.decided_pred is not None else frozenset(entry.pred)
        result = self.store.apply(entry.command.op)
        dec = Decision(cmd_id, entry.ts, pred, entry.ballot, len(self.log), result)
        self.log.append(dec)
        out.decisions.append(dec)

    # ------------------------------------------------------- deferred waits

    def _drain(self, out, now):
        """Re-run parked waits whose conflict neighborhood changed, to fixpoint."""
        while self._touched:
            touched = self._touched
            self._touched = set()
            for cid in sorted(self.parked):
                pk = self.parked.get(cid)
                if pk is None:
                    continue
                entry = self.history.get(cid)
                if entry is None or entry.version != pk.version or \
                        self.ballots.get(cid) > pk.ballot:
                    del self.parked[cid]
                    out.event(("resume", cid, "cancel"))
                    continue
                if self.config.conflict.bucket(entry.command.op) not in touched:
                    continue
                verdict = self.wait_verdict(entry.command, pk.ts)
                if verdict == DEFER:
                    continue
                del self.parked[cid]
                out.event(("resume", cid, verdict))
                self._finish_proposal_reply(out, pk.kind, entry.command, pk.ballot,
                                            pk.ts, pk.whitelist, pk.sender, verdict, now)

    # ----------------------------------------------------------- inspection

    def wait_edges(self) -> list:
        """(waiter_id, waiter_ts, blocker_id, blocker_ts) for every parked wait."""
        edges = []
        for cid, pk in self.parked.items():
            entry = self.history.get(cid)
            if entry is None:
                continue
            for be in self.wait_blockers(entry.command, pk.ts):
                edges.append((cid, pk.ts, be.id, be.ts))
        return edges

    def clone(self) -> "Node":
        other = Node.__new__(Node)
        other.id = self.id
        other.config = self.config
        other.n, other.cq, other.fq = self.n, self.cq, self.fq
        other.clock = self.clock.copy()
        other.history = {k: v.clone() for k, v in self.history.items()}
        other.ballots = self.ballots.copy()
        other.decided = set(self.decided)
        other.log = list(self.log)
        other.store = self.store.copy()
        other.phases = {k: v.clone() for k, v in self.phases.items()}
        other.parked = {k: v.clone() for k, v in self.parked.items()}
        other.key_index = {k: set(v) for k, v in self.key_index.items()}
        other.pending_preds = {k: set(v) for k, v in self.pending_preds.items()}
        other.blocked_on = {k: set(v) for k, v in self.blocked_on.items()}
        other.leader_of = dict(self.leader_of)
        other.last_heard = dict(self.last_heard)
        other.fd_outstanding = set(self.fd_outstanding)
        other._touched = set(self._touched)
        other._next_seq = self._next_seq
        return other

    def snapshot(self):
        """Canonical immutable view of all behavior-relevant state."""
        hist = tuple(sorted(
            (cid, e.ts, tuple(sorted(e.pred)), e.status.value, e.ballot, e.forced,
             tuple(sorted(e.decided_pred)) if e.decided_pred is not None else None)
            for cid, e in self.history.items()
        ))
        phases = tuple(sorted(
            (cid, ph.kind, ph.ballot, ph.ts, tuple(sorted(ph.pred)),
             tuple(sorted(ph.whitelist)) if ph.whitelist is not None else None,
             tuple(sorted((s, _reply_key(r)) for s, r in ph.replies.items())),
             ph.timeout_fired)
            for cid, ph in self.phases.items()
        ))
        parked = tuple(sorted(
            (cid, pk.kind, pk.ballot, pk.ts,
             tuple(sorted(pk.whitelist)) if pk.whitelist is not None else None,
             pk.sender, pk.version)
            for cid, pk in self.parked.items()
        ))
        logt = tuple((d.cmd_id, d.ts, tuple(sorted(d.pred)), d.ballot) for d in self.log)
        return (
            self.id, self.clock.current, hist, tuple(sorted(self.ballots.items())),
            tuple(sorted(self.decided)), logt, phases, parked,
            tuple(sorted(self.leader_of.items())),
        )


def _reply_key(r):
    if r.KIND == "RecoveryR":
        info = r.info
        payload = None if info is None else (
            info.ts, tuple(sorted(info.pred)), info.status.value, info.ballot, info.forced)
        return (r.KIND, payload)
    extra = getattr(r, "extra_pred", None)
    ok = getattr(r, "ok", True)
    return (r.KIND, ok, r.ts, tuple(sorted(r.pred)),
            tuple(sorted(extra)) if extra is not None else None)
