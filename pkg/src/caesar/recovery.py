"""Leader takeover: ballot bump, history collection, and case analysis.

A recoverer raises the command's ballot, gathers history snapshots from a
classic quorum, keeps only the highest-ballot tuples, and resumes the command
from the most advanced state seen: a stable tuple is re-broadcast; an accepted
one re-enters the retry round; a rejected one (or an empty set) restarts from
scratch with a fresh timestamp; a slow-pending one re-enters the slow round;
and an all-fast-pending set re-proposes at the recovered timestamp under a
whitelist that pins down which predecessors a possibly-finalized fast decision
could have carried.
"""

from __future__ import annotations

from typing import NamedTuple, Optional

from .core import CommandId, Status
from .messages import Recovery, RecoveryInfo, RecoveryR

PHASE_RECOVERY = "recovery"


class RecoveryTuple(NamedTuple):
    """One responder's view of the command, tagged with its source node."""

    source: int
    ts: object
    pred: frozenset
    status: Status
    forced: bool


def start_recovery(node, out, cmd_id: CommandId, now: int) -> None:
    """Attempt to take over leadership of cmd_id under a fresh ballot."""
    entry = node.history.get(cmd_id)
    if entry is None or entry.status is Status.STABLE or cmd_id in node.decided:
        return
    from .protocol import Phase  # local import; protocol imports this module

    ballot = node.ballots.get(cmd_id) + 1
    node.leader_of[cmd_id] = node.id
    node.phases[cmd_id] = Phase(PHASE_RECOVERY, ballot, entry.command)
    out.event(("suspect", cmd_id, ballot))
    # Broadcast to everyone, ourselves included: our own copy passes the
    # strictly-greater ballot gate and yields our snapshot like any other.
    out.broadcast(node.n, Recovery(cmd_id, ballot))


def on_recovery(node, out, msg, sender: int, now: int) -> None:
    if msg.ballot <= node.ballots.get(msg.cmd_id):
        out.event(("gated", msg.KIND, msg.cmd_id, msg.ballot))
        return
    node.ballots.raise_to(msg.cmd_id, msg.ballot)
    node._supersede(out, msg.cmd_id, msg.ballot)
    node.leader_of[msg.cmd_id] = sender
    entry = node.history.get(msg.cmd_id)
    if entry is None:
        info = None
    else:
        pred = entry.decided_pred if entry.status is Status.STABLE and \
            entry.decided_pred is not None else frozenset(entry.pred)
        info = RecoveryInfo(entry.ts, pred, entry.status, entry.ballot, entry.forced)
    out.send(sender, RecoveryR(msg.cmd_id, msg.ballot, info))


def on_recovery_reply(node, out, msg, sender: int, now: int) -> None:
    ph = node.phases.get(msg.cmd_id)
    if ph is None or ph.kind != PHASE_RECOVERY or ph.ballot != msg.ballot:
        out.event(("stale_reply", msg.KIND, msg.cmd_id))
        return
    if sender in ph.replies:
        return
    if msg.info is not None:
        node.clock.observe(msg.info.ts)
    ph.replies[sender] = msg
    if len(ph.replies) < node.cq:
        return
    resolve_recovery(node, out, msg.cmd_id, ph, now)


def recovery_set(ph) -> list:
    """Tuples from the replies, filtered to the maximum ballot among them."""
    infos = [(s, r.info) for s, r in sorted(ph.replies.items()) if r.info is not None]
    if not infos:
        return []
    max_ballot = max(i.ballot for _, i in infos)
    return [RecoveryTuple(s, i.ts, i.pred, i.status, i.forced)
            for s, i in infos if i.ballot == max_ballot]


def resolve_recovery(node, out, cmd_id: CommandId, ph, now: int) -> None:
    command = ph.command
    ballot = ph.ballot
    rs = recovery_set(ph)
    node.phases.pop(cmd_id, None)

    by_status = lambda st: [t for t in rs if t.status is st]

    stable = by_status(Status.STABLE)
    if stable:
        t = stable[0]
        node._start_stable(out, command, ballot, t.ts, set(t.pred), now)
        return
    accepted = by_status(Status.ACCEPTED)
    if accepted:
        t = accepted[0]
        node._start_retry(out, command, ballot, t.ts, set(t.pred), now)
        return
    if by_status(Status.REJECTED):
        ts = node.clock.emit()
        node._start_fast_proposal(out, command, ballot, ts, None, now)
        return
    slow = by_status(Status.SLOW_PENDING)
    if slow:
        t = slow[0]
        node._start_slow_proposal(out, command, ballot, t.ts, set(t.pred), now)
        return
    if rs:
        # Everything left is fast-pending; the command may already have been
        # finalized fast at this timestamp, so re-propose at it.
        ts_values = {t.ts for t in rs}
        if len(ts_values) != 1:
            raise RuntimeError(
                f"recovery of {cmd_id}: fast-pending tuples disagree on "
                f"timestamp: {sorted(ts_values)}")
        ts = ts_values.pop()
        pred = set()
        for t in rs:
            pred |= t.pred
        wl = compute_whitelist(rs, node.cq)
        if node.config.mutation == "skip_whitelist":
            wl = None
        node._start_fast_proposal(out, command, ballot, ts, wl, now)
        return
    # Nobody knows the command beyond us: start over with a fresh timestamp.
    ts = node.clock.emit()
    node._start_fast_proposal(out, command, ballot, ts, None, now)


def compute_whitelist(rs, cq: int) -> Optional[frozenset]:
    """Predecessors a recovered fast re-proposal must force.

    If any tuple was itself installed under a whitelist (forced), trust the
    union. Otherwise the set is meaningful only when it is at least as large
    as the guaranteed classic/fast quorum intersection; a command stays
    whitelisted unless a majority-sized subset of tuples all missed it.
    """
    union = set()
    for t in rs:
        union |= t.pred
    if any(t.forced for t in rs):
        return frozenset(union)
    need = cq // 2 + 1
    if len(rs) < need:
        return None
    keep = set()
    for x in sorted(union):
        lacking = sum(1 for t in rs if x not in t.pred)
        if lacking < need:
            keep.add(x)
    return frozenset(keep)
