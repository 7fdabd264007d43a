"""Consistency oracles over decision records.

All checks are pure functions of the run's decision records (the predecessor
set checked is the one carried in the finalizing broadcast, before the
delivery-side loop pruning). Violations come back as structured tuples; an
empty list means the check passed.
"""

from __future__ import annotations

from typing import Callable, NamedTuple

from .core import CommandId, Timestamp


class DecisionRecord(NamedTuple):
    node: int
    cmd: CommandId
    ts: Timestamp
    pred: frozenset
    ballot: int
    index: int
    tick: int


def _variants(records):
    """cmd -> set of distinct (ts, pred, ballot) decision variants."""
    out = {}
    for r in records:
        out.setdefault(r.cmd, set()).add((r.ts, r.pred, r.ballot))
    return out


def check_predecessor_completeness(records, conflicts: Callable) -> list:
    """Every decided conflicting command with a smaller timestamp must appear
    in the other command's decided predecessor set."""
    variants = _variants(records)
    cmds = sorted(variants)
    violations = []
    for i, a in enumerate(cmds):
        for b in cmds[i + 1:]:
            if not conflicts(a, b):
                continue
            for ts_a, pred_a, _ in variants[a]:
                for ts_b, pred_b, _ in variants[b]:
                    if ts_b < ts_a and b not in pred_a:
                        violations.append(("missing-predecessor", a, b, str(ts_a), str(ts_b)))
                    if ts_a < ts_b and a not in pred_b:
                        violations.append(("missing-predecessor", b, a, str(ts_b), str(ts_a)))
    return violations


def check_decision_stability(records) -> list:
    """Once a command is decided with all of its predecessors decided, every
    decision at the same or a higher ballot must carry the same timestamp and
    the same effective predecessor set.

    Predecessor sets are compared under delivery semantics: a member whose own
    final decision landed at a higher timestamp is pruned before delivery on
    every replica, so re-decisions are allowed to differ in exactly those
    members and nothing else.
    """
    variants = _variants(records)
    decided = set(variants)
    final_ts = {cmd: min(ts for ts, _, _ in vs) for cmd, vs in variants.items()}

    def effective(ts, pred):
        return frozenset(x for x in pred
                         if x not in final_ts or final_ts[x] < ts)

    violations = []
    key = lambda v: (v[0], v[1], tuple(sorted(v[2])))
    for cmd, vs in sorted(variants.items()):
        anchored = [(b, ts, pred) for ts, pred, b in vs if pred <= decided]
        if not anchored:
            continue
        base_ballot, base_ts, base_pred = min(anchored, key=key)
        base_eff = effective(base_ts, base_pred)
        for ts, pred, b in sorted(vs, key=lambda v: (v[2], v[0], tuple(sorted(v[1])))):
            if b >= base_ballot and (ts != base_ts or effective(ts, pred) != base_eff):
                violations.append(("unstable-decision", cmd, base_ballot, str(base_ts),
                                   b, str(ts)))
    return violations


def check_prefix_equivalence(records, conflicts: Callable) -> list:
    """Per-node logs must order every conflicting pair identically, and that
    order must follow the timestamps."""
    logs = {}
    for r in records:
        logs.setdefault(r.node, []).append(r)
    for node in logs:
        logs[node].sort(key=lambda r: r.index)
    violations = []
    orders = {}  # (a, b) with a < b -> {-1, 1} seen orders
    for node, recs in sorted(logs.items()):
        position = {r.cmd: i for i, r in enumerate(recs)}
        ts_of = {r.cmd: r.ts for r in recs}
        cmds = sorted(position)
        for i, a in enumerate(cmds):
            for b in cmds[i + 1:]:
                if not conflicts(a, b):
                    continue
                sign = 1 if position[a] < position[b] else -1
                ts_sign = 1 if ts_of[a] < ts_of[b] else -1
                if sign != ts_sign:
                    violations.append(("order-vs-timestamp", node, a, b))
                prev = orders.setdefault((a, b), sign)
                if prev != sign:
                    violations.append(("divergent-order", node, a, b))
    return violations


class Verdict(NamedTuple):
    ok: bool
    predecessor_completeness: list
    decision_stability: list
    prefix_equivalence: list

    def all_violations(self) -> list:
        return (self.predecessor_completeness + self.decision_stability
                + self.prefix_equivalence)

    def summary(self) -> str:
        parts = [
            f"predecessor_completeness={'ok' if not self.predecessor_completeness else len(self.predecessor_completeness)}",
            f"decision_stability={'ok' if not self.decision_stability else len(self.decision_stability)}",
            f"prefix_equivalence={'ok' if not self.prefix_equivalence else len(self.prefix_equivalence)}",
        ]
        return " ".join(parts)


def check_all(records, conflicts: Callable) -> Verdict:
    v1 = check_predecessor_completeness(records, conflicts)
    v2 = check_decision_stability(records)
    v3 = check_prefix_equivalence(records, conflicts)
    return Verdict(not (v1 or v2 or v3), v1, v2, v3)


def check_run(result) -> Verdict:
    """Convenience wrapper over a simulator RunResult."""
    return check_all(result.decisions, result.conflicts_fn())
