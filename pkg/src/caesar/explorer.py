"""Bounded exhaustive interleaving explorer over the node state machines.

Instead of simulated time, the explorer treats every pending message delivery
(plus proposal injection, quorum-timeout firing, one optional crash, and
post-crash suspicion) as a branch point and walks the choice tree depth-first,
memoizing canonical global states. Self-addressed messages are applied
synchronously, which is sound here because a node's step commutes with other
nodes' steps. Consistency checks run on every new decision; liveness and
leftover deferred waits are checked at quiescent leaves.

This is a bug-finder with explicit bounds (ballot cap, state budget), not a
full proof.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .core import Command, CommandId, Status
from .messages import command_of
from .protocol import MUTATION_NONE, Node, ProtocolConfig
from .rsm import KV_CONFLICTS, KvOp, PUT
from .verify import DecisionRecord, check_all


@dataclass(frozen=True)
class ExplorerConfig:
    n: int = 3
    n_commands: int = 2
    proposers: tuple = ()            # defaults to distinct nodes round-robin
    conflicting: bool = True
    crash_node: Optional[int] = None
    crash_after_decision: bool = False   # only crash once the target decided something
    mutation: str = MUTATION_NONE
    max_states: int = 400_000
    max_ballot: int = 3
    max_depth: int = 400
    # Abstract steps applied before the exhaustive walk; used to steer the
    # search into a known-interesting region (mutation hunts at larger n).
    # Forms: ("propose", node), ("deliver", dst, msg_kind[, src]),
    #        ("timeout", node), ("crash",), ("suspect", node).
    prefix: tuple = ()


@dataclass
class ExploreResult:
    ok: bool
    complete: bool
    states: int
    violations: list
    counterexample: Optional[list]
    liveness_failures: list = field(default_factory=list)

    def summary(self) -> str:
        status = "pass" if self.ok else "FAIL"
        cov = "complete" if self.complete else "partial"
        return (f"{status} states={self.states} coverage={cov} "
                f"violations={len(self.violations)} "
                f"liveness_failures={len(self.liveness_failures)}")


class _World:
    __slots__ = ("nodes", "network", "crashed", "pending", "proposed")

    def __init__(self, nodes, network, crashed, pending, proposed):
        self.nodes = nodes          # list[Node]
        self.network = network      # list[(dst, src, msg)]
        self.crashed = crashed      # set[int]
        self.pending = pending      # list[(node, Command)] not yet proposed
        self.proposed = proposed    # set[CommandId]

    def clone(self) -> "_World":
        return _World([n.clone() for n in self.nodes], list(self.network),
                      set(self.crashed), list(self.pending), set(self.proposed))

    def records(self):
        recs = []
        for node in self.nodes:
            for d in node.log:
                recs.append(DecisionRecord(node.id, d.cmd_id, d.ts, d.pred,
                                           d.ballot, d.index, 0))
        return recs

    def key(self):
        return (
            tuple(n.snapshot() for n in self.nodes),
            tuple(sorted(_net_key(item) for item in self.network)),
            tuple(sorted(self.crashed)),
            tuple(sorted((n, c.id) for n, c in self.pending)),
        )


def _msg_key(msg):
    parts = [msg.KIND, command_of(msg), msg.ballot]
    for attr in ("ts", "ok"):
        if hasattr(msg, attr):
            parts.append(getattr(msg, attr))
    for attr in ("pred", "extra_pred", "whitelist"):
        val = getattr(msg, attr, None)
        parts.append(tuple(sorted(val)) if val is not None else None)
    info = getattr(msg, "info", "absent")
    if info != "absent":
        parts.append((info.ts, tuple(sorted(info.pred)), info.status.value,
                      info.ballot, info.forced) if info is not None else None)
    return tuple(parts)


def _net_key(item):
    dst, src, msg = item
    return (dst, src, _msg_key(msg))


class Explorer:
    def __init__(self, config: ExplorerConfig):
        self.cfg = config
        self.states = 0
        self.violations = []
        self.liveness_failures = []
        self.counterexample = None
        self.complete = True
        self._visited = set()
        proposers = config.proposers or tuple(
            (2 * i) % config.n for i in range(config.n_commands))
        self.commands = []
        for i, p in enumerate(proposers):
            key = "k" if config.conflicting else f"k{i}"
            seq_base = sum(1 for q in proposers[:i] if q == p)
            self.commands.append((p, Command(CommandId(p, seq_base), KvOp(key, PUT, f"v{i}"))))
        self.conflicts = lambda a, b: (
            KV_CONFLICTS.predicate(self._ops[a], self._ops[b]))
        self._ops = {cmd.id: cmd.op for _, cmd in self.commands}

    # ------------------------------------------------------------- choices

    def _choices(self, w: _World) -> list:
        out = []
        for i, (node, cmd) in enumerate(w.pending):
            if node not in w.crashed:
                out.append(("propose", i))
        for i, item in enumerate(w.network):
            if item[0] not in w.crashed:
                out.append(("deliver", i))
        for node in w.nodes:
            if node.id in w.crashed:
                continue
            for cid, ph in sorted(node.phases.items()):
                if ph.kind != "fast" or ph.timeout_fired:
                    continue
                replies = ph.replies
                if node.cq <= len(replies) < node.effective_fq():
                    out.append(("timeout", node.id, cid, ph.ballot))
        if self.cfg.crash_node is not None and self.cfg.crash_node not in w.crashed:
            if not self.cfg.crash_after_decision or w.nodes[self.cfg.crash_node].log:
                out.append(("crash", self.cfg.crash_node))
        if w.crashed:
            # One designated recoverer (lowest-id survivor) stands in for the
            # leader-election oracle the protocol assumes; symmetric recovery
            # duels are a liveness question the timed simulator covers.
            designated = min(n.id for n in w.nodes if n.id not in w.crashed)
            for node in w.nodes:
                if node.id != designated:
                    continue
                for cid in sorted(node.history):
                    entry = node.history[cid]
                    if entry.status is Status.STABLE or cid in node.decided:
                        continue
                    if node.leader_of.get(cid, cid.node) not in w.crashed:
                        continue
                    if node.ballots.get(cid) >= self.cfg.max_ballot:
                        continue
                    if cid in node.phases and node.phases[cid].kind == "recovery":
                        continue
                    out.append(("suspect", node.id, cid))
        return out

    def _apply(self, w: _World, choice) -> _World:
        nw = w.clone()
        kind = choice[0]
        if kind == "propose":
            node_id, cmd = nw.pending.pop(choice[1])
            nw.proposed.add(cmd.id)
            out = nw.nodes[node_id].propose(cmd, 0)
            self._route(nw, node_id, out)
        elif kind == "deliver":
            dst, src, msg = nw.network.pop(choice[1])
            out = nw.nodes[dst].handle(msg, src, 0)
            self._route(nw, dst, out)
        elif kind == "timeout":
            _, node_id, cid, ballot = choice
            node = nw.nodes[node_id]
            from .protocol import Outputs
            out = Outputs()
            node.fire_fast_timeout(out, cid, ballot, 0)
            node._drain(out, 0)
            self._route(nw, node_id, out)
        elif kind == "crash":
            target = choice[1]
            nw.crashed.add(target)
            nw.network = [item for item in nw.network if item[0] != target]
            nw.pending = [(n, c) for n, c in nw.pending if n != target]
        elif kind == "suspect":
            _, node_id, cid = choice
            out = nw.nodes[node_id].suspect(cid, 0)
            self._route(nw, node_id, out)
        return nw

    def _route(self, w: _World, src: int, out) -> None:
        # Self-addressed messages run synchronously (possibly cascading);
        # remote ones join the in-flight multiset.
        queue = [(dst, msg) for dst, msg in out.messages]
        while queue:
            dst, msg = queue.pop(0)
            if dst == src:
                if src in w.crashed:
                    continue
                nxt = w.nodes[src].handle(msg, src, 0)
                queue.extend(nxt.messages)
            elif dst not in w.crashed:
                w.network.append((dst, src, msg))

    # ----------------------------------------------------------------- run

    def _resolve_step(self, w: _World, step):
        kind = step[0]
        if kind == "propose":
            for i, (node, _) in enumerate(w.pending):
                if node == step[1]:
                    return ("propose", i)
        elif kind == "deliver":
            dst, msg_kind = step[1], step[2]
            src = step[3] if len(step) > 3 else None
            for i, (d, s, m) in enumerate(w.network):
                if d == dst and m.KIND == msg_kind and (src is None or s == src):
                    return ("deliver", i)
        elif kind == "timeout":
            for c in self._choices(w):
                if c[0] == "timeout" and c[1] == step[1]:
                    return c
        elif kind == "crash":
            return ("crash", self.cfg.crash_node)
        elif kind == "suspect":
            for c in self._choices(w):
                if c[0] == "suspect" and c[1] == step[1]:
                    return c
        raise ValueError(f"prefix step {step} not applicable")

    def run(self) -> ExploreResult:
        nodes = [Node(i, ProtocolConfig(n=self.cfg.n, conflict=KV_CONFLICTS,
                                        mutation=self.cfg.mutation))
                 for i in range(self.cfg.n)]
        root = _World(nodes, [], set(), list(self.commands), set())
        path = []
        for step in self.cfg.prefix:
            choice = self._resolve_step(root, step)
            root = self._apply(root, choice)
            path.append(choice)
        self._dfs(root, path)
        ok = not self.violations and not self.liveness_failures
        return ExploreResult(ok=ok, complete=self.complete, states=self.states,
                             violations=self.violations,
                             counterexample=self.counterexample,
                             liveness_failures=self.liveness_failures)

    def _dfs(self, w: _World, path: list) -> bool:
        """Returns False once the search should stop (budget or first violation)."""
        key = w.key()
        if key in self._visited:
            return True
        self._visited.add(key)
        self.states += 1
        if self.states > self.cfg.max_states or len(path) > self.cfg.max_depth:
            self.complete = False
            return True

        bad = check_all(w.records(), self.conflicts)
        if not bad.ok:
            self.violations.extend(bad.all_violations())
            self.counterexample = list(path)
            return False

        choices = self._choices(w)
        if not choices:
            self._check_quiescence(w, path)
            return not self.liveness_failures or self.counterexample is None
        for choice in choices:
            nxt = self._apply(w, choice)
            if not self._dfs(nxt, path + [choice]):
                return False
        return True

    def _check_quiescence(self, w: _World, path: list) -> None:
        for node in w.nodes:
            if node.id in w.crashed:
                continue
            if node.parked:
                self.liveness_failures.append(
                    ("parked-at-quiescence", node.id, sorted(node.parked)))
                self.counterexample = self.counterexample or list(path)
            for cid in sorted(w.proposed):
                if cid not in node.decided:
                    self.liveness_failures.append(("undecided", node.id, cid))
                    self.counterexample = self.counterexample or list(path)


def explore(config: ExplorerConfig) -> ExploreResult:
    return Explorer(config).run()
