"""Deterministic discrete-event network simulator hosting the protocol nodes.

Events are processed in (tick, band, seq) order: crashes first, then message
deliveries and proposals, then timers; `seq` is an allocation counter, so the
whole schedule is a pure function of the scenario (seed included). Crashed
nodes send and receive nothing from their crash tick onward, but messages
they already put in flight still deliver.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace
from random import Random
from typing import Optional

from .core import CommandId, Status
from .messages import command_of
from .protocol import Decision, Node, ProtocolConfig
from .rsm import ALL_CONFLICT, KV_CONFLICTS
from .verify import DecisionRecord
from .workload import WorkloadDriver, WorkloadSpec

BAND_CRASH = 0
BAND_DELIVER = 1
BAND_TIMER = 2


@dataclass(frozen=True)
class Scenario:
    """Complete, reproducible description of one simulated run."""

    n: int
    latency: tuple                      # n x n one-way delays in ticks
    workload: WorkloadSpec
    seed: int = 0
    jitter: int = 0                     # random addend in [0, jitter] per hop
    crashes: tuple = ()                 # ((node, tick), ...)
    timeout_multiplier: float = 2.0     # fast-quorum timeout, in max one-way delays
    suspicion_multiplier: float = 4.0   # leader-silence threshold, same unit
    self_delay: int = 0
    tick_limit: int = 500_000
    mutation: str = "none"
    conflict: str = "kv"                # "kv" or "all"
    name: str = "scenario"

    def max_delay(self) -> int:
        return max(max(row) for row in self.latency)

    def with_overrides(self, **kw) -> "Scenario":
        return replace(self, **kw)


def uniform_latency(n: int, delay: int) -> tuple:
    return tuple(tuple(0 if i == j else delay for j in range(n)) for i in range(n))


@dataclass
class RunResult:
    scenario: Scenario
    records: list                       # trace event tuples, in order
    decisions: list                     # DecisionRecord
    commands: dict                      # CommandId -> op
    proposed: set                       # command ids whose proposal was processed
    alive: set
    stores: dict                        # node -> Store
    nodes: dict                         # node -> Node (final state)
    undecided: set                      # proposed but not decided on every alive node
    park_violations: list
    remaining_parked: dict              # node -> [cmd ids]
    ticks: int

    def conflicts_fn(self):
        model = KV_CONFLICTS if self.scenario.conflict == "kv" else ALL_CONFLICT
        ops = self.commands

        def fn(a: CommandId, b: CommandId) -> bool:
            return model.predicate(ops[a], ops[b])

        return fn

    def trace_lines(self) -> list:
        return [format_record(r) for r in self.records]

    def liveness_ok(self) -> bool:
        return not self.undecided


def format_record(r) -> str:
    kind = r[0]
    if kind == "run":
        return f"run scenario={r[1]} seed={r[2]} n={r[3]}"
    if kind == "propose":
        return f"propose t={r[1]} n={r[2]} cmd={r[3]} key={r[4]} ts={r[5]}"
    if kind == "send":
        return f"send t={r[1]} from={r[2]} to={r[3]} kind={r[4]} cmd={r[5]} b={r[6]} ts={r[7]}"
    if kind == "recv":
        return f"recv t={r[1]} n={r[2]} from={r[3]} kind={r[4]} cmd={r[5]} b={r[6]}"
    if kind == "drop":
        return f"drop t={r[1]} n={r[2]} from={r[3]} kind={r[4]} cmd={r[5]}"
    if kind == "decide":
        return (f"decide t={r[1]} n={r[2]} cmd={r[3]} ts={r[4]} b={r[5]} idx={r[6]} "
                f"pred={r[7]}")
    if kind == "crash":
        return f"crash t={r[1]} n={r[2]}"
    if kind == "suspect":
        return f"suspect t={r[1]} n={r[2]} cmd={r[3]} b={r[4]}"
    if kind == "park":
        return f"park t={r[1]} n={r[2]} cmd={r[3]}"
    if kind == "resume":
        return f"resume t={r[1]} n={r[2]} cmd={r[3]} verdict={r[4]}"
    if kind == "timeout":
        return f"timeout t={r[1]} n={r[2]} cmd={r[3]} b={r[4]}"
    if kind == "gated":
        return f"gated t={r[1]} n={r[2]} kind={r[3]} cmd={r[4]} b={r[5]}"
    if kind == "stall":
        return f"stall cmd={r[1]} nodes={r[2]}"
    if kind == "end":
        return f"end t={r[1]} proposed={r[2]} decided={r[3]}"
    return " ".join(str(x) for x in r)


def _fmt_pred(pred) -> str:
    return "|".join(str(p) for p in sorted(pred))


class Simulator:
    def __init__(self, scenario: Scenario):
        self.sc = scenario
        q_max = scenario.max_delay()
        conflict = KV_CONFLICTS if scenario.conflict == "kv" else ALL_CONFLICT
        fq_timeout = max(1, math.ceil(scenario.timeout_multiplier * (q_max + scenario.jitter)))
        susp = max(1, math.ceil(scenario.suspicion_multiplier * (q_max + scenario.jitter)))
        config = ProtocolConfig(
            n=scenario.n, conflict=conflict, fq_timeout=fq_timeout,
            suspicion_base=susp, suspicion_stagger=max(1, (q_max + scenario.jitter) // 2),
            mutation=scenario.mutation,
        )
        self.nodes = {i: Node(i, config) for i in range(scenario.n)}
        self.alive = set(range(scenario.n))
        self.rng_net = Random(f"net-{scenario.seed}")
        self.driver = WorkloadDriver(scenario.workload, scenario.n, scenario.seed)
        self.records = []
        self.decisions = []
        self.commands = {}
        self.proposed = set()
        self.park_violations = []
        self._heap = []
        self._seq = 0
        self._now = 0

    # ----------------------------------------------------------- scheduling

    def _push(self, tick, band, payload):
        heapq.heappush(self._heap, (tick, band, self._seq, payload))
        self._seq += 1

    def _delay(self, src, dst) -> int:
        if src == dst:
            return self.sc.self_delay
        base = self.sc.latency[src][dst]
        if self.sc.jitter:
            base += self.rng_net.randint(0, self.sc.jitter)
        return base

    def _route(self, src, out):
        t = self._now
        for dst, msg in out.messages:
            cmd = command_of(msg)
            ts = getattr(msg, "ts", "-")
            self.records.append(("send", t, src, dst, msg.KIND, cmd, msg.ballot, str(ts)))
            self._push(t + self._delay(src, dst), BAND_DELIVER, ("deliver", dst, src, msg))
        for delay, token in out.timers:
            self._push(t + delay, BAND_TIMER, ("timer", src, token))
        for d in out.decisions:
            self.records.append(("decide", t, src, d.cmd_id, str(d.ts), d.ballot,
                                 d.index, _fmt_pred(d.pred)))
            self.decisions.append(DecisionRecord(src, d.cmd_id, d.ts, d.pred,
                                                 d.ballot, d.index, t))
            for tick, node, cmd in self.driver.on_decide(src, d.cmd_id, t):
                self._push(tick, BAND_DELIVER, ("propose", node, cmd))
        for ev in out.events:
            self._record_event(src, ev)

    def _record_event(self, src, ev):
        t = self._now
        kind = ev[0]
        if kind == "park":
            self.records.append(("park", t, src, ev[1]))
            node = self.nodes[src]
            pk = node.parked.get(ev[1])
            entry = node.history.get(ev[1])
            if pk is not None and entry is not None:
                for be in node.wait_blockers(entry.command, pk.ts):
                    if not be.ts > pk.ts:
                        self.park_violations.append((src, ev[1], pk.ts, be.id, be.ts))
        elif kind == "resume":
            self.records.append(("resume", t, src, ev[1], ev[2]))
        elif kind == "suspect":
            self.records.append(("suspect", t, src, ev[1], ev[2]))
        elif kind == "timeout":
            self.records.append(("timeout", t, src, ev[1], ev[2]))
        elif kind == "gated":
            self.records.append(("gated", t, src, ev[1], ev[2], ev[3]))
        # dup_propose / stale_reply are uninteresting for traces

    # ------------------------------------------------------------------ run

    def run(self) -> RunResult:
        sc = self.sc
        self.records.append(("run", sc.name, sc.seed, sc.n))
        for node, tick in sc.crashes:
            self._push(tick, BAND_CRASH, ("crash", node))
        for tick, node, cmd in self.driver.initial_events():
            self._push(tick, BAND_DELIVER, ("propose", node, cmd))

        while self._heap:
            tick, band, _, payload = heapq.heappop(self._heap)
            if tick > sc.tick_limit:
                break
            self._now = tick
            kind = payload[0]
            if kind == "crash":
                node = payload[1]
                if node in self.alive:
                    self.alive.discard(node)
                    self.records.append(("crash", tick, node))
            elif kind == "propose":
                _, node, cmd = payload
                if node not in self.alive:
                    continue
                self.records.append(("propose", tick, node, cmd.id, cmd.op.key,
                                     str(self.nodes[node].clock.current)))
                self.commands[cmd.id] = cmd.op
                self.proposed.add(cmd.id)
                out = self.nodes[node].propose(cmd, tick)
                self._route(node, out)
            elif kind == "deliver":
                _, dst, src, msg = payload
                cmd = command_of(msg)
                if dst not in self.alive:
                    self.records.append(("drop", tick, dst, src, msg.KIND, cmd))
                    continue
                self.records.append(("recv", tick, dst, src, msg.KIND, cmd, msg.ballot))
                out = self.nodes[dst].handle(msg, src, tick)
                self._route(dst, out)
            elif kind == "timer":
                _, node, token = payload
                if node not in self.alive:
                    continue
                out = self.nodes[node].on_timer(token, tick)
                self._route(node, out)

        return self._finish()

    def _finish(self) -> RunResult:
        undecided = set()
        for cid in self.proposed:
            for i in self.alive:
                if cid not in self.nodes[i].decided:
                    undecided.add(cid)
                    break
        for cid in sorted(undecided):
            missing = [i for i in sorted(self.alive) if cid not in self.nodes[i].decided]
            self.records.append(("stall", cid, "|".join(str(i) for i in missing)))
        decided_total = len({d.cmd for d in self.decisions})
        self.records.append(("end", self._now, len(self.proposed), decided_total))
        remaining = {i: sorted(self.nodes[i].parked) for i in sorted(self.alive)
                     if self.nodes[i].parked}
        return RunResult(
            scenario=self.sc,
            records=self.records,
            decisions=self.decisions,
            commands=self.commands,
            proposed=self.proposed,
            alive=set(self.alive),
            stores={i: self.nodes[i].store for i in sorted(self.alive)},
            nodes=self.nodes,
            undecided=undecided,
            park_violations=self.park_violations,
            remaining_parked=remaining,
            ticks=self._now,
        )


def run(scenario: Scenario) -> RunResult:
    return Simulator(scenario).run()
