"""Event loop, replica wiring, fault activation, and report assembly.

Events are processed in (fire_time, seq) order; seq is assigned at
scheduling time, so one (scenario, seed) pair fully determines the trace.
A violation raised by the observer aborts the run and is carried in the
report; `Simulation.trace` (when enabled) holds the event prefix for
counterexample emission.
"""

from __future__ import annotations

import hashlib
import heapq
import math
from random import Random
from typing import Optional

from ..crypto import make_scheme
from ..messages import MCCVote, MQCVote, MTCVote
from ..metrics import MetricsCollector
from ..replica import Replica
from ..types import BlockRegistry, make_genesis
from ..variants import variant_dispatch
from .adversary import BEHAVIOR_CLASSES
from .network import NetworkModel, network_stats, wire_size
from .observer import SafetyObserver, SafetyViolation
from .scenario import Scenario

EV_MSG = 0
EV_TIMER = 1
EV_SUBMIT = 2
EV_MAINT = 3

GC_INTERVAL = 25.0
GC_GRACE_ROUNDS = 10
END_SLACK_DELTAS = 10  # eventual properties are checked up to horizon - 10*delta


class ReplicaContext:
    """The sandboxed I/O surface one replica sees."""

    __slots__ = ("runner", "rid", "time", "honest", "silenced", "skew")

    def __init__(self, runner: "Simulation", rid: int, honest: bool,
                 skew: float = 1.0):
        self.runner = runner
        self.rid = rid
        self.time = 0.0
        self.honest = honest
        self.silenced = False
        self.skew = skew

    def multicast(self, msg) -> None:
        if self.silenced:
            return
        self.runner.note_sent(self.rid, msg)
        for target in range(self.runner.n):
            self.runner.transmit(self.rid, target, msg)

    def send(self, target: int, msg) -> None:
        if self.silenced:
            return
        self.runner.transmit(self.rid, target, msg)

    def set_timer(self, delay: float, payload: tuple) -> None:
        self.runner.schedule_timer(self.rid, delay * self.skew, payload)

    def deliver(self, ref, block_round: int) -> None:
        self.runner.on_deliver(self.rid, ref, block_round)

    def note_round_entered(self, round_no: int) -> None:
        self.runner.note_round_entered(self.rid, round_no)

    def on_valid_qc(self, qc) -> None:
        self.runner.observer.on_valid_qc(qc)

    def on_direct_commit(self, qc) -> None:
        self.runner.on_direct_commit(self.rid, qc)

    def note_broadcast(self, batch) -> None:
        self.runner.metrics.note_broadcast(batch)

    def note_poa(self, poa) -> None:
        self.runner.metrics.note_poa(poa, self.time)

    def note_proposed(self, block) -> None:
        if self.honest:
            self.runner.metrics.note_proposed(block, self.time)
            self.runner.note_round_proposed(block.round)


class SimReport:
    """Deterministic, text-renderable outcome of one run."""

    def __init__(self, scenario: Scenario, seed: int):
        self.scenario_name = scenario.name
        self.variant = scenario.protocol.variant.value
        self.seed = seed
        self.verdict = "ok"
        self.violation: Optional[dict] = None
        self.event_count = 0
        self.network: dict = {}
        self.rounds_entered = 0
        self.max_committed_round = 0
        self.min_committed_round = 0
        self.canonical_length = 0
        self.qc_count = 0
        self.tc_rounds = 0
        self.prefix_histogram: dict[int, int] = {}
        self.log_digests: dict[int, str] = {}
        self.aggregates: dict = {}
        self.hops: Optional[dict] = None

    @property
    def ok(self) -> bool:
        return self.verdict == "ok"

    def render(self) -> str:
        lines = [
            f"scenario: {self.scenario_name}",
            f"variant: {self.variant}",
            f"seed: {self.seed}",
            f"verdict: {self.verdict}",
            f"events: {self.event_count}",
            f"rounds_entered: {self.rounds_entered}",
            f"committed_round_min: {self.min_committed_round}",
            f"committed_round_max: {self.max_committed_round}",
            f"canonical_delivered: {self.canonical_length}",
            f"valid_qcs: {self.qc_count}",
            f"tc_rounds: {self.tc_rounds}",
        ]
        for key in sorted(self.network):
            lines.append(f"net.{key}: {self.network[key]!r}")
        hist = ",".join(f"{k}:{v}" for k, v in sorted(self.prefix_histogram.items()))
        lines.append(f"prefix_histogram: {hist}")
        for rid in sorted(self.log_digests):
            lines.append(f"log[{rid}]: {self.log_digests[rid]}")
        for key in sorted(self.aggregates):
            lines.append(f"agg.{key}: {self.aggregates[key]!r}")
        if self.hops is not None:
            for key in sorted(self.hops):
                lines.append(f"hops.{key}: {self.hops[key]!r}")
        if self.violation is not None:
            for key in sorted(self.violation):
                lines.append(f"violation.{key}: {self.violation[key]}")
        body = "\n".join(lines)
        digest = hashlib.sha256(body.encode("utf-8")).hexdigest()
        return body + f"\nreport_digest: {digest}\n"

    def digest(self) -> str:
        return hashlib.sha256(
            self.render().encode("utf-8")).hexdigest()


class Simulation:
    def __init__(self, scenario: Scenario, seed: Optional[int] = None,
                 trace: bool = False):
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        config = scenario.protocol
        self.config = config
        self.n = config.n
        self.now = 0.0
        self.seq = 0
        self.heap: list = []
        self.trace_enabled = trace
        self.trace: list = []
        self.events_processed = 0

        corruption_by_rid = {c.replica: c for c in scenario.faults.corruptions}
        crashed_by_rid = {c.replica: c.at for c in scenario.faults.crashes}
        self.honest = frozenset(
            r for r in range(self.n)
            if r not in corruption_by_rid and r not in crashed_by_rid)
        self.dead_from = [math.inf] * self.n
        for rid, at in crashed_by_rid.items():
            self.dead_from[rid] = at
        self.silent_from = [math.inf] * self.n
        for rid, c in corruption_by_rid.items():
            if c.behavior == "silent":
                self.silent_from[rid] = c.at

        seed_tag = f"{scenario.name}|{self.seed}"
        self.network = NetworkModel(
            self.n, config.delta, scenario.network["delays"],
            gst=scenario.network["gst"],
            pre_gst_max_delay=scenario.network["pre_gst_max_delay"],
            pre_gst_drop=scenario.network["pre_gst_drop"],
            drop_windows=scenario.faults.drop_windows,
            partitions=scenario.faults.partitions,
            bandwidth=scenario.network["bandwidth"],
            rng=Random(f"{seed_tag}|net"))
        self.load_rng = Random(f"{seed_tag}|load")

        genesis, genesis_qc = make_genesis(config.availability)
        self.registry = BlockRegistry(genesis)
        self.scheme = make_scheme(config.crypto_scheme, f"{seed_tag}|keys",
                                  self.n, config.sub_blocks)
        self.observer = SafetyObserver(self.registry, self.honest)
        self.metrics = MetricsCollector(self.honest)

        policy = variant_dispatch(config)
        skews = scenario.network.get("timer_skew") or [1.0] * self.n
        self.replicas: list[Replica] = []
        self.contexts: list[ReplicaContext] = []
        for rid in range(self.n):
            ctx = ReplicaContext(self, rid, rid in self.honest, skews[rid])
            corruption = corruption_by_rid.get(rid)
            fetch_rng = Random(f"{seed_tag}|fetch|{rid}")
            if corruption is None or corruption.behavior == "silent":
                replica = Replica(rid, config, self.scheme, self.registry,
                                  genesis_qc, ctx, policy, fetch_rng)
            else:
                cls = BEHAVIOR_CLASSES[corruption.behavior]
                replica = cls(rid, config, self.scheme, self.registry,
                              genesis_qc, ctx, policy, fetch_rng,
                              activate_at=corruption.at,
                              params=corruption.params)
                replica.seed_rng(seed_tag)
            self.replicas.append(replica)
            self.contexts.append(ctx)

        # liveness bookkeeping (per-round entry and commit coverage times)
        self.round_entry_time: dict[int, float] = {}
        self.round_first_proposed: dict[int, float] = {}
        self.round_commit_count: dict[int, int] = {}
        self.round_commit_all_time: dict[int, float] = {}
        self._replica_committed_round = {rid: 0 for rid in self.honest}
        self._gc_done: set[bytes] = set()
        self._last_gc_floor = 0
        self.proc_cost = scenario.network.get("processing_cost", 0.0)
        self._busy = [0.0] * self.n

    # ------------------------------------------------------------------
    # scheduling primitives
    # ------------------------------------------------------------------

    def _push(self, time: float, kind: int, target: int, a, b) -> None:
        self.seq += 1
        heapq.heappush(self.heap, (time, self.seq, kind, target, a, b))

    def transmit(self, sender: int, target: int, msg) -> None:
        size = wire_size(msg) if self.network.bandwidth else 0
        delay = self.network.delivery_delay(
            sender, target, msg.channel, self.now, size)
        if delay is None:
            return
        if (self.now >= self.network.gst and delay > self.config.delta + 1e-9
                and not self.network.bandwidth
                and sender in self.honest and target in self.honest):
            raise RuntimeError("network model produced a post-GST delay "
                               f"above the synchrony bound: {delay}")
        self._push(self.now + delay, EV_MSG, target, sender, msg)

    def schedule_timer(self, rid: int, delay: float, payload: tuple) -> None:
        self._push(self.now + delay, EV_TIMER, rid, payload, None)

    def note_sent(self, sender: int, msg) -> None:
        t = type(msg)
        if t is MQCVote:
            self.observer.on_qc_vote(sender, msg.round, msg.prefix)
        elif t is MCCVote:
            self.observer.on_cc_vote(sender, msg.qc.round)
        elif t is MTCVote:
            self.observer.on_tc_vote(sender, msg.round)

    def note_round_proposed(self, round_no: int) -> None:
        self.round_first_proposed.setdefault(round_no, self.now)

    def on_deliver(self, rid: int, ref, block_round: int) -> None:
        if rid not in self.honest:
            return
        self.observer.on_deliver(rid, ref)
        self.metrics.note_deliver(rid, ref, self.now, block_round)

    def on_direct_commit(self, rid: int, qc) -> None:
        self.observer.on_direct_commit(rid, qc)
        if rid not in self._replica_committed_round:
            return
        prev = self._replica_committed_round[rid]
        if qc.round > prev:
            self._replica_committed_round[rid] = qc.round
            for r in range(prev + 1, qc.round + 1):
                count = self.round_commit_count.get(r, 0) + 1
                self.round_commit_count[r] = count
                if count == len(self.honest):
                    self.round_commit_all_time[r] = self.now

    def note_round_entered(self, rid: int, round_no: int) -> None:
        if rid in self.honest:
            self.round_entry_time.setdefault(round_no, self.now)
            if round_no > self.metrics.max_round_entered:
                self.metrics.max_round_entered = round_no

    # ------------------------------------------------------------------
    # load generation
    # ------------------------------------------------------------------

    def _schedule_first_submits(self) -> None:
        rate = self.scenario.load.rate
        if rate <= 0:
            return
        for rid in range(self.n):
            gap = self.load_rng.expovariate(rate)
            self._push(gap, EV_SUBMIT, rid, 0, None)

    def _handle_submit(self, rid: int, index: int) -> None:
        tx = (rid, index, self.scenario.load.tx_size)
        self.metrics.note_submit(rid, index, self.now)
        if self.now < self.dead_from[rid] and self.now < self.silent_from[rid]:
            self.contexts[rid].time = self.now
            self.replicas[rid].on_submit(tx)
        gap = self.load_rng.expovariate(self.scenario.load.rate)
        self._push(self.now + gap, EV_SUBMIT, rid, index + 1, None)

    # ------------------------------------------------------------------
    # batch-store garbage collection
    # ------------------------------------------------------------------

    def _gc_pass(self) -> None:
        if not self.honest:
            return
        floor = min(self._replica_committed_round.values()) - GC_GRACE_ROUNDS
        if floor <= 0 or floor == self._last_gc_floor:
            return
        self._last_gc_floor = floor
        want = len(self.honest)
        stale = [r.digest for r in self.metrics.records.values()
                 if r.committing_round is not None
                 and r.committing_round <= floor
                 and r.honest_deliveries >= want
                 and r.digest not in self._gc_done]
        if stale:
            self._gc_done.update(stale)
            for replica in self.replicas:
                replica.gc_batches(stale)

    # ------------------------------------------------------------------
    # main loop
    # ------------------------------------------------------------------

    def run(self) -> SimReport:
        report = SimReport(self.scenario, self.seed)
        horizon = self.scenario.horizon
        self._schedule_first_submits()
        self._push(GC_INTERVAL, EV_MAINT, -1, None, None)
        for rid, replica in enumerate(self.replicas):
            if self.dead_from[rid] > 0:
                ctx = self.contexts[rid]
                ctx.time = 0.0
                ctx.silenced = self.silent_from[rid] <= 0
                replica.on_start()
        violation: Optional[SafetyViolation] = None
        heap = self.heap
        proc_cost = self.proc_cost
        try:
            while heap:
                event = heapq.heappop(heap)
                time = event[0]
                if time > horizon:
                    break
                self.now = time
                self.events_processed += 1
                kind = event[2]
                target = event[3]
                if self.trace_enabled:
                    self.trace.append(event)
                if kind == EV_MSG or kind == EV_TIMER:
                    if time >= self.dead_from[target]:
                        continue
                    if time >= self.silent_from[target]:
                        continue
                    if proc_cost:
                        busy = self._busy
                        if busy[target] > time:
                            # Replica still busy: requeue at its free point.
                            self._push(busy[target], kind, target,
                                       event[4], event[5])
                            continue
                        busy[target] = time + proc_cost
                    ctx = self.contexts[target]
                    ctx.time = time
                    if kind == EV_MSG:
                        self.replicas[target].on_message(event[4], event[5])
                    else:
                        self.replicas[target].on_timer(event[4])
                elif kind == EV_SUBMIT:
                    self._handle_submit(target, event[4])
                else:
                    self._gc_pass()
                    self._push(self.now + GC_INTERVAL, EV_MAINT, -1, None, None)
        except SafetyViolation as exc:
            violation = exc
        self._finalize(report, violation)
        return report

    # ------------------------------------------------------------------
    # end-of-run verdicts and report assembly
    # ------------------------------------------------------------------

    def _eventual_checks(self) -> Optional[dict]:
        deadline = self.scenario.horizon - END_SLACK_DELTAS * self.config.delta
        clean_from = self.network.glitch_free_after()
        want = len(self.honest)
        for record in self.metrics.records.values():
            clean = record.broadcast_at >= clean_from
            if (clean and record.author in self.honest
                    and record.broadcast_at <= deadline
                    and record.honest_deliveries < want):
                return {
                    "kind": "validity",
                    "detail": (f"batch sn={record.sn} author={record.author} "
                               f"broadcast at {record.broadcast_at} reached "
                               f"{record.honest_deliveries}/{want} honest replicas"),
                }
            if (clean and record.first_delivered_at is not None
                    and record.first_delivered_at <= deadline
                    and record.honest_deliveries < want):
                return {
                    "kind": "totality",
                    "detail": (f"batch sn={record.sn} author={record.author} "
                               f"delivered first at {record.first_delivered_at} "
                               f"but only at {record.honest_deliveries}/{want}"),
                }
        return None

    def _finalize(self, report: SimReport,
                  violation: Optional[SafetyViolation]) -> None:
        observer = self.observer
        report.event_count = self.events_processed
        report.network = network_stats(self.network)
        report.rounds_entered = self.metrics.max_round_entered
        committed = [self._replica_committed_round[r] for r in sorted(self.honest)]
        report.max_committed_round = max(committed) if committed else 0
        report.min_committed_round = min(committed) if committed else 0
        report.canonical_length = len(observer.canonical)
        report.qc_count = observer.qc_count
        report.tc_rounds = len(observer.tc_rounds)
        report.prefix_histogram = observer.prefix_histogram()
        report.log_digests = {
            rid: f"{observer.delivered_log_digest(rid)}/{observer.cursor[rid]}"
            for rid in sorted(self.honest)}
        self.metrics.tc_vote_rounds = observer.tc_rounds
        self.metrics.fetch_requests = sum(
            r.fetcher.requests_sent for r in self.replicas)
        report.aggregates = self.metrics.aggregate(self.scenario.horizon)
        if violation is not None:
            report.verdict = f"violation:{violation.kind}"
            report.violation = {
                "kind": violation.kind,
                "detail": violation.detail,
                "at_event": self.events_processed,
            }
            return
        eventual = self._eventual_checks()
        if eventual is not None:
            report.verdict = f"violation:{eventual['kind']}"
            report.violation = {
                "kind": eventual["kind"],
                "detail": eventual["detail"],
                "at_event": self.events_processed,
            }


def run_scenario(scenario: Scenario, seed: Optional[int] = None,
                 hop_counts: bool = False, trace: bool = False) -> SimReport:
    sim = Simulation(scenario, seed=seed, trace=trace)
    report = sim.run()
    if hop_counts:
        delays = scenario.network["delays"]
        model = delays["consensus"]
        if model.kind != "fixed" or any(
                d.kind != "fixed" or d.value != model.value
                for d in delays.values()):
            raise ValueError("hop-count mode requires one fixed delay on all channels")
        report.hops = sim.metrics.hop_counts(model.value, scenario.horizon)
    return report
