"""Deterministic discrete-event core: drives arrivals through routing,
execution, caching, and trust, applies epoch replanning and scripted events,
and accumulates metrics, receipts, and an event trace.

Stage schedules are fixed at selection time (reservation calendars), so the
event loop realizes exactly the timing the router scored; identical
(scenario, seed) inputs produce byte-identical outputs.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from math import ceil

from . import deployment
from .caching import REJECT_ALREADY_RESIDENT, BenefitInputs, CacheSystem, estimate_p_hit
from .descriptors import (
    REASON_HORIZON_TRUNCATED,
    ExecutionReceipt,
    RequestDescriptor,
    SharingScope,
    StateDescriptor,
    StateType,
    Tier,
    Verdict,
    parse_fraction,
)
from .metrics import (
    OUTCOME_REJECTED,
    OUTCOME_SERVED,
    OUTCOME_TRUNCATED,
    MetricsFrame,
    RequestRecord,
)
from .registry import Broker, CapabilityCatalog
from .routing import Rejection, Router, RoutingWeights, ScoredPlan, Selection
from .scenario import Scenario
from .trust import AttestationRecord, ReceiptLog, TrustManager
from .workload import Arrival, generate_arrivals


class EventKind(str, Enum):
    ARRIVAL = "arrival"
    DISPATCH = "dispatch"
    STAGE_COMPLETE = "stage_complete"
    TRANSFER_COMPLETE = "transfer_complete"
    EPOCH_REPLAN = "epoch_replan"
    TELEMETRY = "telemetry"
    SESSION_END = "session_end"
    NODE_OFFLINE = "node_offline"
    NODE_ONLINE = "node_online"
    REVOKE = "revoke"


@dataclass(order=True, slots=True)
class Event:
    time_us: int
    seq: int
    kind: EventKind = field(compare=False)
    payload: dict = field(compare=False, default_factory=dict)


@dataclass(slots=True)
class InFlight:
    arrival: Arrival
    scored: ScoredPlan
    served_quality: int
    degraded: bool
    pinned: tuple[str, str] | None  # (node_id, entry key) of the reused state


@dataclass(slots=True)
class AuditEntry:
    request_id: str
    now_us: int
    chosen_plan_id: str
    alternatives: tuple[tuple[str, tuple[int, int, int, int, int, int]], ...]


@dataclass(slots=True)
class RunResult:
    metrics: MetricsFrame
    receipts: ReceiptLog
    trace: list[dict]
    audit: list[AuditEntry]

    def receipts_jsonl(self) -> str:
        return self.receipts.to_jsonl()


class Simulation:
    def __init__(
        self,
        scenario: Scenario,
        seed: int | None = None,
        duration_us: int | None = None,
        cache_enabled: bool | None = None,
        placement_tiers: set[Tier] | None = None,
        weights: RoutingWeights | None = None,
        audit: bool = False,
        trace: bool = False,
    ):
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        self.duration_us = scenario.duration_us if duration_us is None else duration_us
        self.audit_enabled = audit
        self.trace_enabled = trace

        self.topology = scenario.build_topology()
        self.catalog = CapabilityCatalog()
        for cd in scenario.classes:
            self.catalog.add_class(cd)
        for var in scenario.variants:
            self.catalog.add_variant(var)
        for real in scenario.realizations:
            self.catalog.add_realization(real)

        self.trust = TrustManager()
        for real in scenario.realizations:
            parent = self.catalog.variant_of(real.realization_id).parent_class
            self.trust.register_lineage(real.realization_id, self.catalog.classes[parent].lineage)

        self.broker = Broker(self.catalog, self.topology, trust=self.trust)
        attested = {a["node_id"] for a in scenario.trust_script.attestations}
        for snode in scenario.nodes:
            self.broker.register_node(snode.profile)
            if snode.profile.node_id not in attested:
                self.trust.attest(AttestationRecord(snode.profile.node_id, snode.profile.trust, 0, None))
        for att in scenario.trust_script.attestations:
            self.trust.attest(
                AttestationRecord(
                    att["node_id"],
                    att.get("level", 0),
                    att.get("issue_time_us", 0),
                    att.get("validity_window_us"),
                )
            )

        cache_cfg = scenario.cache_config
        enabled = cache_cfg.get("enabled", True) if cache_enabled is None else cache_enabled
        self.caches = CacheSystem(
            window_us=int(cache_cfg.get("window_us", 300_000_000)),
            enabled=enabled,
            policy=cache_cfg.get("eviction_policy", "benefit"),
        )
        self.cache_storage_unit_cost = parse_fraction(cache_cfg.get("storage_unit_cost", 0))
        for snode in scenario.nodes:
            self.caches.add_store(snode.profile.node_id, snode.cache_capacity_bytes)

        self.router = Router(
            broker=self.broker,
            topology=self.topology,
            caches=self.caches,
            trust=self.trust,
            weights=weights if weights is not None else RoutingWeights.from_dict(scenario.weights),
            bytes_per_token=scenario.bytes_per_token,
            enable_split=bool(scenario.routing_config.get("enable_split", True)),
            artifact_repository=scenario.artifact_repository,
            placement_tiers=placement_tiers,
        )

        for rid, node_id in sorted(scenario.initial_placement):
            if placement_tiers is not None:
                tier = self.broker.node(node_id).profile.locality.tier
                if tier not in placement_tiers:
                    continue
            self.broker.install(node_id, rid, available_at_us=0)

        self.metrics = MetricsFrame(duration_us=self.duration_us)
        for snode in scenario.nodes:
            self.metrics.node_capacity[snode.profile.node_id] = snode.profile.capacity.max_concurrent
        self.receipts = ReceiptLog()
        self.trace: list[dict] = []
        self.audit: list[AuditEntry] = []

        self._events: list[Event] = []
        self._seq = 0
        self._in_flight: dict[str, InFlight] = {}
        self._session_remaining: dict[str, int] = {}
        self._pending_loads: dict[str, list[str]] = {}
        self._arrival_history: list[Arrival] = []
        self._horizon_rejected: list[tuple[int, Arrival]] = []

    # -- event plumbing ------------------------------------------------------

    def _push(self, time_us: int, kind: EventKind, payload: dict) -> None:
        heapq.heappush(self._events, Event(time_us, self._seq, kind, payload))
        self._seq += 1

    def _trace(self, time_us: int, kind: str, **fields) -> None:
        if self.trace_enabled:
            row = {"timestamp_us": time_us, "seq": len(self.trace), "kind": kind}
            row.update(fields)
            self.trace.append(row)

    # -- schedule construction -------------------------------------------------

    def _schedule_initial_events(self) -> None:
        # Scripted control-plane events first so that, at equal timestamps,
        # they order before arrivals.
        for ev in self.scenario.node_events:
            kind = EventKind.NODE_ONLINE if ev.get("online", True) else EventKind.NODE_OFFLINE
            self._push(int(ev.get("time_us", 0)), kind, {"node_id": ev["node_id"]})
        for rev in self.scenario.trust_script.revocations:
            self._push(int(rev.get("time_us", 0)), EventKind.REVOKE, {"realization_id": rev["realization_id"]})
        dep = self.scenario.deployment_config
        if dep.get("replan_enabled", False):
            epoch = int(dep.get("epoch_us", 60_000_000))
            t = epoch
            while t < self.duration_us:
                self._push(t, EventKind.EPOCH_REPLAN, {})
                t += epoch

        arrivals = generate_arrivals(self.scenario.workload, self.duration_us, self.seed)
        for scripted in self.scenario.scripted_requests:
            arrivals.append(
                Arrival(
                    request=scripted.request,
                    session_id=scripted.session_id,
                    turn_index=scripted.turn_index,
                    total_turns=scripted.total_turns,
                    prefix_tokens=scripted.prefix_tokens,
                )
            )
        arrivals.sort(key=lambda a: (a.request.arrival_time, a.request.origin_region, a.request.request_id))
        for arrival in arrivals:
            self._push(arrival.request.arrival_time, EventKind.ARRIVAL, {"arrival": arrival})
            sid = arrival.session_id
            self._session_remaining[sid] = self._session_remaining.get(sid, 0) + 1

    # -- run loop -----------------------------------------------------------------

    def run(self) -> RunResult:
        self._schedule_initial_events()
        handlers = {
            EventKind.ARRIVAL: self._on_arrival,
            EventKind.DISPATCH: self._on_dispatch,
            EventKind.STAGE_COMPLETE: self._on_stage_complete,
            EventKind.TRANSFER_COMPLETE: self._on_transfer_complete,
            EventKind.EPOCH_REPLAN: self._on_replan,
            EventKind.SESSION_END: self._on_session_end,
            EventKind.NODE_OFFLINE: self._on_node_offline,
            EventKind.NODE_ONLINE: self._on_node_online,
            EventKind.REVOKE: self._on_revoke,
            EventKind.TELEMETRY: self._on_telemetry,
        }
        while self._events and self._events[0].time_us <= self.duration_us:
            event = heapq.heappop(self._events)
            handlers[event.kind](event.time_us, event.payload)
        self._truncate_in_flight()
        return RunResult(metrics=self.metrics, receipts=self.receipts, trace=self.trace, audit=self.audit)

    # -- arrival / selection -----------------------------------------------------

    def _on_arrival(self, now: int, payload: dict) -> None:
        arrival: Arrival = payload["arrival"]
        request = arrival.request
        self._arrival_history.append(arrival)
        self._trace(now, EventKind.ARRIVAL.value, request_id=request.request_id)

        outcome = self.router.select(request, now)
        if isinstance(outcome, Rejection):
            self._finish_rejected(now, arrival, outcome.reason)
            return

        scored = outcome.scored
        if self.audit_enabled:
            self.audit.append(
                AuditEntry(
                    request_id=request.request_id,
                    now_us=now,
                    chosen_plan_id=scored.plan.plan_id,
                    alternatives=outcome.alternatives,
                )
            )

        verdict, reason = self.trust.verdict(
            request, scored.plan.stages, scored.stages[0].start_us, degraded=outcome.degraded
        )
        if verdict == "rejected":
            self._finish_rejected(now, arrival, reason or "rejected")
            return

        self._commit(now, arrival, outcome)

    def _commit(self, now: int, arrival: Arrival, selection: Selection) -> None:
        request = arrival.request
        scored = selection.scored
        pinned = None

        if scored.state_use is not None:
            use = scored.state_use
            entry = use.entry
            store = self.caches.store(use.entry_node)
            counted, _ = store.lookup(
                entry.descriptor.compatibility_hash,
                entry.scope_key,
                now,
                requester_session=arrival.session_id,
                requester_tenant=request.tenant,
            )
            if counted is not None:
                counted.pins += 1
                pinned = (use.entry_node, store.entry_key(entry.descriptor.compatibility_hash, entry.scope_key))
            self.metrics.count_cache_lookup(StateType.TENSOR_STATE, hit=True)
            if use.migrate:
                migration_done = now + scored.inbound_net_us + use.transfer_us
                self._push(
                    migration_done,
                    EventKind.TRANSFER_COMPLETE,
                    {
                        "transfer": "state_migration",
                        "request_id": request.request_id,
                        "state_entry": (use.entry_node, scored.stages[0].node_id),
                    },
                )
        elif request.affinity_token and self.caches.enabled:
            self.metrics.count_cache_lookup(StateType.TENSOR_STATE, hit=False)

        for proj in scored.stages:
            node = self.broker.node(proj.node_id)
            if proj.cold:
                self.broker.install(proj.node_id, proj.realization_id, proj.warm_available_at_us)
                realization = self.catalog.realizations[proj.realization_id]
                self.metrics.model_load_overhead_us += proj.warm_available_at_us - proj.start_us
                self.metrics.placement_churn += 1
                if self.router.artifact_repository is not None:
                    _, core = self.topology.transfer_between(
                        self.router.artifact_repository, proj.node_id, realization.artifact_size_bytes
                    )
                    self.metrics.core_bytes_placement += core
            node.reserve(self._seq, request.request_id, proj.realization_id, proj.ready_us, proj.duration_us)
            self.metrics.max_queue_length[proj.node_id] = max(
                self.metrics.max_queue_length.get(proj.node_id, 0), node.queue_length(now)
            )
            self._push(
                proj.start_us,
                EventKind.DISPATCH,
                {"request_id": request.request_id, "node_id": proj.node_id, "ready_us": proj.ready_us},
            )
            self._push(
                proj.complete_us,
                EventKind.STAGE_COMPLETE,
                {"request_id": request.request_id, "node_id": proj.node_id, "realization_id": proj.realization_id},
            )

        self._push(
            now + scored.inbound_net_us,
            EventKind.TRANSFER_COMPLETE,
            {"transfer": "inbound", "request_id": request.request_id, "bytes": request.input_tokens * self.router.bytes_per_token},
        )
        if len(scored.stages) == 2:
            self._push(
                scored.stages[0].complete_us + scored.interstage_net_us,
                EventKind.TRANSFER_COMPLETE,
                {"transfer": "kv", "request_id": request.request_id},
            )
        self._push(
            scored.finish_us,
            EventKind.TRANSFER_COMPLETE,
            {"transfer": "response", "request_id": request.request_id, "terminal": True},
        )

        self._in_flight[request.request_id] = InFlight(
            arrival=arrival,
            scored=scored,
            served_quality=selection.served_quality,
            degraded=selection.degraded,
            pinned=pinned,
        )

    # -- event handlers -----------------------------------------------------------

    def _on_dispatch(self, now: int, payload: dict) -> None:
        node_id = payload["node_id"]
        self.broker.refresh_queue_telemetry(node_id, now)
        self._trace(
            now,
            EventKind.DISPATCH.value,
            request_id=payload["request_id"],
            node_id=node_id,
            ready_us=payload["ready_us"],
        )

    def _on_stage_complete(self, now: int, payload: dict) -> None:
        node_id = payload["node_id"]
        rid = payload["realization_id"]
        self.broker.refresh_queue_telemetry(node_id, now)
        self._trace(now, EventKind.STAGE_COMPLETE.value, request_id=payload["request_id"], node_id=node_id)
        self._maybe_complete_eviction(now, node_id, rid)

    def _on_transfer_complete(self, now: int, payload: dict) -> None:
        self._trace(now, EventKind.TRANSFER_COMPLETE.value, **{k: v for k, v in payload.items() if k != "terminal"})
        if payload.get("transfer") == "state_migration":
            self._apply_migration(now, payload)
        if payload.get("terminal"):
            self._finish_served(now, payload["request_id"])

    def _apply_migration(self, now: int, payload: dict) -> None:
        src_node, dst_node = payload["state_entry"]
        flight = self._in_flight.get(payload["request_id"])
        if flight is None or flight.scored.state_use is None:
            return
        entry = flight.scored.state_use.entry
        store = self.caches.store(dst_node)
        inputs = BenefitInputs(
            p_hit=estimate_p_hit(entry, now, self.caches.window_us),
            latency_gain_us=entry.latency_gain_us,
            transfer_cost_us=0,  # sunk: the copy already moved for this request
            storage_cost_us=entry.storage_cost_us,
        )
        decision = store.admit(
            entry.descriptor,
            inputs,
            scope_key=entry.scope_key,
            now=now,
            node_trust=self.trust.effective_trust(dst_node, now),
            requester_min_trust=flight.arrival.request.policy.min_trust,
            token_count=entry.token_count,
            source_realization=entry.source_realization,
        )
        self._trace(
            now,
            "cache_migrate",
            state_id=entry.state_id,
            node_id=dst_node,
            src_node=src_node,
            outcome=decision.outcome,
            benefit=str(decision.benefit_us) if decision.benefit_us is not None else "-inf",
            bytes=entry.size,
        )
        for victim in decision.evicted:
            self._trace(now, "cache_evict", state_id=victim, node_id=dst_node, reason="displaced")

    def _on_replan(self, now: int, payload: dict) -> None:
        dep = self.scenario.deployment_config
        window_us = int(dep.get("window_us", 300_000_000))
        cells = self._demand_cells(now - window_us, now)
        residency = {
            node_id: {rid for rid, res in state.residency.items() if not res.pending_eviction}
            for node_id, state in self.broker.nodes.items()
        }
        problem = deployment.build_problem(self.router, cells, self.scenario.weights, residency, now)
        solution = deployment.solve(problem, int(dep.get("local_search_rounds", 8)))
        delta = deployment.plan_delta(solution, residency)
        self._trace(now, EventKind.EPOCH_REPLAN.value, loads=len(delta.loads), evictions=len(delta.evictions))

        for rid, node_id in delta.evictions:
            state = self.broker.node(node_id)
            res = state.residency.get(rid)
            if res is None:
                continue
            res.pending_eviction = True
            self._maybe_complete_eviction(now, node_id, rid)
        for rid, node_id in delta.loads:
            state = self.broker.node(node_id)
            res = state.residency.get(rid)
            if res is not None:
                res.pending_eviction = False  # resurrected before it drained
                continue
            self._start_load(now, node_id, rid)
        for node_id in sorted(self.broker.nodes):
            state = self.broker.node(node_id)
            self.broker.refresh_queue_telemetry(node_id, now)
            self._push(now, EventKind.TELEMETRY, {"node_id": node_id, "queued_work_us": state.queued_work_us})

    def _demand_cells(self, start_us: int, end_us: int) -> list[deployment.DemandCell]:
        return deployment.cells_from_requests(
            [a.request for a in self._arrival_history], start_us, end_us
        )

    def _start_load(self, now: int, node_id: str, rid: str) -> None:
        realization = self.catalog.realizations[rid]
        state = self.broker.node(node_id)
        if state.free_memory_bytes({r: self.broker.footprint(r) for r in state.residency}) < self.broker.footprint(rid):
            self._pending_loads.setdefault(node_id, []).append(rid)
            return
        if self.router.artifact_repository is not None:
            transfer, core = self.topology.transfer_between(
                self.router.artifact_repository, node_id, realization.artifact_size_bytes
            )
        else:
            transfer, core = 0, 0
        available = now + transfer + realization.load_time_us
        self.broker.install(node_id, rid, available)
        self.metrics.placement_churn += 1
        self.metrics.model_load_overhead_us += transfer + realization.load_time_us
        self.metrics.core_bytes_placement += core
        self._push(
            available,
            EventKind.TRANSFER_COMPLETE,
            {"transfer": "artifact", "node_id": node_id, "realization_id": rid, "bytes": realization.artifact_size_bytes},
        )

    def _maybe_complete_eviction(self, now: int, node_id: str, rid: str) -> None:
        state = self.broker.node(node_id)
        res = state.residency.get(rid)
        if res is None or not res.pending_eviction:
            return
        if state.outstanding_for_realization(rid, now) > 0:
            return
        self.broker.evict(node_id, rid)
        self.metrics.placement_churn += 1
        self._trace(now, "placement_evict", node_id=node_id, realization_id=rid)
        pending = self._pending_loads.get(node_id, [])
        if pending:
            self._pending_loads[node_id] = []
            for pending_rid in sorted(pending):
                self._start_load(now, node_id, pending_rid)

    def _on_session_end(self, now: int, payload: dict) -> None:
        session_id = payload["session_id"]
        for node_id, state_id in self.caches.drop_session(session_id):
            self._trace(now, "cache_evict", state_id=state_id, node_id=node_id, reason="session_end")
        self._trace(now, EventKind.SESSION_END.value, session_id=session_id)

    def _on_node_offline(self, now: int, payload: dict) -> None:
        self.broker.node(payload["node_id"]).online = False
        self.broker._invalidate(self.broker.node(payload["node_id"]).profile.domain_id)
        self._trace(now, EventKind.NODE_OFFLINE.value, node_id=payload["node_id"])

    def _on_node_online(self, now: int, payload: dict) -> None:
        self.broker.node(payload["node_id"]).online = True
        self.broker._invalidate(self.broker.node(payload["node_id"]).profile.domain_id)
        self._trace(now, EventKind.NODE_ONLINE.value, node_id=payload["node_id"])

    def _on_revoke(self, now: int, payload: dict) -> None:
        rid = payload["realization_id"]
        self.trust.revoke(rid)
        self._trace(now, EventKind.REVOKE.value, realization_id=rid)
        for node_id in sorted(self.broker.nodes):
            state = self.broker.node(node_id)
            if rid in state.residency:
                state.residency[rid].pending_eviction = True
                self._maybe_complete_eviction(now, node_id, rid)
        for node_id, state_id in self.caches.drop_by_realization(rid):
            self._trace(now, "cache_evict", state_id=state_id, node_id=node_id, reason="revoked")

    def _on_telemetry(self, now: int, payload: dict) -> None:
        self._trace(now, EventKind.TELEMETRY.value, **payload)

    # -- terminal bookkeeping ------------------------------------------------------

    def _finish_rejected(self, now: int, arrival: Arrival, reason: str) -> None:
        request = arrival.request
        self.receipts.emit(
            ExecutionReceipt(
                request_id=request.request_id,
                plan=(),
                capability_versions=(),
                node_attestations=(),
                cache_states_reused=(),
                cache_tokens_covered=0,
                verdict=Verdict.REJECTED,
                reason=reason,
                arrival_time=request.arrival_time,
                finish_time=now,
            )
        )
        self.metrics.add_record(
            RequestRecord(
                request_id=request.request_id,
                outcome=OUTCOME_REJECTED,
                reason=reason,
                arrival_us=request.arrival_time,
                finish_us=now,
            )
        )
        self._end_turn(now, arrival)

    def _finish_served(self, now: int, request_id: str) -> None:
        flight = self._in_flight.pop(request_id, None)
        if flight is None:
            return
        arrival = flight.arrival
        request = arrival.request
        scored = flight.scored

        if flight.pinned is not None:
            node_id, entry_key = flight.pinned
            entry = self.caches.store(node_id).entries.get(entry_key)
            if entry is not None:
                entry.pins = max(0, entry.pins - 1)
                if entry.source_realization and self.trust.is_revoked(entry.source_realization) and entry.pins == 0:
                    self.caches.store(node_id).entries.pop(entry_key, None)
                    self._trace(now, "cache_evict", state_id=entry.state_id, node_id=node_id, reason="revoked")

        ttft, tpot = compute_ttft_tpot(scored, request)
        attest_time = scored.stages[0].start_us
        versions = tuple(
            sorted(
                {
                    (
                        proj.realization_id,
                        (self.trust.lineage_for(proj.realization_id).chain_digests[-1]
                         if self.trust.lineage_for(proj.realization_id) else ""),
                    )
                    for proj in scored.stages
                }
            )
        )
        attestations = tuple(
            sorted({(proj.node_id, self.trust.effective_trust(proj.node_id, attest_time)) for proj in scored.stages})
        )
        reused = (scored.state_use.entry.state_id,) if scored.state_use else ()
        covered = scored.state_use.covered_tokens if scored.state_use else 0
        cost = scored.cost
        self.receipts.emit(
            ExecutionReceipt(
                request_id=request.request_id,
                plan=scored.plan.stages,
                capability_versions=versions,
                node_attestations=attestations,
                cache_states_reused=reused,
                cache_tokens_covered=covered,
                verdict=Verdict.DEGRADED if flight.degraded else Verdict.ALLOWED,
                reason=f"quality-downgrade:{flight.served_quality}" if flight.degraded else None,
                t_net_us=cost.t_net_us,
                t_queue_us=cost.t_queue_us,
                t_exec_us=cost.t_exec_us,
                t_state_us=cost.t_state_us,
                c_load=cost.c_load,
                p_policy=cost.p_policy,
                arrival_time=request.arrival_time,
                finish_time=now,
            )
        )
        self.metrics.core_bytes_requests += scored.core_bytes
        record = RequestRecord(
            request_id=request.request_id,
            outcome=OUTCOME_SERVED,
            arrival_us=request.arrival_time,
            finish_us=now,
            ttft_us=ttft,
            tpot_us=tpot,
            latency_us=now - request.arrival_time,
            core_bytes=scored.core_bytes,
            degraded=flight.degraded,
            cache_lookup=bool(request.affinity_token and self.caches.enabled),
            cache_hit=covered > 0,
            cache_state_type=StateType.TENSOR_STATE.value if covered > 0 else None,
            tokens_covered=covered,
            stages=[(proj.node_id, proj.duration_us) for proj in scored.stages],
        )
        self.metrics.add_record(record)
        for proj in scored.stages:
            self.metrics.node_busy_us[proj.node_id] = (
                self.metrics.node_busy_us.get(proj.node_id, 0) + proj.duration_us
            )
        self._offer_session_state(now, flight)
        self._end_turn(now, arrival)

    def _offer_session_state(self, now: int, flight: InFlight) -> None:
        arrival = flight.arrival
        request = arrival.request
        if not (request.affinity_token and self.caches.enabled and arrival.prefix_tokens > 0):
            return
        scored = flight.scored
        serving_node = scored.stages[-1].node_id
        prefill_rid = scored.stages[0].realization_id
        realization = self.catalog.realizations[prefill_rid]
        compat = self.router.state_hash_for(prefill_rid, request)
        store = self.caches.store(serving_node)
        if store.resident(compat, arrival.session_id) is not None:
            return
        size = arrival.prefix_tokens * realization.kv_bytes_per_token
        speed = self.broker.node(serving_node).profile.hardware.speed_factor
        gain = ceil(Fraction(arrival.prefix_tokens * realization.prefill_time_per_token_us) / speed)
        descriptor = StateDescriptor(
            state_id=f"st-{request.request_id}",
            state_type=StateType.TENSOR_STATE,
            compatibility_hash=compat,
            sharing_scope=SharingScope.SESSION_PRIVATE,
            size=size,
            privacy_label=request.policy.data_class,
            migration_cost=size,
        )
        inputs = BenefitInputs(
            p_hit=Fraction(1, 2),
            latency_gain_us=gain,
            transfer_cost_us=0,
            storage_cost_us=int(self.cache_storage_unit_cost * size),
        )
        decision = store.admit(
            descriptor,
            inputs,
            scope_key=arrival.session_id,
            now=now,
            node_trust=self.trust.effective_trust(serving_node, now),
            requester_min_trust=request.policy.min_trust,
            token_count=arrival.prefix_tokens,
            source_realization=prefill_rid,
        )
        if decision.outcome != REJECT_ALREADY_RESIDENT:
            self._trace(
                now,
                "cache_admit" if decision.admitted else "cache_reject",
                state_id=descriptor.state_id,
                node_id=serving_node,
                outcome=decision.outcome,
                benefit=str(decision.benefit_us) if decision.benefit_us is not None else "-inf",
                bytes=size,
            )
            for victim in decision.evicted:
                self._trace(now, "cache_evict", state_id=victim, node_id=serving_node, reason="displaced")

    def _end_turn(self, now: int, arrival: Arrival) -> None:
        sid = arrival.session_id
        remaining = self._session_remaining.get(sid, 0) - 1
        self._session_remaining[sid] = remaining
        if remaining <= 0:
            self._push(now, EventKind.SESSION_END, {"session_id": sid})

    def _truncate_in_flight(self) -> None:
        for request_id in sorted(self._in_flight):
            flight = self._in_flight[request_id]
            request = flight.arrival.request
            if flight.pinned is not None:
                node_id, entry_key = flight.pinned
                entry = self.caches.store(node_id).entries.get(entry_key)
                if entry is not None:
                    entry.pins = max(0, entry.pins - 1)
            self.receipts.emit(
                ExecutionReceipt(
                    request_id=request_id,
                    plan=flight.scored.plan.stages,
                    capability_versions=(),
                    node_attestations=(),
                    cache_states_reused=(),
                    cache_tokens_covered=0,
                    verdict=Verdict.REJECTED,
                    reason=REASON_HORIZON_TRUNCATED,
                    arrival_time=request.arrival_time,
                    finish_time=self.duration_us,
                )
            )
            self.metrics.add_record(
                RequestRecord(
                    request_id=request_id,
                    outcome=OUTCOME_TRUNCATED,
                    reason=REASON_HORIZON_TRUNCATED,
                    arrival_us=request.arrival_time,
                    finish_us=self.duration_us,
                )
            )
        self._in_flight.clear()


def compute_ttft_tpot(scored: ScoredPlan, request: RequestDescriptor) -> tuple[int, int]:
    """(TTFT, TPOT) in integer microseconds for a served request.

    TTFT is elapsed time from arrival to the first output token: inbound
    transfer, state wait, realized queueing, activation/setup, uncovered
    prefill, and one decode step. TPOT is the mean inter-output-token time,
    the decode-phase duration over the output token count.
    """
    ttft = scored.first_token_us - request.arrival_time
    tpot = scored.decode_total_us // max(1, request.output_tokens)
    return ttft, tpot
