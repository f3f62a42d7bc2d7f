"""Capability registry and resource broker.

The catalog stores the class -> variant -> realization tree with referential
integrity. The broker tracks live node state (residency, reservation
calendars, memory) behind per-domain summaries; telemetry is push-based,
last-writer-wins, and summaries recompute lazily on read.

Candidate lookup returns warm and cold (placeable) candidates so routing can
price activation instead of the registry hiding it.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

from .descriptors import (
    CapabilityDescriptor,
    CapabilityRealization,
    CapabilityVariant,
    LocalityScope,
    PolicyConstraint,
    ResourceProfile,
    Tier,
)
from .topology import Domain, Topology
from .trust import TrustManager


class DuplicateNode(Exception):
    pass


class UnknownNode(Exception):
    pass


class UnknownDomain(Exception):
    pass


class TrustBelowDomainFloor(Exception):
    pass


class UnknownCapabilityClass(Exception):
    pass


class CatalogIntegrityError(Exception):
    pass


class CapabilityCatalog:
    """Three-level capability store with referential integrity."""

    def __init__(self) -> None:
        self.classes: dict[str, CapabilityDescriptor] = {}
        self.variants: dict[str, CapabilityVariant] = {}
        self.realizations: dict[str, CapabilityRealization] = {}

    def add_class(self, desc: CapabilityDescriptor) -> None:
        if desc.name in self.classes:
            raise CatalogIntegrityError(f"duplicate class {desc.name}")
        self.classes[desc.name] = desc

    def add_variant(self, variant: CapabilityVariant) -> None:
        if variant.parent_class not in self.classes:
            raise CatalogIntegrityError(f"variant {variant.variant_id}: unknown class {variant.parent_class}")
        if variant.variant_id in self.variants:
            raise CatalogIntegrityError(f"duplicate variant {variant.variant_id}")
        self.variants[variant.variant_id] = variant

    def add_realization(self, realization: CapabilityRealization) -> None:
        if realization.variant_id not in self.variants:
            raise CatalogIntegrityError(
                f"realization {realization.realization_id}: unknown variant {realization.variant_id}"
            )
        if realization.realization_id in self.realizations:
            raise CatalogIntegrityError(f"duplicate realization {realization.realization_id}")
        self.realizations[realization.realization_id] = realization

    def remove_realization(self, realization_id: str) -> None:
        self.realizations.pop(realization_id, None)

    def variant_of(self, realization_id: str) -> CapabilityVariant:
        return self.variants[self.realizations[realization_id].variant_id]

    def class_of(self, realization_id: str) -> CapabilityDescriptor:
        return self.classes[self.variant_of(realization_id).parent_class]

    def realizations_of_class(self, class_name: str) -> list[CapabilityRealization]:
        if class_name not in self.classes:
            raise UnknownCapabilityClass(class_name)
        out = [
            r
            for r in self.realizations.values()
            if self.variants[r.variant_id].parent_class == class_name
        ]
        out.sort(key=lambda r: r.realization_id)
        return out

    def footprint_bytes(self, realization_id: str) -> int:
        # Memory footprint for placement budgeting equals the artifact size.
        return self.realizations[realization_id].artifact_size_bytes

    def check_integrity(self) -> list[str]:
        problems = []
        for v in self.variants.values():
            if v.parent_class not in self.classes:
                problems.append(f"variant {v.variant_id} dangling class {v.parent_class}")
        for r in self.realizations.values():
            if r.variant_id not in self.variants:
                problems.append(f"realization {r.realization_id} dangling variant {r.variant_id}")
        return problems


@dataclass(slots=True)
class Residency:
    realization_id: str
    available_at_us: int  # warm once now >= available_at_us; loading before that
    pending_eviction: bool = False


@dataclass(slots=True)
class Reservation:
    seq: int
    request_id: str
    realization_id: str
    ready_us: int
    start_us: int
    complete_us: int


@dataclass(slots=True)
class NodeState:
    """Live per-node bookkeeping: residency, memory, and the reservation calendar.

    The calendar fixes each reserved stage's start/complete time at selection
    (servers are assigned in reservation order), so scored queueing equals
    realized queueing exactly.
    """

    profile: ResourceProfile
    online: bool = True
    residency: dict[str, Residency] = field(default_factory=dict)
    reservations: list[Reservation] = field(default_factory=list)
    server_free_us: list[int] = field(default_factory=list)
    queued_work_us: int = 0  # last pushed telemetry value

    def __post_init__(self) -> None:
        if not self.server_free_us:
            self.server_free_us = [0] * self.profile.capacity.max_concurrent
            heapq.heapify(self.server_free_us)

    @property
    def node_id(self) -> str:
        return self.profile.node_id

    def used_memory_bytes(self, footprint: dict[str, int]) -> int:
        return sum(footprint[rid] for rid in self.residency)

    def free_memory_bytes(self, footprint: dict[str, int]) -> int:
        return self.profile.capacity.memory_budget_bytes - self.used_memory_bytes(footprint)

    def prune(self, now: int) -> None:
        if any(r.complete_us <= now for r in self.reservations):
            self.reservations = [r for r in self.reservations if r.complete_us > now]

    def queue_length(self, now: int) -> int:
        """Reserved stages not yet started; the admission-cap quantity."""
        self.prune(now)
        return sum(1 for r in self.reservations if r.start_us > now)

    def outstanding(self, now: int) -> int:
        self.prune(now)
        return len(self.reservations)

    def peek_wait_us(self, ready_us: int) -> int:
        """Wait a stage ready at ``ready_us`` would incur; pure, no reservation."""
        return max(0, self.server_free_us[0] - ready_us)

    def reserve(self, seq: int, request_id: str, realization_id: str, ready_us: int, duration_us: int) -> Reservation:
        free = heapq.heappop(self.server_free_us)
        start = max(ready_us, free)
        complete = start + duration_us
        heapq.heappush(self.server_free_us, complete)
        res = Reservation(seq, request_id, realization_id, ready_us, start, complete)
        self.reservations.append(res)
        return res

    def live_queued_work_us(self, now: int) -> int:
        """Telemetry view: how long a ready-now stage would wait for a server."""
        return max(0, min(self.server_free_us) - now)

    def outstanding_for_realization(self, realization_id: str, now: int) -> int:
        self.prune(now)
        return sum(1 for r in self.reservations if r.realization_id == realization_id)


@dataclass(frozen=True, slots=True)
class ClassSummary:
    best_quality: int
    warm_realizations: int


@dataclass(frozen=True, slots=True)
class DomainSummary:
    domain_id: str
    per_class: dict[str, ClassSummary]
    free_memory_bytes: int
    queue_estimate_us: int
    max_trust: int


@dataclass(frozen=True, slots=True)
class Candidate:
    node_id: str
    realization_id: str
    warm: bool


class Broker:
    """Admits nodes, absorbs telemetry, and answers candidate/summary queries."""

    def __init__(self, catalog: CapabilityCatalog, topology: Topology, trust: TrustManager | None = None):
        self.catalog = catalog
        self.topology = topology
        self.trust = trust
        self.nodes: dict[str, NodeState] = {}
        self._footprint: dict[str, int] = {}
        self._summary_cache: dict[str, DomainSummary] = {}

    # -- admission ---------------------------------------------------------

    def register_node(self, profile: ResourceProfile) -> NodeState:
        if profile.node_id in self.nodes:
            raise DuplicateNode(profile.node_id)
        domain = self.topology.domains.get(profile.domain_id)
        if domain is None:
            raise UnknownDomain(profile.domain_id)
        if profile.trust < domain.min_trust:
            raise TrustBelowDomainFloor(
                f"node {profile.node_id} trust {profile.trust} < domain floor {domain.min_trust}"
            )
        state = NodeState(profile=profile)
        self.nodes[profile.node_id] = state
        self._invalidate(profile.domain_id)
        return state

    def node(self, node_id: str) -> NodeState:
        state = self.nodes.get(node_id)
        if state is None:
            raise UnknownNode(node_id)
        return state

    # -- residency ---------------------------------------------------------

    def footprint(self, realization_id: str) -> int:
        fp = self._footprint.get(realization_id)
        if fp is None:
            fp = self.catalog.footprint_bytes(realization_id)
            self._footprint[realization_id] = fp
        return fp

    def install(self, node_id: str, realization_id: str, available_at_us: int) -> None:
        state = self.node(node_id)
        if realization_id in state.residency:
            return
        fp = self.footprint(realization_id)
        if state.free_memory_bytes(self._residency_footprints(state)) < fp:
            raise MemoryError(f"node {node_id}: no room for {realization_id}")
        state.residency[realization_id] = Residency(realization_id, available_at_us)
        self._invalidate(state.profile.domain_id)

    def evict(self, node_id: str, realization_id: str) -> None:
        state = self.node(node_id)
        state.residency.pop(realization_id, None)
        self._invalidate(state.profile.domain_id)

    def _residency_footprints(self, state: NodeState) -> dict[str, int]:
        return {rid: self.footprint(rid) for rid in state.residency}

    def free_memory(self, node_id: str) -> int:
        state = self.node(node_id)
        return state.free_memory_bytes(self._residency_footprints(state))

    # -- telemetry ---------------------------------------------------------

    def update_telemetry(
        self,
        node_id: str,
        queued_work_us: int,
        free_memory_bytes: int,
        resident_realizations: tuple[str, ...] | list[str],
    ) -> None:
        state = self.node(node_id)
        if queued_work_us < 0:
            raise ValueError("queued_work_us must be >= 0")
        if free_memory_bytes > state.profile.capacity.memory_budget_bytes:
            raise ValueError("free memory exceeds memory budget")
        state.queued_work_us = queued_work_us
        state.residency = {
            rid: state.residency.get(rid, Residency(rid, 0)) for rid in resident_realizations
        }
        self._invalidate(state.profile.domain_id)

    def _invalidate(self, domain_id: str) -> None:
        self._summary_cache.pop(domain_id, None)

    def refresh_queue_telemetry(self, node_id: str, now: int) -> None:
        state = self.node(node_id)
        state.queued_work_us = state.live_queued_work_us(now)
        self._invalidate(state.profile.domain_id)

    # -- summaries ---------------------------------------------------------

    def summarize(self, domain_id: str, now: int = 0) -> DomainSummary:
        if domain_id not in self.topology.domains:
            raise UnknownDomain(domain_id)
        cached = self._summary_cache.get(domain_id)
        if cached is not None:
            return cached
        members = sorted(
            (s for s in self.nodes.values() if s.profile.domain_id == domain_id and s.online),
            key=lambda s: s.node_id,
        )
        per_class: dict[str, ClassSummary] = {}
        for class_name in sorted(self.catalog.classes):
            best_quality = 0
            warm = 0
            for state in members:
                for rid, res in state.residency.items():
                    if res.available_at_us > now or res.pending_eviction:
                        continue
                    variant = self.catalog.variant_of(rid)
                    if variant.parent_class != class_name:
                        continue
                    warm += 1
                    best_quality = max(best_quality, variant.quality)
            if warm:
                per_class[class_name] = ClassSummary(best_quality, warm)
        total_weight = sum(s.profile.capacity.max_concurrent for s in members)
        weighted = sum(s.queued_work_us * s.profile.capacity.max_concurrent for s in members)
        summary = DomainSummary(
            domain_id=domain_id,
            per_class=per_class,
            free_memory_bytes=sum(s.free_memory_bytes(self._residency_footprints(s)) for s in members),
            queue_estimate_us=weighted // total_weight if total_weight else 0,
            max_trust=max((s.profile.trust for s in members), default=0),
        )
        self._summary_cache[domain_id] = summary
        return summary

    # -- candidate lookup ---------------------------------------------------

    def _effective_trust(self, state: NodeState, now: int) -> int:
        if self.trust is None:
            return state.profile.trust
        return self.trust.effective_trust(state.node_id, now)

    def _in_scope(self, state: NodeState, policy: PolicyConstraint, origin_region: str) -> bool:
        loc = state.profile.locality
        if policy.allowed_domains is not None and state.profile.domain_id not in policy.allowed_domains:
            return False
        scope = policy.locality_scope
        if scope is LocalityScope.ANY or scope is LocalityScope.DOMAIN:
            return True
        if scope is LocalityScope.REGION:
            return loc.region == origin_region
        if scope is LocalityScope.NODE_LOCAL:
            return loc.tier is Tier.LOCAL and loc.region == origin_region
        return False

    def lookup_candidates(
        self,
        capability_class: str,
        quality_target: int,
        policy: PolicyConstraint,
        origin_region: str = "",
        now: int = 0,
        tiers: set[Tier] | None = None,
    ) -> list[Candidate]:
        """All (node, realization) pairs able to serve the request, warm-flagged.

        Cold candidates are nodes where the realization is not resident but
        fits in free memory; routing prices the activation. ``tiers``
        restricts cold placement targets (used by the cloud-only baseline).
        """
        realizations = [
            r
            for r in self.catalog.realizations_of_class(capability_class)
            if self.catalog.variant_of(r.realization_id).quality >= quality_target
            and not (self.trust is not None and self.trust.is_revoked(r.realization_id))
        ]
        if not realizations:
            return []
        # Domain summaries gate the per-node scan: skip domains whose
        # aggregate view cannot satisfy the request at all.
        viable_domains = set()
        for domain_id in sorted(self.topology.domains):
            summary = self.summarize(domain_id, now)
            if summary.max_trust >= policy.min_trust:
                viable_domains.add(domain_id)
        out: list[Candidate] = []
        for node_id in sorted(self.nodes):
            state = self.nodes[node_id]
            if not state.online or state.profile.domain_id not in viable_domains:
                continue
            if not self._in_scope(state, policy, origin_region):
                continue
            if self._effective_trust(state, now) < policy.min_trust:
                continue
            free = state.free_memory_bytes(self._residency_footprints(state))
            for realization in realizations:
                if realization.accelerator != state.profile.hardware.accelerator:
                    continue
                res = state.residency.get(realization.realization_id)
                if res is not None:
                    if res.pending_eviction:
                        continue
                    if res.available_at_us <= now:
                        out.append(Candidate(node_id, realization.realization_id, warm=True))
                    # Still loading: neither warm nor re-placeable.
                    continue
                if tiers is not None and state.profile.locality.tier not in tiers:
                    continue
                if free >= self.footprint(realization.realization_id):
                    out.append(Candidate(node_id, realization.realization_id, warm=False))
        return out
