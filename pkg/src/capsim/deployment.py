"""Demand-driven capability placement: a constrained minimization solved per
planning epoch by greedy density ascent plus local search, with an exhaustive
enumerator as the small-instance oracle.

The objective prices expected service latency (via the routing scorer against
an idle substrate), activation and artifact-transfer costs for not-yet-resident
realizations, and a soft trust-risk count; hard trust violations never become
candidate assignments. Already-resident realizations re-place at zero cost,
so assignments whose demand has vanished drop out of the solution and the
replan diff schedules their eviction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .descriptors import PlanPhase, PlanStage, PolicyConstraint, RequestDescriptor, parse_fraction
from .routing import ExecutionPlan, Router
from .topology import Unreachable

ENUMERATION_BOUND = 20


class InfeasiblePlacement(Exception):
    pass


class InstanceTooLarge(Exception):
    pass


@dataclass(frozen=True, slots=True)
class DemandCell:
    capability_class: str
    region: str
    quality: int
    count: int
    input_tokens: int
    output_tokens: int


@dataclass(frozen=True, slots=True)
class PlacementPair:
    realization_id: str
    node_id: str
    memory_bytes: int          # m_c, counted against the node budget
    deploy_cost: Fraction      # load time + storage carry, 0 when resident
    net_cost_us: int           # artifact transfer from the repository, 0 when resident
    risk: int                  # 1 when node trust misses the soft preferred trust
    resident: bool

    @property
    def key(self) -> tuple[str, str]:
        return (self.realization_id, self.node_id)


@dataclass(slots=True)
class PlacementProblem:
    cells: tuple[DemandCell, ...]
    pairs: tuple[PlacementPair, ...]
    node_budget: dict[str, int]
    lambda_deploy: Fraction
    mu_net: Fraction
    nu_risk: Fraction
    p_miss_us: int
    # latency[i][j]: J of serving cell i on pair j against an idle substrate,
    # or None when the pair cannot serve the cell.
    latency: list[list[Fraction | None]] = field(default_factory=list)
    # cell_options[i]: (latency, pair index) ascending — first member of a
    # placement encountered in this order is the cell's cheapest plan.
    cell_options: list[list[tuple[Fraction, int]]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.cell_options and self.latency:
            self.cell_options = [
                sorted(
                    ((lat, j) for j, lat in enumerate(row) if lat is not None),
                    key=lambda t: (t[0], t[1]),
                )
                for row in self.latency
            ]

    def pair_index(self) -> dict[tuple[str, str], int]:
        return {p.key: i for i, p in enumerate(self.pairs)}


Placement = frozenset[tuple[str, str]]


def _memory_ok(problem: PlacementProblem, mask: int) -> bool:
    used: dict[str, int] = {}
    for j, pair in enumerate(problem.pairs):
        if mask >> j & 1:
            used[pair.node_id] = used.get(pair.node_id, 0) + pair.memory_bytes
            if used[pair.node_id] > problem.node_budget.get(pair.node_id, 0):
                return False
    return True


def _objective_mask(problem: PlacementProblem, mask: int) -> Fraction:
    total = Fraction(0)
    for i, cell in enumerate(problem.cells):
        best: Fraction | None = None
        for lat, j in problem.cell_options[i]:
            if mask >> j & 1:
                best = lat
                break
        total += cell.count * (best if best is not None else Fraction(problem.p_miss_us))
    deploy = Fraction(0)
    net = 0
    risk = 0
    for j, pair in enumerate(problem.pairs):
        if mask >> j & 1:
            deploy += pair.deploy_cost
            net += pair.net_cost_us
            risk += pair.risk
    return total + problem.lambda_deploy * deploy + problem.mu_net * net + problem.nu_risk * risk


def _mask_of(problem: PlacementProblem, placement: Placement) -> int:
    index = problem.pair_index()
    mask = 0
    for key in placement:
        j = index.get(key)
        if j is None:
            raise InfeasiblePlacement(f"assignment {key} is not a candidate pair")
        mask |= 1 << j
    return mask


def _placement_of(problem: PlacementProblem, mask: int) -> Placement:
    return frozenset(p.key for j, p in enumerate(problem.pairs) if mask >> j & 1)


def objective(problem: PlacementProblem, placement: Placement) -> Fraction:
    """Total placement cost: demand latency + weighted deploy/net/risk terms."""
    mask = _mask_of(problem, placement)
    if not _memory_ok(problem, mask):
        raise InfeasiblePlacement("memory budget exceeded")
    return _objective_mask(problem, mask)


def solve_greedy(problem: PlacementProblem) -> Placement:
    """Density-greedy: repeatedly add the assignment with the best objective
    decrease per byte of footprint; stop when nothing strictly improves."""
    mask = 0
    current = _objective_mask(problem, mask)
    order = sorted(range(len(problem.pairs)), key=lambda j: problem.pairs[j].key)
    while True:
        best_j = None
        best_density: Fraction | None = None
        best_obj: Fraction | None = None
        for j in order:
            if mask >> j & 1:
                continue
            trial = mask | 1 << j
            if not _memory_ok(problem, trial):
                continue
            obj = _objective_mask(problem, trial)
            gain = current - obj
            if gain <= 0:
                continue
            density = gain / max(1, problem.pairs[j].memory_bytes)
            if best_density is None or density > best_density:
                best_j, best_density, best_obj = j, density, obj
        if best_j is None:
            return _placement_of(problem, mask)
        mask |= 1 << best_j
        current = best_obj


def improve_local_search(problem: PlacementProblem, placement: Placement, max_rounds: int) -> Placement:
    """Best-improvement add/remove/swap moves; accepts only strict decreases."""
    mask = _mask_of(problem, placement)
    if not _memory_ok(problem, mask):
        raise InfeasiblePlacement("memory budget exceeded")
    current = _objective_mask(problem, mask)
    n = len(problem.pairs)
    for _ in range(max_rounds):
        best_mask = None
        best_obj = current
        for j in range(n):
            trial = mask ^ 1 << j  # add when absent, remove when present
            if not _memory_ok(problem, trial):
                continue
            obj = _objective_mask(problem, trial)
            if obj < best_obj:
                best_mask, best_obj = trial, obj
        for j in range(n):
            if not (mask >> j & 1):
                continue
            for k in range(n):
                if mask >> k & 1 or k == j:
                    continue
                trial = (mask & ~(1 << j)) | 1 << k
                if not _memory_ok(problem, trial):
                    continue
                obj = _objective_mask(problem, trial)
                if obj < best_obj:
                    best_mask, best_obj = trial, obj
        if best_mask is None:
            break
        mask, current = best_mask, best_obj
    return _placement_of(problem, mask)


def solve_exact(problem: PlacementProblem) -> Placement:
    """Exhaustive oracle over all feasible assignment vectors.

    Bounded to |pairs| <= 20; ties on objective resolve to the
    lexicographically smallest assignment bitvector.
    """
    n = len(problem.pairs)
    if n > ENUMERATION_BOUND:
        raise InstanceTooLarge(f"{n} candidate assignments exceed the bound of {ENUMERATION_BOUND}")
    best_mask = 0
    best_obj = _objective_mask(problem, 0)

    def dfs(j: int, mask: int) -> None:
        nonlocal best_mask, best_obj
        if j == n:
            obj = _objective_mask(problem, mask)
            if obj < best_obj:
                best_mask, best_obj = mask, obj
            return
        dfs(j + 1, mask)  # exclude-first yields smaller bitvectors first
        trial = mask | 1 << j
        if _memory_ok(problem, trial):
            dfs(j + 1, trial)

    dfs(0, 0)
    return _placement_of(problem, best_mask)


def build_problem(
    router: Router,
    cells: list[DemandCell],
    weights: dict,
    residency: dict[str, set[str]],
    now: int = 0,
) -> PlacementProblem:
    """Assemble the placement instance against the live broker and topology.

    ``residency`` maps node_id -> realization ids currently resident (their
    re-placement is free). Hard trust violations and accelerator mismatches
    never become candidate pairs.
    """
    broker = router.broker
    catalog = broker.catalog
    lambda_deploy = parse_fraction(weights.get("lambda", 1))
    mu_net = parse_fraction(weights.get("mu", 1))
    nu_risk = parse_fraction(weights.get("nu", 1))
    p_miss_us = int(weights.get("p_miss_us", 10_000_000))
    storage_unit_cost = parse_fraction(weights.get("storage_unit_cost", 0))

    classes = sorted({c.capability_class for c in cells})
    pairs: list[PlacementPair] = []
    for class_name in classes:
        for realization in catalog.realizations_of_class(class_name):
            if router.trust is not None and router.trust.is_revoked(realization.realization_id):
                continue
            variant = catalog.variant_of(realization.realization_id)
            for node_id in sorted(broker.nodes):
                state = broker.nodes[node_id]
                if not state.online:
                    continue
                if router.placement_tiers is not None and state.profile.locality.tier not in router.placement_tiers:
                    continue
                if state.profile.hardware.accelerator != realization.accelerator:
                    continue
                if state.profile.trust < variant.security.min_trust:
                    continue  # hard violation: never a candidate
                resident = realization.realization_id in residency.get(node_id, set())
                if resident:
                    deploy = Fraction(0)
                    net = 0
                else:
                    deploy = realization.load_time_us + storage_unit_cost * realization.artifact_size_bytes
                    if router.artifact_repository is not None:
                        net, _ = router.topology.transfer_between(
                            router.artifact_repository, node_id, realization.artifact_size_bytes
                        )
                    else:
                        net = 0
                pairs.append(
                    PlacementPair(
                        realization_id=realization.realization_id,
                        node_id=node_id,
                        memory_bytes=broker.footprint(realization.realization_id),
                        deploy_cost=deploy,
                        net_cost_us=net,
                        risk=1 if state.profile.trust < variant.security.preferred_trust else 0,
                        resident=resident,
                    )
                )
    pairs.sort(key=lambda p: p.key)

    latency: list[list[Fraction | None]] = []
    for cell in cells:
        row: list[Fraction | None] = []
        probe = RequestDescriptor(
            request_id=f"plan-{cell.capability_class}-{cell.region}-{cell.quality}",
            capability_class=cell.capability_class,
            quality_target=cell.quality,
            policy=PolicyConstraint(),
            origin_region=cell.region,
            input_tokens=cell.input_tokens,
            output_tokens=cell.output_tokens,
        )
        for pair in pairs:
            variant = catalog.variant_of(pair.realization_id)
            if variant.parent_class != cell.capability_class or variant.quality < cell.quality:
                row.append(None)
                continue
            plan = ExecutionPlan.of((PlanStage(pair.node_id, pair.realization_id, PlanPhase.FULL),))
            try:
                scored = router.score(plan, probe, now, warm_flags=(True,), zero_queue=True)
            except Unreachable:
                row.append(None)  # node cannot serve this region at all
                continue
            row.append(scored.cost.total)
        latency.append(row)

    return PlacementProblem(
        cells=tuple(cells),
        pairs=tuple(pairs),
        node_budget={
            node_id: broker.nodes[node_id].profile.capacity.memory_budget_bytes
            for node_id in sorted(broker.nodes)
        },
        lambda_deploy=lambda_deploy,
        mu_net=mu_net,
        nu_risk=nu_risk,
        p_miss_us=p_miss_us,
        latency=latency,
    )


def cells_from_requests(requests: list[RequestDescriptor], start_us: int, end_us: int) -> list[DemandCell]:
    """Aggregate an arrival window into demand cells with mean token sizes."""
    grouped: dict[tuple[str, str, int], list[RequestDescriptor]] = {}
    for request in requests:
        if start_us <= request.arrival_time < end_us:
            key = (request.capability_class, request.origin_region, request.quality_target)
            grouped.setdefault(key, []).append(request)
    cells = []
    for (cls, region, quality) in sorted(grouped):
        members = grouped[(cls, region, quality)]
        count = len(members)
        cells.append(
            DemandCell(
                capability_class=cls,
                region=region,
                quality=quality,
                count=count,
                input_tokens=sum(r.input_tokens for r in members) // count,
                output_tokens=max(1, sum(r.output_tokens for r in members) // count),
            )
        )
    return cells


@dataclass(frozen=True, slots=True)
class PlacementDelta:
    loads: tuple[tuple[str, str], ...]      # (realization_id, node_id) to activate
    evictions: tuple[tuple[str, str], ...]  # (realization_id, node_id) to withdraw


def plan_delta(solution: Placement, residency: dict[str, set[str]]) -> PlacementDelta:
    current = {(rid, node_id) for node_id, rids in residency.items() for rid in rids}
    loads = tuple(sorted(solution - current))
    evictions = tuple(sorted(current - solution))
    return PlacementDelta(loads=loads, evictions=evictions)


def solve(problem: PlacementProblem, local_search_rounds: int = 8) -> Placement:
    return improve_local_search(problem, solve_greedy(problem), local_search_rounds)
