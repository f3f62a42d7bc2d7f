"""Scenario files: one JSON document carries topology, catalog, placement,
workload, weights, cache/deployment config, and trust scripts.

``load`` surfaces JSON syntax errors with line/position; ``validate`` returns
referential and invariant errors as field-path strings, so a scenario either
parses and validates or the CLI reports exactly what is wrong.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Any

from .descriptors import (
    Capacity,
    CapabilityDescriptor,
    CapabilityRealization,
    CapabilityVariant,
    Hardware,
    Locality,
    NodeDynamicState,
    RequestDescriptor,
    ResourceProfile,
    Tier,
    parse_fraction,
    validate_descriptor,
)
from .topology import Domain, Link, Node, Topology, region_vertex
from .workload import WorkloadSpec


class ScenarioParseError(Exception):
    pass


@dataclass(slots=True)
class ScenarioNode:
    profile: ResourceProfile
    cache_capacity_bytes: int


@dataclass(slots=True)
class TrustScript:
    attestations: list[dict] = dc_field(default_factory=list)
    revocations: list[dict] = dc_field(default_factory=list)


@dataclass(slots=True)
class ScriptedRequest:
    """A request pinned in the scenario file, with optional session metadata."""

    request: RequestDescriptor
    session_id: str
    turn_index: int = 1
    total_turns: int = 1
    prefix_tokens: int = 0

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ScriptedRequest":
        session = d.get("session", {})
        request = RequestDescriptor.from_dict(d)
        return cls(
            request=request,
            session_id=session.get("session_id", request.request_id),
            turn_index=int(session.get("turn_index", 1)),
            total_turns=int(session.get("total_turns", 1)),
            prefix_tokens=int(session.get("prefix_tokens", 0)),
        )


@dataclass(slots=True)
class Scenario:
    name: str
    seed: int
    duration_us: int
    bytes_per_token: int
    artifact_repository: str | None
    domains: list[Domain]
    nodes: list[ScenarioNode]
    links: list[Link]
    classes: list[CapabilityDescriptor]
    variants: list[CapabilityVariant]
    realizations: list[CapabilityRealization]
    initial_placement: list[tuple[str, str]]  # (realization_id, node_id)
    weights: dict[str, Any]
    cache_config: dict[str, Any]
    deployment_config: dict[str, Any]
    routing_config: dict[str, Any]
    workload: WorkloadSpec
    scripted_requests: list[ScriptedRequest]
    trust_script: TrustScript
    node_events: list[dict]
    digest: str = ""

    # -- construction --------------------------------------------------------

    @classmethod
    def from_dict(cls, d: dict[str, Any], digest: str = "") -> "Scenario":
        topo = d.get("topology", {})
        catalog = d.get("catalog", {})
        classes: list[CapabilityDescriptor] = []
        variants: list[CapabilityVariant] = []
        realizations: list[CapabilityRealization] = []
        for cls_d in catalog.get("classes", []):
            classes.append(CapabilityDescriptor.from_dict(cls_d))
            for var_d in cls_d.get("variants", []):
                var_d = dict(var_d)
                var_d.setdefault("parent_class", cls_d["name"])
                var_d.setdefault("security", cls_d.get("security", {}))
                variants.append(CapabilityVariant.from_dict(var_d))
                for real_d in var_d.get("realizations", []):
                    real_d = dict(real_d)
                    real_d.setdefault("variant_id", var_d["variant_id"])
                    realizations.append(CapabilityRealization.from_dict(real_d))
        nodes = [_parse_node(nd) for nd in topo.get("nodes", [])]
        trust_d = d.get("trust_script", {})
        return cls(
            name=d.get("name", "scenario"),
            seed=int(d.get("seed", 0)),
            duration_us=int(d.get("duration_us", 1_000_000)),
            bytes_per_token=int(d.get("bytes_per_token", 4)),
            artifact_repository=topo.get("artifact_repository"),
            domains=[
                Domain(dd["domain_id"], dd.get("min_trust", 0), dd.get("operator", ""))
                for dd in topo.get("domains", [])
            ],
            nodes=nodes,
            links=[Link.from_dict(ld) for ld in topo.get("links", [])],
            classes=classes,
            variants=variants,
            realizations=realizations,
            initial_placement=[(p[0], p[1]) for p in d.get("initial_placement", [])],
            weights=dict(d.get("weights", {})),
            cache_config=dict(d.get("cache", {})),
            deployment_config=dict(d.get("deployment", {})),
            routing_config=dict(d.get("routing", {})),
            workload=WorkloadSpec.from_dict(d.get("workload", {})),
            scripted_requests=[ScriptedRequest.from_dict(r) for r in d.get("requests", [])],
            trust_script=TrustScript(
                attestations=list(trust_d.get("attestations", [])),
                revocations=list(trust_d.get("revocations", [])),
            ),
            node_events=list(d.get("node_events", [])),
            digest=digest,
        )

    @classmethod
    def load(cls, path: str | Path) -> "Scenario":
        raw = Path(path).read_bytes()
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ScenarioParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
        return cls.from_dict(data, digest=hashlib.sha256(raw).hexdigest())

    # -- validation ------------------------------------------------------------

    def validate(self) -> list[str]:
        errors: list[str] = []
        if self.duration_us <= 0:
            errors.append("duration_us: must be > 0")
        if self.bytes_per_token < 0:
            errors.append("bytes_per_token: must be >= 0")

        policy = self.cache_config.get("eviction_policy", "benefit")
        if policy not in ("benefit", "lru"):
            errors.append(f"cache.eviction_policy: unknown policy {policy!r}")

        domain_ids = {d.domain_id for d in self.domains}
        node_ids = set()
        regions = set()
        for i, snode in enumerate(self.nodes):
            prefix = f"topology.nodes[{i}]"
            profile = snode.profile
            if profile.node_id in node_ids:
                errors.append(f"{prefix}.node_id: duplicate {profile.node_id}")
            node_ids.add(profile.node_id)
            regions.add(profile.locality.region)
            if profile.domain_id not in domain_ids:
                errors.append(f"{prefix}.domain_id: unknown domain {profile.domain_id}")
            if profile.hardware.speed_factor <= 0:
                errors.append(f"{prefix}.speed_factor: must be > 0")
            if snode.cache_capacity_bytes < 0:
                errors.append(f"{prefix}.cache_capacity_bytes: must be >= 0")
            for violation in validate_descriptor(profile):
                errors.append(f"{prefix}.{violation}")

        vertices = node_ids | {region_vertex(r) for r in regions}
        link_ids = set()
        for i, link in enumerate(self.links):
            prefix = f"topology.links[{i}]"
            if link.link_id in link_ids:
                errors.append(f"{prefix}.link_id: duplicate {link.link_id}")
            link_ids.add(link.link_id)
            for end, value in (("src", link.src), ("dst", link.dst)):
                if value not in vertices:
                    errors.append(f"{prefix}.{end}: unknown vertex {value}")
            if link.propagation_delay_us < 0:
                errors.append(f"{prefix}.propagation_delay_us: must be >= 0")
            if link.bandwidth_bytes_per_us <= 0:
                errors.append(f"{prefix}.bandwidth_bytes_per_us: must be > 0")

        if self.artifact_repository is not None and self.artifact_repository not in node_ids:
            errors.append(f"topology.artifact_repository: unknown node {self.artifact_repository}")

        class_names = set()
        for i, cd in enumerate(self.classes):
            if cd.name in class_names:
                errors.append(f"catalog.classes[{i}].name: duplicate {cd.name}")
            class_names.add(cd.name)
            for violation in validate_descriptor(cd):
                errors.append(f"catalog.classes[{i}].{violation}")
        variant_ids = set()
        for i, var in enumerate(self.variants):
            if var.variant_id in variant_ids:
                errors.append(f"catalog.variants[{i}].variant_id: duplicate {var.variant_id}")
            variant_ids.add(var.variant_id)
            if var.parent_class not in class_names:
                errors.append(f"catalog.variants[{i}].parent_class: unknown class {var.parent_class}")
            for violation in validate_descriptor(var):
                errors.append(f"catalog.variants[{i}].{violation}")
        realization_ids = set()
        for i, real in enumerate(self.realizations):
            if real.realization_id in realization_ids:
                errors.append(f"catalog.realizations[{i}].realization_id: duplicate {real.realization_id}")
            realization_ids.add(real.realization_id)
            if real.variant_id not in variant_ids:
                errors.append(f"catalog.realizations[{i}].variant_id: unknown variant {real.variant_id}")
            for violation in validate_descriptor(real):
                errors.append(f"catalog.realizations[{i}].{violation}")

        profiles = {s.profile.node_id: s.profile for s in self.nodes}
        placed: dict[str, int] = {}
        realization_by_id = {r.realization_id: r for r in self.realizations}
        for i, (rid, node_id) in enumerate(self.initial_placement):
            prefix = f"initial_placement[{i}]"
            if rid not in realization_ids:
                errors.append(f"{prefix}: unknown realization {rid}")
                continue
            if node_id not in node_ids:
                errors.append(f"{prefix}: unknown node {node_id}")
                continue
            profile = profiles[node_id]
            realization = realization_by_id[rid]
            if realization.accelerator != profile.hardware.accelerator:
                errors.append(f"{prefix}: accelerator mismatch {realization.accelerator} on {node_id}")
            placed[node_id] = placed.get(node_id, 0) + realization.artifact_size_bytes
            if placed[node_id] > profile.capacity.memory_budget_bytes:
                errors.append(f"{prefix}: memory budget exceeded on {node_id}")

        for i, region in enumerate(self.workload.regions):
            prefix = f"workload.regions[{i}]"
            if region.rate_per_s < 0:
                errors.append(f"{prefix}.rate_per_s: must be >= 0")
            if region.zipf_s < 0:
                errors.append(f"{prefix}.zipf_s: must be >= 0")
            if not 0 < region.session_turns_g <= 1:
                errors.append(f"{prefix}.session.turns_g: must be in (0, 1]")
            for cname in region.classes:
                if cname not in class_names:
                    errors.append(f"{prefix}.classes: unknown class {cname}")
            if region.rate_per_s > 0 and not region.classes:
                errors.append(f"{prefix}.classes: required when rate_per_s > 0")

        for i, scripted in enumerate(self.scripted_requests):
            request = scripted.request
            for violation in validate_descriptor(request):
                errors.append(f"requests[{i}].{violation}")
            if request.capability_class not in class_names:
                errors.append(f"requests[{i}].capability_class: unknown class {request.capability_class}")
            if not 1 <= scripted.turn_index <= scripted.total_turns:
                errors.append(f"requests[{i}].session.turn_index: outside 1..total_turns")
            if scripted.prefix_tokens > request.input_tokens:
                errors.append(f"requests[{i}].session.prefix_tokens: exceeds input_tokens")

        for i, att in enumerate(self.trust_script.attestations):
            prefix = f"trust_script.attestations[{i}]"
            node_id = att.get("node_id")
            if node_id not in node_ids:
                errors.append(f"{prefix}.node_id: unknown node {node_id}")
                continue
            level = att.get("level", 0)
            if not 0 <= level <= 3:
                errors.append(f"{prefix}.level: must be in [0, 3]")
            elif level > profiles[node_id].trust:
                errors.append(f"{prefix}.level: exceeds node claimed trust {profiles[node_id].trust}")
        for i, rev in enumerate(self.trust_script.revocations):
            if rev.get("realization_id") not in realization_ids:
                errors.append(f"trust_script.revocations[{i}].realization_id: unknown realization")
        for i, ev in enumerate(self.node_events):
            if ev.get("node_id") not in node_ids:
                errors.append(f"node_events[{i}].node_id: unknown node")

        return errors

    def build_topology(self) -> Topology:
        return Topology(
            nodes=[Node(profile=s.profile) for s in self.nodes],
            domains=self.domains,
            links=self.links,
        )


def _parse_node(nd: dict[str, Any]) -> ScenarioNode:
    memory_budget = int(nd.get("memory_budget_bytes", 0))
    profile = ResourceProfile(
        node_id=nd["node_id"],
        domain_id=nd.get("domain_id", ""),
        hardware=Hardware(
            accelerator=nd.get("accelerator", "cpu"),
            speed_factor=parse_fraction(nd.get("speed_factor", 1)),
            memory_bytes=memory_budget,
            storage_bytes=int(nd.get("storage_bytes", 0)),
        ),
        runtime=tuple(sorted(nd.get("runtimes", ["std"]))),
        capacity=Capacity(
            max_concurrent=int(nd.get("max_concurrent", 1)),
            memory_budget_bytes=memory_budget,
            admission_cap=int(nd.get("admission_cap", 16)),
        ),
        state=NodeDynamicState(free_memory_bytes=memory_budget),
        locality=Locality(region=nd.get("region", ""), tier=Tier(nd.get("tier", "cloud"))),
        trust=int(nd.get("trust", 0)),
    )
    return ScenarioNode(profile=profile, cache_capacity_bytes=int(nd.get("cache_capacity_bytes", 0)))
