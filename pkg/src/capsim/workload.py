"""Synthetic workload: per-region Poisson arrivals, Zipf class popularity,
geometric multi-turn sessions sharing a prefix, and policy-template mixes.

Determinism: one Mersenne Twister substream per region, seeded
``seed XOR fnv1a32(region_id)``; arrival times are the region's Poisson
points converted to integer microseconds (collisions bumped by 1 us so the
stream is strictly increasing per region).
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass, field

from .descriptors import PolicyConstraint, RequestDescriptor


def fnv1a32(text: str) -> int:
    h = 0x811C9DC5
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * 0x01000193) & 0xFFFFFFFF
    return h


@dataclass(frozen=True, slots=True)
class TokenDist:
    dist: str = "fixed"  # fixed | lognormal
    value: int = 1
    mu: float = 0.0
    sigma: float = 0.0

    def sample(self, rng: random.Random) -> int:
        if self.dist == "fixed":
            return max(1, self.value)
        return max(1, round(rng.lognormvariate(self.mu, self.sigma)))

    @classmethod
    def from_dict(cls, d: dict) -> "TokenDist":
        return cls(
            dist=d.get("dist", "fixed"),
            value=int(d.get("value", 1)),
            mu=float(d.get("mu", 0.0)),
            sigma=float(d.get("sigma", 0.0)),
        )


@dataclass(frozen=True, slots=True)
class PolicyTemplate:
    weight: float
    policy: PolicyConstraint
    quality_target: int = 1
    budget: int | None = None
    degradable: bool = False
    tenant: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyTemplate":
        return cls(
            weight=float(d.get("weight", 1.0)),
            policy=PolicyConstraint.from_dict(d),
            quality_target=int(d.get("quality_target", 1)),
            budget=d.get("budget"),
            degradable=bool(d.get("degradable", False)),
            tenant=d.get("tenant"),
        )


@dataclass(frozen=True, slots=True)
class RegionWorkload:
    region: str
    rate_per_s: float
    zipf_s: float
    classes: tuple[str, ...]  # popularity-rank order, most popular first
    session_turns_g: float = 1.0  # geometric success parameter; 1.0 = single-turn
    session_prefix_tokens: int = 0
    input_tokens: TokenDist = field(default_factory=TokenDist)
    output_tokens: TokenDist = field(default_factory=TokenDist)
    policy_mix: tuple[PolicyTemplate, ...] = ()

    @classmethod
    def from_dict(cls, d: dict) -> "RegionWorkload":
        session = d.get("session", {})
        mix = tuple(PolicyTemplate.from_dict(t) for t in d.get("policy_mix", [{}]))
        return cls(
            region=d["region"],
            rate_per_s=float(d.get("rate_per_s", 0.0)),
            zipf_s=float(d.get("zipf_s", 0.0)),
            classes=tuple(d.get("classes", [])),
            session_turns_g=float(session.get("turns_g", 1.0)),
            session_prefix_tokens=int(session.get("prefix_tokens", 0)),
            input_tokens=TokenDist.from_dict(d.get("input_tokens", {})),
            output_tokens=TokenDist.from_dict(d.get("output_tokens", {})),
            policy_mix=mix,
        )


@dataclass(frozen=True, slots=True)
class WorkloadSpec:
    regions: tuple[RegionWorkload, ...]

    @classmethod
    def from_dict(cls, d: dict) -> "WorkloadSpec":
        return cls(regions=tuple(RegionWorkload.from_dict(r) for r in d.get("regions", [])))


@dataclass(frozen=True, slots=True)
class Arrival:
    request: RequestDescriptor
    session_id: str
    turn_index: int
    total_turns: int
    prefix_tokens: int

    @property
    def final_turn(self) -> bool:
        return self.turn_index == self.total_turns


def _zipf_cdf(n: int, s: float) -> list[float]:
    weights = [1.0 / (k**s) for k in range(1, n + 1)]
    total = sum(weights)
    cdf = []
    acc = 0.0
    for w in weights:
        acc += w / total
        cdf.append(acc)
    return cdf


def _sample_index(cdf: list[float], u: float) -> int:
    for i, threshold in enumerate(cdf):
        if u < threshold:
            return i
    return len(cdf) - 1


def _geometric_turns(rng: random.Random, g: float) -> int:
    if g >= 1.0:
        return 1
    u = rng.random()
    return int(math.log(1.0 - u) / math.log(1.0 - g)) + 1


def session_prefix_digest(session_id: str, prefix_tokens: int) -> str:
    return hashlib.sha256(f"{session_id}|{prefix_tokens}".encode()).hexdigest()[:16]


def generate_region_arrivals(
    spec: RegionWorkload, duration_us: int, seed: int
) -> list[Arrival]:
    rng = random.Random(seed ^ fnv1a32(spec.region))
    if spec.rate_per_s <= 0 or not spec.classes:
        return []
    cdf = _zipf_cdf(len(spec.classes), spec.zipf_s)
    mix_weights = [t.weight for t in spec.policy_mix] or [1.0]
    mix_total = sum(mix_weights)
    mix_cdf = []
    acc = 0.0
    for w in mix_weights:
        acc += w / mix_total
        mix_cdf.append(acc)

    arrivals: list[Arrival] = []
    t_seconds = 0.0
    last_us = -1
    session_counter = 0
    open_session: dict | None = None  # remaining turns of the active session
    n = 0
    while True:
        t_seconds += rng.expovariate(spec.rate_per_s)
        t_us = int(t_seconds * 1_000_000)
        if t_us >= duration_us:
            break
        if t_us <= last_us:
            t_us = last_us + 1
        last_us = t_us

        if open_session is None or open_session["remaining"] == 0:
            session_counter += 1
            session_id = f"{spec.region}-s{session_counter:05d}"
            cls_idx = _sample_index(cdf, rng.random())
            template = (
                spec.policy_mix[_sample_index(mix_cdf, rng.random())]
                if spec.policy_mix
                else PolicyTemplate(weight=1.0, policy=PolicyConstraint())
            )
            open_session = {
                "session_id": session_id,
                "capability_class": spec.classes[cls_idx],
                "template": template,
                "total": _geometric_turns(rng, spec.session_turns_g),
                "remaining": 0,  # set below
                "turn": 0,
            }
            open_session["remaining"] = open_session["total"]

        open_session["turn"] += 1
        open_session["remaining"] -= 1
        template = open_session["template"]
        fresh = spec.input_tokens.sample(rng)
        out_tokens = spec.output_tokens.sample(rng)
        session_id = open_session["session_id"]
        affinity = None
        if spec.session_prefix_tokens > 0:
            affinity = f"{session_id}:{session_prefix_digest(session_id, spec.session_prefix_tokens)}"
        n += 1
        request = RequestDescriptor(
            request_id=f"{spec.region}-{n:06d}",
            capability_class=open_session["capability_class"],
            quality_target=template.quality_target,
            policy=template.policy,
            affinity_token=affinity,
            budget=template.budget,
            origin_region=spec.region,
            input_tokens=spec.session_prefix_tokens + fresh,
            output_tokens=out_tokens,
            arrival_time=t_us,
            degradable=template.degradable,
            tenant=template.tenant,
        )
        arrivals.append(
            Arrival(
                request=request,
                session_id=session_id,
                turn_index=open_session["turn"],
                total_turns=open_session["total"],
                prefix_tokens=spec.session_prefix_tokens,
            )
        )
    return arrivals


def generate_arrivals(spec: WorkloadSpec, duration_us: int, seed: int) -> list[Arrival]:
    """All regions' arrivals merged into one stream ordered by (time, region)."""
    merged: list[Arrival] = []
    for region in spec.regions:
        merged.extend(generate_region_arrivals(region, duration_us, seed))
    merged.sort(key=lambda a: (a.request.arrival_time, a.request.origin_region, a.request.request_id))
    return merged
