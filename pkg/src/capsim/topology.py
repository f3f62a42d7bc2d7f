"""Hierarchical substrate: nodes, domains, regions, links, and transfer timing.

The topology is immutable after scenario load. Vertices are node ids plus one
implicit gateway vertex per region, named ``region:<region_id>``, where client
traffic enters. Routing between vertices is static shortest propagation delay
(Dijkstra), with ties broken by the lexicographically smallest link-id
sequence so paths are stable across runs.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from fractions import Fraction
from math import ceil

from .descriptors import ResourceProfile, Tier, fraction_str, parse_fraction


class Unreachable(Exception):
    """No path exists between the requested endpoints."""


def region_vertex(region_id: str) -> str:
    return f"region:{region_id}"


@dataclass(frozen=True, slots=True)
class Link:
    link_id: str
    src: str  # node id or region gateway vertex
    dst: str
    propagation_delay_us: int
    bandwidth_bytes_per_us: Fraction
    is_core: bool = False

    def to_dict(self) -> dict:
        return {
            "link_id": self.link_id,
            "src": self.src,
            "dst": self.dst,
            "propagation_delay_us": self.propagation_delay_us,
            "bandwidth_bytes_per_us": fraction_str(self.bandwidth_bytes_per_us),
            "is_core": self.is_core,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Link":
        return cls(
            link_id=d["link_id"],
            src=d["src"],
            dst=d["dst"],
            propagation_delay_us=d.get("propagation_delay_us", 0),
            bandwidth_bytes_per_us=parse_fraction(d.get("bandwidth_bytes_per_us", 1)),
            is_core=d.get("is_core", False),
        )


@dataclass(frozen=True, slots=True)
class Node:
    profile: ResourceProfile
    online: bool = True

    @property
    def node_id(self) -> str:
        return self.profile.node_id


@dataclass(frozen=True, slots=True)
class Domain:
    domain_id: str
    min_trust: int = 0  # admission floor for hosted nodes
    operator: str = ""


class Topology:
    def __init__(self, nodes: list[Node], domains: list[Domain], links: list[Link]):
        self.nodes: dict[str, Node] = {}
        for node in nodes:
            if node.node_id in self.nodes:
                raise ValueError(f"duplicate node_id {node.node_id}")
            self.nodes[node.node_id] = node
        self.domains: dict[str, Domain] = {d.domain_id: d for d in domains}
        self.links: dict[str, Link] = {}
        self._adjacency: dict[str, list[Link]] = {}
        for link in links:
            if link.link_id in self.links:
                raise ValueError(f"duplicate link_id {link.link_id}")
            if link.propagation_delay_us < 0:
                raise ValueError(f"link {link.link_id}: negative delay")
            if link.bandwidth_bytes_per_us <= 0:
                raise ValueError(f"link {link.link_id}: bandwidth must be > 0")
            self.links[link.link_id] = link
            self._adjacency.setdefault(link.src, []).append(link)
            self._adjacency.setdefault(link.dst, []).append(link)
        for peers in self._adjacency.values():
            peers.sort(key=lambda l: l.link_id)
        self._path_cache: dict[tuple[str, str], tuple[Link, ...]] = {}
        self._route_cache: dict[tuple[str, str], tuple[int, int, int, int]] = {}

    @property
    def regions(self) -> set[str]:
        return {n.profile.locality.region for n in self.nodes.values()}

    def nodes_in_tier(self, tier: Tier) -> list[Node]:
        return [n for n in self.nodes.values() if n.profile.locality.tier is tier]

    def path(self, src: str, dst: str) -> tuple[Link, ...]:
        """Minimum-propagation-delay link sequence from src to dst.

        ``src`` may be a node id or a ``region:<id>`` gateway vertex. Ties on
        total delay resolve to the smallest lexicographic link-id sequence.
        Raises Unreachable when the endpoints are not connected.
        """
        if src == dst:
            return ()
        cached = self._path_cache.get((src, dst))
        if cached is not None:
            return cached
        if src not in self._adjacency and src not in self.nodes:
            raise Unreachable(f"unknown vertex {src!r}")
        # Heap entries order by (delay, link-id sequence): the first time a
        # vertex is settled it holds the delay-minimal, lexicographically
        # smallest path.
        heap: list[tuple[int, tuple[str, ...], str]] = [(0, (), src)]
        settled: set[str] = set()
        best: dict[str, tuple[Link, ...]] = {src: ()}
        while heap:
            delay, ids, vertex = heapq.heappop(heap)
            if vertex in settled:
                continue
            settled.add(vertex)
            if vertex == dst:
                path = best[vertex]
                self._path_cache[(src, dst)] = path
                return path
            for link in self._adjacency.get(vertex, ()):  # sorted by link_id
                other = link.dst if link.src == vertex else link.src
                if other in settled:
                    continue
                candidate = best[vertex] + (link,)
                heapq.heappush(heap, (delay + link.propagation_delay_us, ids + (link.link_id,), other))
                prev = best.get(other)
                if prev is None or _path_key(candidate) < _path_key(prev):
                    best[other] = candidate
        raise Unreachable(f"no path from {src!r} to {dst!r}")

    def path_delay_us(self, path: tuple[Link, ...]) -> int:
        return sum(link.propagation_delay_us for link in path)

    def transfer_time_us(self, path: tuple[Link, ...], payload_bytes: int) -> int:
        """Propagation along the path plus serialization at the bottleneck link.

        Empty paths (same endpoint) cost 0 regardless of payload.
        """
        if payload_bytes < 0:
            raise ValueError("payload_bytes must be >= 0")
        if not path:
            return 0
        delay = self.path_delay_us(path)
        if payload_bytes == 0:
            return delay
        bottleneck = min(link.bandwidth_bytes_per_us for link in path)
        return delay + ceil(Fraction(payload_bytes) / bottleneck)

    def core_bytes(self, path: tuple[Link, ...], payload_bytes: int) -> int:
        """Bytes attributed to wide-area links for WAN-traffic accounting."""
        return sum(payload_bytes for link in path if link.is_core)

    def _route_info(self, src: str, dst: str) -> tuple[int, int, int, int]:
        """(delay_us, bottleneck numerator, bottleneck denominator, core link count)."""
        cached = self._route_cache.get((src, dst))
        if cached is not None:
            return cached
        path = self.path(src, dst)
        delay = self.path_delay_us(path)
        if path:
            bottleneck = min(link.bandwidth_bytes_per_us for link in path)
            info = (delay, bottleneck.numerator, bottleneck.denominator, sum(1 for l in path if l.is_core))
        else:
            info = (0, 1, 0, 0)  # denominator 0 marks the empty path
        self._route_cache[(src, dst)] = info
        return info

    def transfer_between(self, src: str, dst: str, payload_bytes: int) -> tuple[int, int]:
        """Convenience: (transfer_time_us, core_bytes) for src -> dst."""
        delay, bw_num, bw_den, core_links = self._route_info(src, dst)
        if bw_den == 0:
            return 0, 0
        serialization = -(-payload_bytes * bw_den // bw_num) if payload_bytes else 0
        return delay + serialization, payload_bytes * core_links


def _path_key(path: tuple[Link, ...]) -> tuple[int, tuple[str, ...]]:
    return (sum(l.propagation_delay_us for l in path), tuple(l.link_id for l in path))
