"""Trust management: attestation levels, lineage revocation, dispatch-time
verdicts, and the append-only execution receipt log.

Attestation is simulated: levels are asserted by the scenario and expire;
an expired attestation demotes the node's effective trust to 0 until renewed.
Verdicts re-validate trust at dispatch time because it may have changed
between plan selection and execution.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from .descriptors import (
    REASON_LINEAGE_REVOKED,
    REASON_TRUST_EXPIRED,
    ExecutionReceipt,
    PlanStage,
    RequestDescriptor,
    to_canonical_json,
)


class UnknownRealization(Exception):
    pass


@dataclass(frozen=True, slots=True)
class AttestationRecord:
    node_id: str
    level: int
    issue_time_us: int
    validity_window_us: int | None = None  # None = never expires

    def valid_at(self, now: int) -> bool:
        if now < self.issue_time_us:
            return False
        if self.validity_window_us is None:
            return True
        return now < self.issue_time_us + self.validity_window_us


@dataclass(slots=True)
class LineageRecord:
    realization_id: str
    chain_digests: tuple[str, ...]
    revoked: bool = False


def lineage_digest(lineage: tuple[tuple[str, str], ...]) -> str:
    payload = json.dumps([list(p) for p in lineage], separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


class TrustManager:
    def __init__(self) -> None:
        self._attestations: dict[str, list[AttestationRecord]] = {}
        self._lineage: dict[str, LineageRecord] = {}

    def register_lineage(self, realization_id: str, lineage: tuple[tuple[str, str], ...]) -> None:
        digests = tuple(
            lineage_digest(lineage[: i + 1]) for i in range(len(lineage))
        )
        self._lineage[realization_id] = LineageRecord(realization_id, digests)

    def attest(self, record: AttestationRecord) -> None:
        self._attestations.setdefault(record.node_id, []).append(record)
        self._attestations[record.node_id].sort(key=lambda a: a.issue_time_us)

    def effective_trust(self, node_id: str, now: int) -> int:
        """Trust level of the latest attestation valid at ``now``, else 0."""
        records = self._attestations.get(node_id, ())
        level = 0
        for rec in records:
            if rec.issue_time_us <= now:
                level = rec.level if rec.valid_at(now) else 0
        return level

    def lineage_for(self, realization_id: str) -> LineageRecord | None:
        return self._lineage.get(realization_id)

    def is_revoked(self, realization_id: str) -> bool:
        rec = self._lineage.get(realization_id)
        return rec is not None and rec.revoked

    def revoke(self, realization_id: str) -> LineageRecord:
        rec = self._lineage.get(realization_id)
        if rec is None:
            raise UnknownRealization(realization_id)
        rec.revoked = True
        return rec

    def verdict(
        self,
        request: RequestDescriptor,
        plan: tuple[PlanStage, ...],
        now: int,
        degraded: bool = False,
    ) -> tuple[str, str | None]:
        """Dispatch-time policy verdict: (allowed|degraded, None) or (rejected, reason).

        Hard constraints were filtered at selection; this re-checks them
        because attestations may have expired and lineage may have been
        revoked between selection and dispatch.
        """
        for stage in plan:
            if self.effective_trust(stage.node_id, now) < request.policy.min_trust:
                return ("rejected", REASON_TRUST_EXPIRED)
        for stage in plan:
            if self.is_revoked(stage.realization_id):
                return ("rejected", REASON_LINEAGE_REVOKED)
        return ("degraded" if degraded else "allowed", None)


@dataclass(slots=True)
class ReceiptLog:
    """Append-only, single-writer record of terminal request outcomes."""

    receipts: list[ExecutionReceipt] = field(default_factory=list)

    def emit(self, receipt: ExecutionReceipt) -> None:
        self.receipts.append(receipt)

    def __len__(self) -> int:
        return len(self.receipts)

    def to_jsonl(self) -> str:
        return "".join(to_canonical_json(r) + "\n" for r in self.receipts)
