"""Tamper-evident dual audit logs kept inside the pod.

Two append-only hash chains: a policy log (grants, revocations,
amendments) and an access log (one entry per allowed access). Every entry
is hash-linked to its predecessor and signed twice, giving two-sided
non-repudiation: an access entry only verifies with the accessor's
signature (the pod owner cannot fabricate accesses), and the accessor's
signature is bound to the presentation used (the accessor cannot refute
it). The hosting provider periodically mirrors head hashes as anchor
records, so truncating a log below a published head is detectable.

Exports are newline-delimited canonical JSON with hex-encoded hashes and
signatures; the verifier consumes an export standalone.
"""

from __future__ import annotations

import hmac
import hashlib
import threading
from dataclasses import dataclass, field

from .codec import canonical_json, from_canonical_json
from .crypto import GENESIS_HASH, SigningKey, chain_hash, keyed_pseudonym, verify_signature
from .errors import IntegrityError, ValidationError

POLICY_LOG = "policy"
ACCESS_LOG = "access"

ENTRY_KINDS = ("grant", "revoke", "amend")


def _entry_hash(prev_hash: str, entry: dict) -> str:
    body = canonical_json(
        {k: v for k, v in entry.items() if k not in ("prev_hash", "entry_hash")}
    )
    return chain_hash(prev_hash, body)


def policy_sign_payload(kind: str, timestamp_ms: int, policy: dict) -> bytes:
    """What approver and requester sign; sequence numbers are assigned
    later and covered by the chain, not by these signatures."""
    return canonical_json({"kind": kind, "timestamp_ms": timestamp_ms, "policy": policy})


def access_receipt_payload(
    timestamp_ms: int,
    presentation_ref: str,
    presentation_key: str,
    resource: str,
    operation: str,
    policy_id: str,
    asserted_purpose: str,
) -> bytes:
    """Receipt the accessor signs before any payload is released. Every
    field is known client-side, so a single request can carry the
    signature."""
    return canonical_json(
        {
            "timestamp_ms": timestamp_ms,
            "presentation_ref": presentation_ref,
            "presentation_key": presentation_key,
            "resource": resource,
            "operation": operation,
            "policy_id": policy_id,
            "asserted_purpose": asserted_purpose,
        }
    )


def countersign_payload(entry: dict) -> bytes:
    return canonical_json(
        {
            k: entry[k]
            for k in (
                "seq",
                "timestamp_ms",
                "presentation_ref",
                "presentation_key",
                "resource",
                "operation",
                "policy_id",
                "asserted_purpose",
                "processor_signature",
            )
        }
    )


class HashChainLog:
    """Single-writer append-only hash chain over canonical dict entries."""

    def __init__(self, name: str):
        self.name = name
        self.entries: list[dict] = []
        self._lock = threading.Lock()

    @property
    def head_hash(self) -> str:
        return self.entries[-1]["entry_hash"] if self.entries else GENESIS_HASH

    def append(self, fields: dict, timestamp_ms: int) -> dict:
        """Append one signed entry. Timestamps must be strictly increasing
        (they are covered by the entry signatures, so they cannot be
        adjusted here); reordering then stays visible even to a forger who
        recomputes the whole hash chain."""
        with self._lock:
            if self.entries and timestamp_ms <= self.entries[-1]["timestamp_ms"]:
                raise ValidationError(
                    f"{self.name} log requires strictly increasing timestamps"
                )
            entry = dict(fields)
            entry["seq"] = len(self.entries) + 1
            entry["timestamp_ms"] = timestamp_ms
            entry["prev_hash"] = self.head_hash
            entry["entry_hash"] = _entry_hash(entry["prev_hash"], entry)
            self.entries.append(entry)
            return entry

    def export_lines(self) -> bytes:
        return b"".join(canonical_json(e) + b"\n" for e in self.entries)


@dataclass(frozen=True)
class Anchor:
    """Provider-mirrored head snapshot."""

    at_ms: int
    policy_seq: int
    policy_head: str
    access_seq: int
    access_head: str

    def to_dict(self) -> dict:
        return {
            "at_ms": self.at_ms,
            "policy_seq": self.policy_seq,
            "policy_head": self.policy_head,
            "access_seq": self.access_seq,
            "access_head": self.access_head,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Anchor":
        return cls(
            at_ms=data["at_ms"],
            policy_seq=data["policy_seq"],
            policy_head=data["policy_head"],
            access_seq=data["access_seq"],
            access_head=data["access_head"],
        )


class AuditLedger:
    """The pod's dual log plus the pod countersigning key."""

    def __init__(self, pod_id: str, pod_key: SigningKey):
        self.pod_id = pod_id
        self._pod_key = pod_key
        self.policy_log = HashChainLog(POLICY_LOG)
        self.access_log = HashChainLog(ACCESS_LOG)
        self.anchors: list[Anchor] = []
        self.notices: list[BreachNotice] = []
        self._notice_counter = 0

    @property
    def pod_verify_key_hex(self) -> str:
        return self._pod_key.verify_key_hex

    def pod_sign(self, payload: bytes) -> str:
        return self._pod_key.sign_hex(payload)

    # -- appends -----------------------------------------------------------

    def append_policy_entry(
        self,
        kind: str,
        timestamp_ms: int,
        policy: dict,
        approver: str,
        approver_signature: str,
        trusted_keys: dict[str, str],
        requester: str | None = None,
        requester_signature: str | None = None,
    ) -> dict:
        if kind not in ENTRY_KINDS:
            raise ValidationError(f"unknown policy entry kind: {kind}")
        payload = policy_sign_payload(kind, timestamp_ms, policy)
        approver_key = trusted_keys.get(approver)
        if not approver_signature or approver_key is None or not verify_signature(
            approver_key, payload, approver_signature
        ):
            self.raise_notice("forged-entry", timestamp_ms,
                              [f"approver signature rejected for {kind}"])
            raise IntegrityError("approver signature missing or invalid")
        if kind == "grant":
            requester_key = trusted_keys.get(requester or "")
            if not requester_signature or requester_key is None or not verify_signature(
                requester_key, payload, requester_signature
            ):
                self.raise_notice("forged-entry", timestamp_ms,
                                  ["requester signature rejected for grant"])
                raise IntegrityError("requester signature missing or invalid")
        entry = {
            "entry_type": "policy",
            "kind": kind,
            "policy": policy,
            "approver": approver,
            "approver_signature": approver_signature,
            "requester": requester,
            "requester_signature": requester_signature,
        }
        return self.policy_log.append(entry, timestamp_ms)

    def append_access_instance(
        self,
        timestamp_ms: int,
        presentation_ref: str,
        presentation_key: str,
        resource: str,
        operation: str,
        policy_id: str,
        asserted_purpose: str,
        processor_signature: str,
    ) -> dict:
        """Verify the accessor's receipt signature, countersign, link.

        Raises before anything is persisted when the receipt signature is
        missing or wrong; the caller must refuse to release the payload in
        that case (no receipt, no data).
        """
        payload = access_receipt_payload(
            timestamp_ms, presentation_ref, presentation_key,
            resource, operation, policy_id, asserted_purpose,
        )
        if not processor_signature or not verify_signature(
            presentation_key, payload, processor_signature
        ):
            self.raise_notice("forged-entry", timestamp_ms,
                              [f"receipt signature rejected for {resource}"])
            raise IntegrityError("accessor receipt signature missing or invalid")
        entry = {
            "entry_type": "access",
            "presentation_ref": presentation_ref,
            "presentation_key": presentation_key,
            "resource": resource,
            "operation": operation,
            "policy_id": policy_id,
            "asserted_purpose": asserted_purpose,
            "processor_signature": processor_signature,
        }
        with self.access_log._lock:
            if (
                self.access_log.entries
                and timestamp_ms <= self.access_log.entries[-1]["timestamp_ms"]
            ):
                raise ValidationError(
                    "access log requires strictly increasing timestamps"
                )
            entry["seq"] = len(self.access_log.entries) + 1
            entry["timestamp_ms"] = timestamp_ms
            entry["pod_countersignature"] = self._pod_key.sign_hex(
                countersign_payload(entry)
            )
            entry["prev_hash"] = self.access_log.head_hash
            entry["entry_hash"] = _entry_hash(entry["prev_hash"], entry)
            self.access_log.entries.append(entry)
        return entry

    def anchor(self, now_ms: int) -> Anchor:
        record = Anchor(
            at_ms=now_ms,
            policy_seq=len(self.policy_log.entries),
            policy_head=self.policy_log.head_hash,
            access_seq=len(self.access_log.entries),
            access_head=self.access_log.head_hash,
        )
        self.anchors.append(record)
        return record

    def raise_notice(self, category: str, at_ms: int, evidence: list[str]) -> "BreachNotice":
        self._notice_counter += 1
        notice = BreachNotice(
            notice_id=f"bn-{self._notice_counter:04d}",
            detected_at_ms=at_ms,
            category=category,
            evidence=tuple(evidence),
            recipients=("data-subject", "dpo"),
        )
        self.notices.append(notice)
        return notice


# --------------------------------------------------------------------------
# verification
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class VerificationReport:
    valid: bool
    first_bad_seq: int | None
    problems: tuple[str, ...]
    entries_checked: int
    head_hash: str
    anchor_ok: bool | None  # None when no anchor was supplied


def parse_export(data: bytes) -> list[dict]:
    entries = []
    for i, line in enumerate(data.splitlines()):
        if not line.strip():
            continue
        try:
            entry = from_canonical_json(line)
        except Exception as exc:
            raise IntegrityError(f"line {i + 1}: not a canonical record ({exc})") from exc
        if not isinstance(entry, dict):
            raise IntegrityError(f"line {i + 1}: record is not an object")
        entries.append(entry)
    return entries


def _check_common(entry: dict, index: int, prev_hash: str, prev_ts: int,
                  problems: list[str]) -> None:
    seq = entry.get("seq")
    if seq != index + 1:
        problems.append(f"seq {seq} at position {index + 1}")
    ts = entry.get("timestamp_ms")
    if not isinstance(ts, int) or ts <= prev_ts:
        problems.append(f"timestamp not strictly increasing at seq {index + 1}")
    if entry.get("prev_hash") != prev_hash:
        problems.append(f"hash linkage broken at seq {index + 1}")
    expected = _entry_hash(entry.get("prev_hash", ""), entry)
    if entry.get("entry_hash") != expected:
        problems.append(f"entry hash mismatch at seq {index + 1}")


def verify_chain(
    entries: list[dict] | bytes,
    trusted_keys: dict[str, str],
    pod_id: str | None = None,
    policy_entries: list[dict] | None = None,
    anchor: Anchor | None = None,
) -> VerificationReport:
    """Full verification of one exported log.

    Checks hash linkage, per-entry signatures, sequence/timestamp
    discipline, policy-reference consistency for access logs (when the
    policy log is supplied) and, when an anchor is given, that the log
    still contains the anchored head at the anchored position.
    """
    try:
        if isinstance(entries, (bytes, bytearray)):
            entries = parse_export(bytes(entries))
    except IntegrityError as exc:
        return VerificationReport(False, 1, (str(exc),), 0, GENESIS_HASH, None)

    problems: list[str] = []
    first_bad: int | None = None
    prev_hash = GENESIS_HASH
    prev_ts = -1
    seen_receipts: set[bytes] = set()
    policy_index = _PolicyIndex(policy_entries) if policy_entries is not None else None

    for i, entry in enumerate(entries):
        entry_problems: list[str] = []
        try:
            _check_common(entry, i, prev_hash, prev_ts, entry_problems)
            etype = entry.get("entry_type")
            if etype == "policy":
                _verify_policy_entry(entry, trusted_keys, entry_problems)
            elif etype == "access":
                _verify_access_entry(entry, trusted_keys, pod_id, policy_index,
                                     seen_receipts, entry_problems)
            else:
                entry_problems.append(f"unknown entry type at seq {i + 1}")
        except Exception as exc:  # malformed field types land here
            entry_problems.append(f"malformed entry at seq {i + 1}: {exc}")
        if entry_problems and first_bad is None:
            first_bad = i + 1
        problems.extend(entry_problems)
        prev_hash = entry.get("entry_hash", prev_hash)
        ts = entry.get("timestamp_ms")
        prev_ts = ts if isinstance(ts, int) else prev_ts

    anchor_ok: bool | None = None
    if anchor is not None:
        is_policy = bool(entries) and entries[0].get("entry_type") == "policy"
        a_seq = anchor.policy_seq if is_policy else anchor.access_seq
        a_head = anchor.policy_head if is_policy else anchor.access_head
        if a_seq == 0:
            anchor_ok = True
        elif len(entries) < a_seq:
            anchor_ok = False
            problems.append(f"log truncated below anchored seq {a_seq}")
            if first_bad is None:
                first_bad = len(entries) + 1
        else:
            anchor_ok = entries[a_seq - 1].get("entry_hash") == a_head
            if not anchor_ok:
                problems.append(f"anchored head mismatch at seq {a_seq}")
                if first_bad is None:
                    first_bad = a_seq

    return VerificationReport(
        valid=not problems,
        first_bad_seq=first_bad,
        problems=tuple(problems),
        entries_checked=len(entries),
        head_hash=entries[-1].get("entry_hash", GENESIS_HASH) if entries else GENESIS_HASH,
        anchor_ok=anchor_ok,
    )


def _verify_policy_entry(entry: dict, trusted_keys: dict[str, str],
                         problems: list[str]) -> None:
    seq = entry.get("seq")
    if entry.get("kind") not in ENTRY_KINDS:
        problems.append(f"unknown policy kind at seq {seq}")
        return
    payload = policy_sign_payload(
        entry["kind"], entry["timestamp_ms"], entry["policy"]
    )
    approver_key = trusted_keys.get(entry.get("approver", ""))
    if approver_key is None or not verify_signature(
        approver_key, payload, entry.get("approver_signature") or ""
    ):
        problems.append(f"approver signature invalid at seq {seq}")
    if entry.get("kind") == "grant":
        requester_key = trusted_keys.get(entry.get("requester") or "")
        if requester_key is None or not verify_signature(
            requester_key, payload, entry.get("requester_signature") or ""
        ):
            problems.append(f"requester signature invalid at seq {seq}")


def _verify_access_entry(entry: dict, trusted_keys: dict[str, str],
                         pod_id: str | None, policy_index: "_PolicyIndex | None",
                         seen_receipts: set[bytes], problems: list[str]) -> None:
    seq = entry.get("seq")
    payload = access_receipt_payload(
        entry["timestamp_ms"], entry["presentation_ref"], entry["presentation_key"],
        entry["resource"], entry["operation"], entry["policy_id"],
        entry["asserted_purpose"],
    )
    if payload in seen_receipts:
        problems.append(f"replayed accessor receipt at seq {seq}")
    seen_receipts.add(payload)
    if not entry.get("processor_signature") or not verify_signature(
        entry["presentation_key"], payload, entry["processor_signature"]
    ):
        problems.append(f"accessor signature invalid at seq {seq}")
    if pod_id is not None:
        pod_key = trusted_keys.get(pod_id)
        if pod_key is None or not verify_signature(
            pod_key, countersign_payload(entry), entry.get("pod_countersignature") or ""
        ):
            problems.append(f"pod countersignature invalid at seq {seq}")
    if policy_index is not None:
        reason = policy_index.check_reference(
            entry["policy_id"], entry["timestamp_ms"], entry["presentation_ref"]
        ) or policy_index.asserted_purpose_mismatch(
            entry["policy_id"], entry["asserted_purpose"]
        )
        if reason:
            problems.append(f"policy reference at seq {seq}: {reason}")


class _PolicyIndex:
    """Grant/revoke timeline for policy-reference consistency checks."""

    def __init__(self, policy_entries: list[dict]):
        self.grants: dict[str, dict] = {}
        self.grant_ts: dict[str, int] = {}
        self.revoked_ts: dict[str, int] = {}
        for entry in policy_entries:
            policy = entry.get("policy", {})
            pid = policy.get("policy_id")
            if pid is None:
                continue
            if entry.get("kind") == "grant":
                self.grants[pid] = policy
                self.grant_ts[pid] = entry["timestamp_ms"]
            elif entry.get("kind") == "revoke":
                self.revoked_ts.setdefault(pid, entry["timestamp_ms"])

    def check_reference(self, policy_id: str, at_ms: int,
                        presentation_ref: str) -> str | None:
        policy = self.grants.get(policy_id)
        if policy is None:
            return f"policy {policy_id} never granted"
        if self.grant_ts[policy_id] > at_ms:
            return f"policy {policy_id} granted after the access"
        revoked = self.revoked_ts.get(policy_id)
        if revoked is not None and revoked <= at_ms:
            return f"policy {policy_id} revoked before the access"
        if not (policy.get("valid_from_ms", 0) <= at_ms <= policy.get("valid_until_ms", 0)):
            return f"policy {policy_id} outside validity window"
        grantee = policy.get("grantee", {})
        if grantee.get("kind") == "agent" and grantee.get("agent") != presentation_ref:
            return "access actor does not match the policy grantee"
        return None

    def asserted_purpose_mismatch(self, policy_id: str, asserted: str) -> str | None:
        policy = self.grants.get(policy_id)
        if policy is None:
            return None
        expected = policy.get("purpose", "")
        if expected and asserted != expected:
            return f"asserted purpose {asserted!r} differs from policy purpose"
        return None


# --------------------------------------------------------------------------
# views
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PseudonymEpoch:
    """Keyed-hash pseudonym mapping; stable inside an epoch, unrelated
    across epochs. The key never appears in any view."""

    epoch_id: str
    epoch_key: bytes

    def pseudonym(self, value: str) -> str:
        return keyed_pseudonym(self.epoch_key, value)


def epoch_for(master_secret: bytes, now_ms: int, epoch_len_ms: int) -> PseudonymEpoch:
    index = now_ms // max(epoch_len_ms, 1)
    key = hmac.new(master_secret, f"epoch:{index}".encode(), hashlib.sha256).digest()
    return PseudonymEpoch(epoch_id=f"e-{index}", epoch_key=key)


def _redact_uri(uri: str, epoch: PseudonymEpoch) -> str:
    """Pseudonymize the host and keep only the top-level container."""
    scheme, sep, rest = uri.partition("://")
    if not sep:
        return epoch.pseudonym(uri)
    host, slash, path = rest.partition("/")
    top = path.split("/", 1)[0] if path else ""
    redacted_path = f"/{top}/" if top else "/"
    return f"{scheme}://{epoch.pseudonym(host)}.redacted{redacted_path}"


def ciso_view(ledger: AuditLedger, epoch: PseudonymEpoch,
              known_agents: list[str]) -> list[dict]:
    """Pseudonymized projection for technical-incident oversight.

    Actors become epoch pseudonyms, resource hosts are pseudonymized and
    paths truncated to one container level, purposes survive. The caller
    gates access (CISO role plus the multi-factor gate).
    """
    agent_set = set(known_agents)

    def actor(value: str | None) -> str | None:
        return None if value is None else epoch.pseudonym(value)

    def scrub(value: object) -> object:
        if isinstance(value, str) and value in agent_set:
            return epoch.pseudonym(value)
        return value

    rows: list[dict] = []
    for entry in ledger.policy_log.entries:
        policy = entry["policy"]
        grantee = dict(policy.get("grantee", {}))
        grantee = {k: scrub(v) for k, v in grantee.items()}
        rows.append(
            {
                "log": POLICY_LOG,
                "seq": entry["seq"],
                "timestamp_ms": entry["timestamp_ms"],
                "event": entry["kind"],
                "policy_id": policy.get("policy_id"),
                "pod": _redact_uri(policy.get("pod", ""), epoch),
                "grantee": grantee,
                "modes": policy.get("modes"),
                "audience_class": policy.get("audience_class"),
                "legal_basis": policy.get("legal_basis"),
                "purpose": policy.get("purpose"),
                "approver": actor(entry.get("approver")),
                "requester": actor(entry.get("requester")),
            }
        )
    for entry in ledger.access_log.entries:
        rows.append(
            {
                "log": ACCESS_LOG,
                "seq": entry["seq"],
                "timestamp_ms": entry["timestamp_ms"],
                "event": entry["operation"],
                "actor": actor(entry["presentation_ref"]),
                "resource": _redact_uri(entry["resource"], epoch),
                "policy_id": entry["policy_id"],
                "purpose": entry["asserted_purpose"],
            }
        )
    return rows


def serialize_view(rows: list[dict]) -> bytes:
    return b"".join(canonical_json(r) + b"\n" for r in rows)


def dpo_view(ledger: AuditLedger) -> list[dict]:
    """Complete, unpseudonymized projection; caller enforces the DPO role."""
    return [dict(e) for e in ledger.policy_log.entries] + [
        dict(e) for e in ledger.access_log.entries
    ]


def subject_view(ledger: AuditLedger) -> list[dict]:
    """The pod owner reads their own logs in full."""
    return dpo_view(ledger)


# --------------------------------------------------------------------------
# breach detection
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BreachNotice:
    notice_id: str
    detected_at_ms: int
    category: str  # chain-tamper | forged-entry | probe-burst | sybil-surge
    evidence: tuple[str, ...]
    recipients: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "notice_id": self.notice_id,
            "detected_at_ms": self.detected_at_ms,
            "category": self.category,
            "evidence": list(self.evidence),
            "recipients": list(self.recipients),
        }


@dataclass(frozen=True)
class RequestTraceEvent:
    """One externally observable request outcome, for burst detection."""

    at_ms: int
    source: str
    status: int


def detect_and_notify(
    ledger: AuditLedger,
    trace: list[RequestTraceEvent],
    probe_burst_threshold: int,
    sybil_fraction: float,
    sybil_fraction_threshold: float,
    trusted_keys: dict[str, str],
    now_ms: int,
    window_ms: int = 60_000,
) -> list[BreachNotice]:
    """Scan a window for incidents; one notice per triggered category."""
    notices: list[BreachNotice] = []

    by_source: dict[str, list[int]] = {}
    for event in trace:
        if event.status == 404:
            by_source.setdefault(event.source, []).append(event.at_ms)
    for source, times in sorted(by_source.items()):
        times.sort()
        lo = 0
        for hi in range(len(times)):
            while times[hi] - times[lo] > window_ms:
                lo += 1
            if hi - lo + 1 >= probe_burst_threshold:
                notices.append(
                    ledger.raise_notice(
                        "probe-burst",
                        now_ms,
                        [f"{hi - lo + 1} not-found responses from {source} "
                         f"within {window_ms} ms"],
                    )
                )
                break

    for log, policy_ctx in (
        (ledger.policy_log, None),
        (ledger.access_log, ledger.policy_log.entries),
    ):
        report = verify_chain(
            list(log.entries), trusted_keys, pod_id=ledger.pod_id,
            policy_entries=policy_ctx,
        )
        if not report.valid:
            notices.append(
                ledger.raise_notice(
                    "chain-tamper", now_ms,
                    [f"{log.name} log invalid from seq {report.first_bad_seq}"],
                )
            )

    if sybil_fraction > sybil_fraction_threshold:
        notices.append(
            ledger.raise_notice(
                "sybil-surge", now_ms,
                [f"sybil-suspect fraction {sybil_fraction:.2f} exceeds "
                 f"{sybil_fraction_threshold:.2f}"],
            )
        )
    return notices
