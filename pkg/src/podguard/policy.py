"""Policy store and decision engine with externally uniform refusals.

The wire contract is deliberately information-free for anyone who is not
authorized: unauthenticated, unauthorized and nonexistent all produce the
byte-identical not-found decision, so response inspection cannot be used
as a resource-existence oracle. 403 never appears on the wire; the
distinction survives only in the internal rationale kept for oversight.
405 is reserved for callers that are authorized for the target, never
before authorization is established.

Each policy carries the legal machinery an access must answer for: a
legal basis (one of the six), a purpose, a validity window and a
retention directive. Allowed accesses release data only after the caller
signs an access receipt, which becomes the ledger entry.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from .authn import Presentation, VerifiedPresentation, verify_presentation
from .config import HardeningConfig
from .crypto import DeterministicRng
from .errors import (
    AuthorizationError,
    IntegrityError,
    NotFoundError,
    PodGuardError,
    ValidationError,
)
from .ledger import AuditLedger, RequestTraceEvent, access_receipt_payload
from .store import INSECURE_SCHEME, PodStore, ResourceUri, SECURE_SCHEME


class Mode(str, Enum):
    READ = "read"
    WRITE = "write"
    APPEND = "append"
    CONTROL = "control"


MODE_ORDER = (Mode.READ, Mode.WRITE, Mode.APPEND, Mode.CONTROL)


class LegalBasis(str, Enum):
    CONSENT = "consent"
    CONTRACT = "contract"
    LEGAL_OBLIGATION = "legal-obligation"
    VITAL_INTERESTS = "vital-interests"
    PUBLIC_TASK = "public-task"
    LEGITIMATE_INTEREST = "legitimate-interest"


class AudienceClass(str, Enum):
    VIEWER = "viewer"
    PROCESSOR = "processor"


class RetentionKind(str, Enum):
    UNRESTRICTED = "unrestricted"
    WINDOW = "window"
    DESTROY_AFTER_USE = "destroy-after-use"


@dataclass(frozen=True)
class Retention:
    kind: RetentionKind
    window_ms: int | None = None

    def __post_init__(self):
        if self.kind is RetentionKind.WINDOW and not self.window_ms:
            raise ValidationError("window retention needs a duration")

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "window_ms": self.window_ms}


@dataclass(frozen=True)
class Grantee:
    """Either one named agent or an anonymous credential class."""

    kind: str  # "agent" | "class"
    agent: str | None = None
    issuer: str | None = None
    role: str | None = None

    def __post_init__(self):
        if self.kind == "agent" and not self.agent:
            raise ValidationError("agent grantee needs a webid")
        if self.kind == "class" and (not self.issuer or not self.role):
            raise ValidationError("class grantee needs issuer and role")
        if self.kind not in ("agent", "class"):
            raise ValidationError(f"unknown grantee kind {self.kind!r}")

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.agent:
            out["agent"] = self.agent
        if self.issuer:
            out["issuer"] = self.issuer
        if self.role:
            out["role"] = self.role
        return out


@dataclass
class AccessPolicy:
    policy_id: str
    pod_prefix: str                    # secure URI prefix this grant covers
    grantee: Grantee
    modes: frozenset[Mode]
    audience_class: AudienceClass
    legal_basis: LegalBasis
    purpose: str
    valid_from_ms: int
    valid_until_ms: int
    retention: Retention
    controller: str
    status: str = "active"             # active | revoked
    revoked_at_ms: int | None = None
    consumed_at_ms: int | None = None  # destroy-after-use grants only
    activation_not_before_ms: int | None = None  # objection window

    def snapshot(self) -> dict:
        return {
            "policy_id": self.policy_id,
            "pod": self.pod_prefix,
            "grantee": self.grantee.to_dict(),
            "modes": sorted(m.value for m in self.modes),
            "audience_class": self.audience_class.value,
            "legal_basis": self.legal_basis.value,
            "purpose": self.purpose,
            "valid_from_ms": self.valid_from_ms,
            "valid_until_ms": self.valid_until_ms,
            "retention": self.retention.to_dict(),
            "controller": self.controller,
            "status": self.status,
            "revoked_at_ms": self.revoked_at_ms,
            "consumed_at_ms": self.consumed_at_ms,
            "activation_not_before_ms": self.activation_not_before_ms,
        }


@dataclass(frozen=True)
class AuthorizationRequest:
    pod_prefix: str
    grantee: Grantee
    modes: frozenset[Mode]
    audience_class: AudienceClass
    legal_basis: LegalBasis | None
    purpose: str
    valid_from_ms: int
    valid_until_ms: int
    retention: Retention
    requester: str                     # webid of whoever asked
    controller: str


@dataclass(frozen=True)
class ResourceRequest:
    """One wire request after transport decoding."""

    method: str
    uri: ResourceUri
    headers: dict[str, str] = field(default_factory=dict)
    body: bytes = b""
    agent: str | None = None                 # login-authenticated webid
    presentation: Presentation | None = None  # anonymous credential proof
    asserted_purpose: str = ""
    asserted_policy_id: str | None = None
    receipt_signature: str | None = None
    receipt_time_ms: int | None = None       # client-signed receipt timestamp
    source_host: str = "unknown"


@dataclass
class Decision:
    """Externally observable response. ``internal_rationale`` never
    reaches the wire."""

    status: int
    headers: dict[str, str]
    body: bytes
    internal_rationale: dict = field(default_factory=dict, repr=False, compare=False)

    def serialize(self) -> bytes:
        lines = [f"{self.status}".encode("ascii")]
        for name in sorted(self.headers):
            lines.append(f"{name}: {self.headers[name]}".encode("utf-8"))
        lines.append(f"content-length: {len(self.body)}".encode("ascii"))
        return b"\n".join(lines) + b"\n\n" + self.body


@dataclass(frozen=True)
class Refusal:
    """Connection-level reject: no request bytes were read, none answered."""

    reason: str


def uniform_not_found(rationale: dict | None = None) -> Decision:
    return Decision(
        status=404,
        headers={"content-type": "text/plain; charset=utf-8"},
        body=b"not found\n",
        internal_rationale=rationale or {},
    )


def method_not_allowed(allowed: tuple[str, ...], rationale: dict) -> Decision:
    return Decision(
        status=405,
        headers={
            "content-type": "text/plain; charset=utf-8",
            "allow": ", ".join(allowed),
        },
        body=b"method not allowed\n",
        internal_rationale=rationale,
    )


METHOD_MODE = {
    "GET": Mode.READ,
    "HEAD": Mode.READ,
    "PUT": Mode.WRITE,
    "PATCH": Mode.WRITE,
    "DELETE": Mode.WRITE,
    "POST": Mode.APPEND,
}

RESOURCE_METHODS = ("GET", "HEAD", "PUT", "DELETE")
CONTAINER_METHODS = ("GET", "HEAD", "POST")


def canonical_modes(modes: frozenset[Mode] | set[Mode]) -> str:
    return " ".join(m.value for m in MODE_ORDER if m in modes)


def upgrade_insecure_uri(raw_uri: str, config: HardeningConfig) -> Decision | Refusal | None:
    """Scheme policing happens before any routing.

    Hardened mode refuses plain-scheme connections outright — a redirect
    would already have carried the full URI past any eavesdropper. Legacy
    mode keeps the 301-upgrade behaviour for differential runs. Secure
    URIs pass through (``None``).
    """
    if raw_uri.startswith(SECURE_SCHEME + "://"):
        return None
    if not raw_uri.startswith(INSECURE_SCHEME + "://"):
        raise ValidationError(f"unsupported scheme in {raw_uri!r}")
    if config.refuse_insecure_scheme:
        return Refusal(reason="insecure scheme refused before read")
    upgraded = SECURE_SCHEME + "://" + raw_uri.split("://", 1)[1]
    return Decision(
        status=301,
        headers={"location": upgraded},
        body=b"",
        internal_rationale={"outcome": "insecure-upgrade"},
    )


class DecisionEngine:
    """Per-pod policy evaluation wired to the store and the ledger.

    Grant and revoke go through the policy log (single-writer append);
    evaluation is read-mostly, with the destroy-after-use consumption and
    presentation replay check serialized under the engine lock.
    """

    RECEIPT_CLOCK_TOLERANCE_MS = 120_000

    def __init__(
        self,
        store: PodStore,
        ledger: AuditLedger,
        config: HardeningConfig,
        subject: str,
        trusted_keys: Callable[[], dict[str, str]],
        issuer_keys: Callable[[], dict[str, str]],
        revoked_credentials: Callable[[], set[str]],
        rng: DeterministicRng,
        objection_window_ms: int = 7 * 86_400_000,
        notify: Callable[[str, dict], None] | None = None,
    ):
        self.store = store
        self.ledger = ledger
        self.config = config
        self.subject = subject
        self._trusted_keys = trusted_keys
        self._issuer_keys = issuer_keys
        self._revoked_credentials = revoked_credentials
        self._rng = rng
        self.objection_window_ms = objection_window_ms
        self._notify = notify
        self.policies: dict[str, AccessPolicy] = {}
        self.restricted_prefixes: set[str] = set()     # usage-restriction in force
        self.viewer_only_activities: set[str] = set()  # automated processing objected
        self.request_trace: list[RequestTraceEvent] = []
        self.notifications: list[dict] = []            # routed to mailboxes by the host
        self.presentation_archive: dict[str, Presentation] = {}  # for disputes
        self._seen_presentations: set[str] = set()
        self._lock = threading.RLock()

    # ------------------------------------------------------------------
    # policy administration
    # ------------------------------------------------------------------

    def draft_policy(self, request: AuthorizationRequest, now_ms: int) -> dict:
        """Validate an authorization request and mint the policy snapshot
        that approver and requester will sign."""
        if request.legal_basis is None:
            raise ValidationError("a legal basis is required for every grant")
        if request.audience_class is AudienceClass.PROCESSOR and not request.purpose:
            raise ValidationError("processor grants must record their purpose")
        if request.valid_from_ms > request.valid_until_ms:
            raise ValidationError("validity window is inverted")
        bad_modes = set(request.modes) - set(MODE_ORDER)
        if bad_modes:
            raise ValidationError(f"unknown modes: {bad_modes}")
        policy = AccessPolicy(
            policy_id=f"pol-{self._rng.hex(8)}",
            pod_prefix=request.pod_prefix,
            grantee=request.grantee,
            modes=frozenset(request.modes),
            audience_class=request.audience_class,
            legal_basis=request.legal_basis,
            purpose=request.purpose,
            valid_from_ms=request.valid_from_ms,
            valid_until_ms=request.valid_until_ms,
            retention=request.retention,
            controller=request.controller,
        )
        if request.legal_basis is LegalBasis.LEGITIMATE_INTEREST:
            # Controller-declared interest activates only after the subject
            # has had a window to object; the window is part of the signed
            # snapshot, not a later server-side adjustment.
            policy.activation_not_before_ms = now_ms + self.objection_window_ms
        return policy.snapshot()

    def grant_policy(
        self,
        snapshot: dict,
        approver: str,
        approver_signature: str,
        requester: str,
        requester_signature: str,
        now_ms: int,
    ) -> AccessPolicy:
        """Store an approved policy and log the grant with both signatures.

        The approver is the pod's data subject, except for controller-
        initiated legitimate-interest grants, which activate only after an
        objection window and notify the subject immediately.
        """
        modes = frozenset(Mode(m) for m in snapshot["modes"])
        policy = AccessPolicy(
            policy_id=snapshot["policy_id"],
            pod_prefix=snapshot["pod"],
            grantee=Grantee(**snapshot["grantee"]),
            modes=modes,
            audience_class=AudienceClass(snapshot["audience_class"]),
            legal_basis=LegalBasis(snapshot["legal_basis"]),
            purpose=snapshot["purpose"],
            valid_from_ms=snapshot["valid_from_ms"],
            valid_until_ms=snapshot["valid_until_ms"],
            retention=Retention(
                RetentionKind(snapshot["retention"]["kind"]),
                snapshot["retention"].get("window_ms"),
            ),
            controller=snapshot["controller"],
            activation_not_before_ms=snapshot.get("activation_not_before_ms"),
        )
        with self._lock:
            if policy.policy_id in self.policies:
                raise ValidationError(f"duplicate policy id {policy.policy_id}")
            if Mode.CONTROL in policy.modes and approver != self.subject:
                raise AuthorizationError(
                    "control mode can only be approved by the data subject"
                )
            if approver != self.subject:
                if policy.legal_basis is not LegalBasis.LEGITIMATE_INTEREST or (
                    approver != policy.controller
                ):
                    raise AuthorizationError(
                        "grants are approved by the data subject, or by the "
                        "controller for legitimate-interest processing"
                    )
                if not policy.activation_not_before_ms:
                    raise ValidationError(
                        "controller-initiated grants carry an objection window"
                    )
                notice = {
                    "kind": "legitimate-interest-pending",
                    "to": self.subject,
                    "policy_id": policy.policy_id,
                    "active_from_ms": policy.activation_not_before_ms,
                }
                self.notifications.append(notice)
                if self._notify is not None:
                    self._notify(self.subject, notice)
            self.ledger.append_policy_entry(
                kind="grant",
                timestamp_ms=now_ms,
                policy=policy.snapshot(),
                approver=approver,
                approver_signature=approver_signature,
                trusted_keys=self._trusted_keys(),
                requester=requester,
                requester_signature=requester_signature,
            )
            self.policies[policy.policy_id] = policy
            return policy

    def revoke_policy(
        self, policy_id: str, actor: str, actor_signature: str, now_ms: int
    ) -> AccessPolicy:
        """Revoke; the historic policy stays in the store and the log.

        The signed statement is the minimal revocation record (id, status,
        time) so the revoking party can sign it without holding the full
        server-side snapshot. Revoking twice is an idempotent no-op.
        """
        with self._lock:
            policy = self.policies.get(policy_id)
            if policy is None:
                raise NotFoundError(f"no such policy: {policy_id}")
            if actor not in (self.subject, policy.controller):
                raise AuthorizationError(
                    "only the subject or the issuing controller may revoke"
                )
            if policy.status == "revoked":
                return policy
            statement = {
                "policy_id": policy_id,
                "status": "revoked",
                "revoked_at_ms": now_ms,
            }
            self.ledger.append_policy_entry(
                kind="revoke",
                timestamp_ms=now_ms,
                policy=statement,
                approver=actor,
                approver_signature=actor_signature,
                trusted_keys=self._trusted_keys(),
            )
            policy.status = "revoked"
            policy.revoked_at_ms = now_ms
            return policy

    # ------------------------------------------------------------------
    # matching
    # ------------------------------------------------------------------

    def _prefix_covers(self, prefix: str, uri: ResourceUri) -> bool:
        target = str(uri)
        if not prefix.endswith("/"):
            prefix = prefix + "/"
        return target == prefix.rstrip("/") or target.startswith(prefix)

    def _policy_live(self, policy: AccessPolicy, now_ms: int) -> bool:
        if policy.status != "active" or policy.consumed_at_ms is not None:
            return False
        if policy.activation_not_before_ms and now_ms < policy.activation_not_before_ms:
            return False
        if not (policy.valid_from_ms <= now_ms <= policy.valid_until_ms):
            return False
        if policy.retention.kind is RetentionKind.WINDOW:
            if now_ms > policy.valid_from_ms + (policy.retention.window_ms or 0):
                return False
        return True

    def _grantee_matches(
        self,
        policy: AccessPolicy,
        agent: str | None,
        vp: VerifiedPresentation | None,
        asserted_purpose: str,
    ) -> bool:
        if vp is not None:
            if policy.audience_class is not AudienceClass.PROCESSOR:
                return False
            if policy.grantee.kind != "class":
                return False
            if policy.grantee.issuer != vp.issuer:
                return False
            if vp.attributes.get("role") != policy.grantee.role:
                return False
            if vp.activity_id in self.viewer_only_activities:
                return False
            scopes = vp.attributes.get("purpose_scopes") or []
            if policy.purpose and (
                asserted_purpose != policy.purpose or asserted_purpose not in scopes
            ):
                return False
            return True
        if agent is None:
            return False
        if policy.audience_class is not AudienceClass.VIEWER:
            return False
        return policy.grantee.kind == "agent" and policy.grantee.agent == agent

    def _matching_policies(
        self,
        uri: ResourceUri,
        mode: Mode | None,
        agent: str | None,
        vp: VerifiedPresentation | None,
        asserted_purpose: str,
        now_ms: int,
        restrict_to: str | None = None,
    ) -> list[AccessPolicy]:
        out = []
        for policy in self.policies.values():
            if restrict_to is not None and policy.policy_id != restrict_to:
                continue
            if not self._policy_live(policy, now_ms):
                continue
            if not self._prefix_covers(policy.pod_prefix, uri):
                continue
            if mode is not None and mode not in policy.modes:
                continue
            if vp is not None and self._is_restricted(uri):
                continue  # processing suspended while a restriction is in force
            if not self._grantee_matches(policy, agent, vp, asserted_purpose):
                continue
            out.append(policy)
        # most specific prefix first, then freshest grant, then stable id
        out.sort(key=lambda p: (-len(p.pod_prefix), -p.valid_from_ms, p.policy_id))
        return out

    def _is_restricted(self, uri: ResourceUri) -> bool:
        target = str(uri)
        return any(target.startswith(prefix) for prefix in self.restricted_prefixes)

    def restrict_prefix(self, prefix: str) -> None:
        self.restricted_prefixes.add(prefix)

    def lift_restriction(self, prefix: str) -> None:
        self.restricted_prefixes.discard(prefix)

    # ------------------------------------------------------------------
    # evaluation
    # ------------------------------------------------------------------

    def _verify_request_presentation(
        self, request: ResourceRequest, now_ms: int
    ) -> VerifiedPresentation | None:
        """Returns the verified presentation, or None when the request is
        effectively unauthenticated. Replays are consumed atomically."""
        if request.presentation is None:
            return None
        try:
            with self._lock:
                pid = request.presentation.presentation_id
                if pid in self._seen_presentations:
                    return None
                vp = verify_presentation(
                    request.presentation,
                    self._issuer_keys(),
                    self._revoked_credentials(),
                    now_ms,
                    max_delegation_depth=self.config.delegation_max_depth,
                )
                self._seen_presentations.add(pid)
                self.presentation_archive[pid] = request.presentation
                return vp
        except PodGuardError:
            return None

    def allow_header_view(
        self,
        uri: ResourceUri,
        agent: str | None,
        vp: VerifiedPresentation | None,
        asserted_purpose: str,
        now_ms: int,
    ) -> str | None:
        """The caller's own modes on the target, canonically ordered.
        Nothing about anyone else's grants leaks through this header."""
        hits = self._matching_policies(uri, None, agent, vp, asserted_purpose, now_ms)
        if not hits:
            return None
        modes: set[Mode] = set()
        for policy in hits:
            modes |= set(policy.modes)
        return canonical_modes(modes)

    def evaluate(self, request: ResourceRequest, now_ms: int) -> Decision:
        decision = self._evaluate_inner(request, now_ms)
        self.request_trace.append(
            RequestTraceEvent(now_ms, request.source_host, decision.status)
        )
        return decision

    def _evaluate_inner(self, request: ResourceRequest, now_ms: int) -> Decision:
        method = request.method.upper()
        uri = request.uri
        mode = METHOD_MODE.get(method)
        # Writers verify whose pod they are talking to before uploading;
        # a stale or swapped binding turns into the uniform refusal.
        expected_subject = request.headers.get("x-expected-subject")
        if expected_subject and expected_subject != self.subject:
            return uniform_not_found({"outcome": "subject-binding-mismatch"})
        vp = self._verify_request_presentation(request, now_ms)
        agent = request.agent if vp is None else None

        exists = self.store.exists(uri)
        is_container = uri.is_container
        supported_set = CONTAINER_METHODS if is_container else RESOURCE_METHODS
        method_supported = method in supported_set

        authorized_policy: AccessPolicy | None = None
        if mode is not None:
            matches = self._matching_policies(
                uri, mode, agent, vp, request.asserted_purpose, now_ms,
                restrict_to=request.asserted_policy_id,
            )
            if matches:
                authorized_policy = matches[0]
        if method == "DELETE" and authorized_policy is not None:
            # Erasure is the subject's right; grantees with write access do
            # not get to shred resources.
            if agent != self.subject:
                authorized_policy = None

        rationale = {
            "exists": exists,
            "authorized": authorized_policy is not None,
            "method_supported": method_supported,
            "method": method,
            "actor": agent or (vp.presentation_id if vp else None),
            "policy_id": authorized_policy.policy_id if authorized_policy else None,
        }

        if authorized_policy is None:
            if self.config.always_404:
                rationale["outcome"] = "uniform-not-found"
                return uniform_not_found(rationale)
            # Legacy response discipline: method support and existence are
            # reported before authorization, which is exactly the oracle
            # the hardened mode removes.
            if not method_supported:
                rationale["outcome"] = "legacy-405"
                return method_not_allowed(tuple(supported_set), rationale)
            if exists:
                rationale["outcome"] = "legacy-403"
                return Decision(
                    status=403,
                    headers={"content-type": "text/plain; charset=utf-8"},
                    body=b"forbidden\n",
                    internal_rationale=rationale,
                )
            rationale["outcome"] = "legacy-404"
            return Decision(
                status=404,
                headers={"content-type": "text/plain; charset=utf-8"},
                body=b"not found\n",
                internal_rationale=rationale,
            )

        # For authorized callers, a target that does not exist is a plain
        # not-found (method support of a nonexistent resource is moot);
        # PUT and POST proceed because they create.
        if not exists and method not in ("PUT", "POST"):
            rationale["outcome"] = "missing"
            return uniform_not_found(rationale)

        if not method_supported:
            rationale["outcome"] = "method-not-allowed"
            return method_not_allowed(tuple(supported_set), rationale)

        return self._perform(request, method, mode, authorized_policy, agent, vp, now_ms,
                             rationale)

    def _perform(
        self,
        request: ResourceRequest,
        method: str,
        mode: Mode,
        policy: AccessPolicy,
        agent: str | None,
        vp: VerifiedPresentation | None,
        now_ms: int,
        rationale: dict,
    ) -> Decision:
        """Execute an authorized operation.

        Order matters: the accessor's receipt signature is checked before
        anything happens (no receipt, no data); the store effect runs next
        so a failed effect leaves no ledger entry; the access instance and
        any single-use consumption are committed last, and only then is the
        success decision — and with it the payload — released.
        """
        from .crypto import verify_signature

        actor_ref = agent if vp is None else vp.presentation_id
        actor_key = (
            vp.processor_signature_key if vp is not None
            else self._trusted_keys().get(agent or "", "")
        )
        # The receipt timestamp is asserted (and signed) by the client so a
        # single round trip suffices; it must sit near the pod clock and
        # strictly after the last logged access.
        receipt_time = (
            request.receipt_time_ms if request.receipt_time_ms is not None else now_ms
        )
        receipt_payload = access_receipt_payload(
            receipt_time, actor_ref or "", actor_key, str(request.uri), mode.value,
            policy.policy_id, request.asserted_purpose,
        )

        with self._lock:
            if not self._policy_live(policy, now_ms):
                rationale["outcome"] = "policy-lapsed"
                return uniform_not_found(rationale)
            if abs(receipt_time - now_ms) > self.RECEIPT_CLOCK_TOLERANCE_MS:
                rationale["outcome"] = "receipt-clock-skew"
                return uniform_not_found(rationale)
            if not request.receipt_signature or not verify_signature(
                actor_key, receipt_payload, request.receipt_signature
            ):
                self.ledger.raise_notice(
                    "forged-entry", now_ms,
                    [f"receipt signature rejected for {request.uri}"],
                )
                rationale["outcome"] = "receipt-refused"
                return uniform_not_found(rationale)
            log = self.ledger.access_log
            if log.entries and receipt_time <= log.entries[-1]["timestamp_ms"]:
                rationale["outcome"] = "clock-not-monotone"
                return uniform_not_found(rationale)
            try:
                decision = self._apply_store_effect(
                    request, method, agent, vp, now_ms, rationale
                )
            except (NotFoundError, IntegrityError, ValidationError) as exc:
                rationale["outcome"] = f"store-error:{type(exc).__name__}"
                return uniform_not_found(rationale)
            self.ledger.append_access_instance(
                timestamp_ms=receipt_time,
                presentation_ref=actor_ref or "",
                presentation_key=actor_key,
                resource=str(request.uri),
                operation=mode.value,
                policy_id=policy.policy_id,
                asserted_purpose=request.asserted_purpose,
                processor_signature=request.receipt_signature,
            )
            if policy.retention.kind is RetentionKind.DESTROY_AFTER_USE:
                policy.consumed_at_ms = now_ms
                snapshot = policy.snapshot()
                from .ledger import policy_sign_payload

                payload = policy_sign_payload("amend", receipt_time, snapshot)
                self.ledger.append_policy_entry(
                    kind="amend",
                    timestamp_ms=receipt_time,
                    policy=snapshot,
                    approver=self.ledger.pod_id,
                    approver_signature=self._pod_sign(payload),
                    trusted_keys=self._trusted_keys(),
                )
            return decision

    def _pod_sign(self, payload: bytes) -> str:
        return self.ledger.pod_sign(payload)

    def _apply_store_effect(
        self,
        request: ResourceRequest,
        method: str,
        agent: str | None,
        vp: VerifiedPresentation | None,
        now_ms: int,
        rationale: dict,
    ) -> Decision:
        uri = request.uri
        allow_view = self.allow_header_view(
            uri, agent, vp, request.asserted_purpose, now_ms
        )
        base_headers = {}
        if allow_view:
            base_headers["allow-view"] = allow_view
        rationale["outcome"] = "allow"

        if method in ("GET", "HEAD"):
            if uri.is_container:
                from .codec import canonical_json

                members = self.store.list_container(uri)
                body = canonical_json({"members": [str(m) for m in members]}) + b"\n"
                content_type = "application/json"
            else:
                res, body = self.store.get_resource(uri)
                content_type = res.content_type
            headers = dict(base_headers)
            headers["content-type"] = content_type
            if method == "HEAD":
                return Decision(200, headers, b"", rationale)
            return Decision(200, headers, body, rationale)

        if method == "PUT":
            existed = self.store.exists(uri)
            content_type = request.headers.get(
                "content-type", "application/octet-stream"
            )
            self.store.put_resource(uri, content_type, request.body)
            headers = dict(base_headers)
            if existed:
                return Decision(204, headers, b"", rationale)
            headers["location"] = str(uri)
            return Decision(201, headers, b"", rationale)

        if method == "POST":
            slug = request.headers.get("slug")
            if not slug:
                raise ValidationError("POST requires a slug header")
            child = ResourceUri(uri.host, uri.path + slug)
            content_type = request.headers.get(
                "content-type", "application/octet-stream"
            )
            self.store.put_resource(child, content_type, request.body)
            headers = dict(base_headers)
            headers["location"] = str(child)
            return Decision(201, headers, b"", rationale)

        if method == "DELETE":
            self.store.erase_resource(uri, now_ms)
            return Decision(204, dict(base_headers), b"", rationale)

        raise ValidationError(f"unhandled method {method}")
