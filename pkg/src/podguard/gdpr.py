"""Role registry, controller record-keeping and data-subject rights.

Controllers register their processing activities (purposes, data
categories, erasure limits, security measures) and act as the issuing
authority for the anonymous credentials their processors present. Every
credential's purpose scopes must stay inside a registered activity, so an
access can always be traced to a responsible controller even when the
acting processor stays anonymous — until a dispute forces the issuer to
open the escrowed identity.

Rights requests (rectification, erasure, restriction, objection,
automated-decision opt-out) run a small explicit state machine. The
controller-notification hop is mandatory and restriction can only be
enforced with the acknowledgment token from that hop; rectification and
erasure of unconstrained resources enforce immediately after
notification, because the subject can always edit their own pod.
"""

from __future__ import annotations

import base64
import dataclasses
from dataclasses import dataclass, field

from .authn import Credential, DelegationLink, MfaFactor, MfaRegistry
from .codec import canonical_json, from_canonical_json
from .config import HardeningConfig
from .crypto import (
    AEAD_NONCE_LEN,
    DeterministicRng,
    SigningKey,
    aead_decrypt,
    aead_encrypt,
)
from .errors import (
    AuthorizationError,
    IntegrityError,
    NotFoundError,
    RevokedError,
    ValidationError,
)
from .ledger import AuditLedger, policy_sign_payload, subject_view, verify_chain
from .policy import DecisionEngine, LegalBasis
from .store import PodStore, ResourceUri

ROLES = (
    "data-subject",
    "viewer",
    "processor",
    "data-feeder",
    "controller",
    "dpo",
    "ciso",
    "pod-provider",
    "intermediary",
)

ARTICLES = (16, 17, 18, 21, 22)


@dataclass(frozen=True)
class AgentRef:
    webid: str
    roles: frozenset[str]
    host: str | None = None
    controller: str | None = None  # responsible controller, processors only
    binding_attributes: dict = field(default_factory=dict)

    def __post_init__(self):
        unknown = self.roles - set(ROLES)
        if unknown:
            raise ValidationError(f"unknown roles: {sorted(unknown)}")
        if "processor" in self.roles and not self.controller:
            raise ValidationError("a processor references exactly one controller")


@dataclass
class RopaRecord:
    """One processing activity in a controller's records."""

    activity_id: str
    controller_contact: str
    purposes: list[str]
    categories_of_subjects: list[str] = field(default_factory=list)
    categories_of_data: list[str] = field(default_factory=list)
    erasure_time_limits_ms: dict[str, int] = field(default_factory=dict)
    recipient_categories: list[str] = field(default_factory=list)
    security_measures: dict[str, bool] = field(
        default_factory=lambda: {
            "pseudonymisation": True,
            "encryption": True,
            "restore_capability": True,
            "continual_evaluation": True,
        }
    )
    dpia_ref: str = ""
    delegations: list[tuple[str, str]] = field(default_factory=list)


@dataclass
class ControllerState:
    webid: str
    escrow_key: bytes
    reputation: int
    activities: dict[str, RopaRecord] = field(default_factory=dict)
    issued: dict[str, str] = field(default_factory=dict)  # credential_id -> activity_id
    revocations: dict[str, str] = field(default_factory=dict)  # credential_id -> reason


@dataclass(frozen=True)
class BindingRecord:
    """Attested subject-to-pod binding, so a processor talking to a pod can
    check it belongs to the expected person before reading or writing."""

    subject: str
    pod_host: str
    attributes: dict
    attested_by: str


class GdprRegistry:
    """Shared directory of agents, keys, controllers, bindings, mailboxes."""

    def __init__(self, rng: DeterministicRng):
        self._rng = rng
        self.agents: dict[str, AgentRef] = {}
        self.keys: dict[str, SigningKey] = {}
        self.mailboxes: dict[str, list[dict]] = {}
        self.controllers: dict[str, ControllerState] = {}
        self.bindings: dict[str, BindingRecord] = {}
        self.credential_issuer: dict[str, str] = {}
        self.mfa = MfaRegistry()
        self._pod_keys: dict[str, str] = {}

    # -- agents -----------------------------------------------------------

    def register_agent(
        self,
        webid: str,
        roles: set[str] | frozenset[str],
        host: str | None = None,
        controller: str | None = None,
        binding_attributes: dict | None = None,
        reputation: int = 1,
    ) -> AgentRef:
        if webid in self.agents:
            raise ValidationError(f"agent already registered: {webid}")
        agent = AgentRef(
            webid=webid,
            roles=frozenset(roles),
            host=host,
            controller=controller,
            binding_attributes=binding_attributes or {},
        )
        self.agents[webid] = agent
        self.keys[webid] = SigningKey.generate(self._rng)
        self.mailboxes[webid] = []
        if "controller" in agent.roles:
            self.controllers[webid] = ControllerState(
                webid=webid,
                escrow_key=self._rng.bytes(32),
                reputation=reputation,
            )
        return agent

    def sign_for(self, webid: str, payload: bytes) -> str:
        key = self.keys.get(webid)
        if key is None:
            raise NotFoundError(f"no key for {webid}")
        return key.sign_hex(payload)

    def register_pod_key(self, pod_id: str, verify_key_hex: str) -> None:
        self._pod_keys[pod_id] = verify_key_hex

    def trusted_keys(self) -> dict[str, str]:
        out = {webid: key.verify_key_hex for webid, key in self.keys.items()}
        out.update(self._pod_keys)
        return out

    def issuer_keys(self) -> dict[str, str]:
        return {
            webid: self.keys[webid].verify_key_hex for webid in self.controllers
        }

    def revoked_credentials(self) -> set[str]:
        out: set[str] = set()
        for state in self.controllers.values():
            out.update(state.revocations)
        return out

    def deliver(self, to: str, message: dict) -> None:
        self.mailboxes.setdefault(to, []).append(message)

    def inbox(self, webid: str) -> list[dict]:
        return list(self.mailboxes.get(webid, []))

    # -- controller records -------------------------------------------------

    def register_activity(self, controller: str, record: RopaRecord) -> str:
        state = self._controller(controller)
        if not record.purposes:
            raise ValidationError("an activity needs at least one purpose")
        if not record.controller_contact:
            raise ValidationError("controller contact details are required")
        if record.activity_id in state.activities:
            raise ValidationError(f"duplicate activity id {record.activity_id}")
        state.activities[record.activity_id] = record
        return record.activity_id

    def _controller(self, webid: str) -> ControllerState:
        state = self.controllers.get(webid)
        if state is None:
            raise AuthorizationError(f"{webid} is not a registered controller")
        return state

    # -- credentials ---------------------------------------------------------

    def issue_credential(
        self,
        controller: str,
        holder: str,
        activity_id: str,
        attributes: dict,
        now_ms: int,
        ttl_ms: int = 30 * 86_400_000,
        delegation_chain: tuple[DelegationLink, ...] = (),
    ) -> Credential:
        """Mint an issuer-signed attribute bundle with escrowed holder identity."""
        state = self._controller(controller)
        activity = state.activities.get(activity_id)
        if activity is None:
            raise NotFoundError(f"unknown activity {activity_id}")
        scopes = list(attributes.get("purpose_scopes") or [])
        outside = [s for s in scopes if s not in activity.purposes]
        if outside:
            raise ValidationError(
                f"purpose scopes {outside} exceed activity purposes"
            )
        credential_id = f"cred-{self._rng.hex(8)}"
        nonce = self._rng.bytes(AEAD_NONCE_LEN)
        escrow_blob = nonce + aead_encrypt(
            state.escrow_key,
            nonce,
            canonical_json({"holder": holder, "credential_id": credential_id}),
        )
        secret = self._rng.bytes(32)
        credential = Credential(
            credential_id=credential_id,
            issuer=controller,
            attributes=dict(attributes),
            activity_id=activity_id,
            escrowed_identity=escrow_blob.hex(),
            delegation_chain=delegation_chain,
            expires_at_ms=now_ms + ttl_ms,
            issuer_signature="",
            credential_secret=secret,
        )
        credential = dataclasses.replace(
            credential,
            issuer_signature=self.sign_for(controller, credential.signed_payload()),
        )
        state.issued[credential_id] = activity_id
        self.credential_issuer[credential_id] = controller
        return credential

    def delegate_credential(
        self,
        base: Credential,
        delegate_holder: str,
        delegate_controller: str,
        now_ms: int,
        max_depth: int = 2,
        role: str = "intermediary",
    ) -> Credential:
        """Extend authority down one hop; the upstream issuer signs the link
        and both controllers stay visible to any verifying pod."""
        if base.credential_id in self.revoked_credentials():
            raise RevokedError("cannot delegate a revoked credential")
        if base.expires_at_ms <= now_ms:
            raise ValidationError("cannot delegate an expired credential")
        if len(base.delegation_chain) + 1 > max_depth:
            raise ValidationError("delegation depth exceeded")
        delegate_state = self._controller(delegate_controller)
        link_payload = canonical_json(
            {
                "upstream_credential_id": base.credential_id,
                "upstream_issuer": base.issuer,
                "delegate_controller": delegate_controller,
            }
        )
        link = DelegationLink(
            upstream_credential_id=base.credential_id,
            upstream_issuer=base.issuer,
            delegate_controller=delegate_controller,
            signature=self.sign_for(base.issuer, link_payload),
        )
        base_activity = self.controllers[base.issuer].activities.get(base.activity_id)
        if base_activity is not None:
            base_activity.delegations.append((delegate_holder, delegate_controller))
        if base.activity_id not in delegate_state.activities:
            delegate_state.activities[base.activity_id] = RopaRecord(
                activity_id=base.activity_id,
                controller_contact=delegate_controller,
                purposes=list(base.attributes.get("purpose_scopes") or []),
                delegations=[],
            )
        return self.issue_credential(
            controller=delegate_controller,
            holder=delegate_holder,
            activity_id=base.activity_id,
            attributes={
                "role": role,
                "organisation": delegate_controller,
                "purpose_scopes": list(base.attributes.get("purpose_scopes") or []),
            },
            now_ms=now_ms,
            ttl_ms=base.expires_at_ms - now_ms,
            delegation_chain=base.delegation_chain + (link,),
        )

    def revoke_credential(self, issuer: str, credential_id: str, reason: str) -> dict:
        state = self._controller(issuer)
        if credential_id not in state.issued:
            raise NotFoundError(f"{issuer} never issued {credential_id}")
        state.revocations[credential_id] = reason
        return {
            "credential_id": credential_id,
            "issuer": issuer,
            "reason": reason,
        }

    # -- subject-pod binding ---------------------------------------------------

    def bind_subject_pod(
        self, subject: str, pod_host: str, attributes: dict, attested_by: str
    ) -> BindingRecord:
        """Record a verified subject-to-pod binding. ``attested_by`` must be
        a registered controller or identity service the processors trust."""
        if subject not in self.agents:
            raise NotFoundError(f"unknown subject {subject}")
        if not attributes:
            raise ValidationError("binding needs verifiable attributes")
        if attested_by not in self.agents:
            raise ValidationError(f"unknown attester {attested_by}")
        record = BindingRecord(
            subject=subject,
            pod_host=pod_host,
            attributes=dict(attributes),
            attested_by=attested_by,
        )
        self.bindings[pod_host] = record
        return record

    def bound_subject(self, pod_host: str) -> str | None:
        record = self.bindings.get(pod_host)
        return record.subject if record else None

    # -- disputes ----------------------------------------------------------------

    def dispute_reveal(
        self,
        controller: str,
        access_entry: dict,
        court_order: bool,
        engine: DecisionEngine,
        now_ms: int,
    ) -> str:
        """Open the escrow behind one logged access.

        Requires a court order, an untampered entry that actually sits in
        the pod's access chain, and that the asking controller issued the
        credential behind the presentation. The reveal itself is logged.
        """
        if not court_order:
            raise AuthorizationError("identity escrow opens only under a court order")
        ledger = engine.ledger
        stored = next(
            (
                e
                for e in ledger.access_log.entries
                if e["seq"] == access_entry.get("seq")
            ),
            None,
        )
        if stored is None or stored != access_entry:
            raise IntegrityError("entry is not part of the access chain")
        report = verify_chain(
            list(ledger.access_log.entries),
            self.trusted_keys(),
            pod_id=ledger.pod_id,
            policy_entries=ledger.policy_log.entries,
        )
        if not report.valid:
            raise IntegrityError("access chain fails verification")
        presentation = engine.presentation_archive.get(access_entry["presentation_ref"])
        if presentation is None:
            raise NotFoundError("presentation not archived for this entry")
        from .authn import verify_presentation

        vp = verify_presentation(
            _replayable(presentation),
            self.issuer_keys(),
            set(),  # revocation does not invalidate past accesses
            now_ms=0,
            max_delegation_depth=16,
        )
        if vp.issuer != controller:
            raise AuthorizationError("only the issuing controller can reveal")
        state = self._controller(controller)
        blob = bytes.fromhex(vp.escrowed_identity)
        payload = from_canonical_json(
            aead_decrypt(state.escrow_key, blob[:AEAD_NONCE_LEN], blob[AEAD_NONCE_LEN:])
        )
        if payload["credential_id"] != vp.credential_id:
            raise IntegrityError("escrow does not match the credential")
        event = {
            "event": "dispute-reveal",
            "access_seq": access_entry["seq"],
            "presentation_ref": access_entry["presentation_ref"],
            "revealed_to": controller,
            "court_order": True,
        }
        sig_payload = policy_sign_payload("amend", now_ms, event)
        ledger.append_policy_entry(
            kind="amend",
            timestamp_ms=now_ms,
            policy=event,
            approver=controller,
            approver_signature=self.sign_for(controller, sig_payload),
            trusted_keys=self.trusted_keys(),
        )
        return payload["holder"]


def _replayable(presentation):
    # verify_presentation takes the dataclass as-is; expiry is skipped by
    # passing now_ms=0, revocations by passing an empty set.
    return presentation


# --------------------------------------------------------------------------
# rights requests
# --------------------------------------------------------------------------

STATES = ("submitted", "notified", "acknowledged", "enforced", "contested")


@dataclass
class RightsRequest:
    request_id: str
    article: int
    subject: str
    target: str          # resource URI for 16/17/18, activity id for 21/22
    state: str
    controller: str | None
    constrained: bool
    article19_token: str | None = None
    payload: bytes | None = None  # replacement content for rectification


def rights_transition(
    article: int, state: str, event: str, has_token: bool, constrained: bool
) -> str | None:
    """Pure transition function for the rights state machine.

    Returns the next state or ``None`` when the event is not allowed from
    this state. Restriction (18) can only reach ``enforced`` with the
    controller's acknowledgment token; nothing else mints one.
    """
    if event == "notify":
        return "notified" if state == "submitted" else None
    if event == "acknowledge":
        return "acknowledged" if state == "notified" else None
    if event == "contest":
        return "contested" if state == "notified" else None
    if event == "enforce":
        if article in (16, 17):
            if constrained:
                return "enforced" if state == "acknowledged" else None
            return "enforced" if state in ("notified", "acknowledged") else None
        if article == 22:
            return "enforced" if state in ("notified", "acknowledged") else None
        if article == 18:
            return "enforced" if state == "acknowledged" and has_token else None
        if article == 21:
            return "enforced" if state == "acknowledged" else None
    return None


class RightsDesk:
    """Coordinates rights requests between subject, controller and pod."""

    def __init__(
        self,
        registry: GdprRegistry,
        store: PodStore,
        engine: DecisionEngine,
        rng: DeterministicRng,
    ):
        self.registry = registry
        self.store = store
        self.engine = engine
        self._rng = rng
        self.requests: dict[str, RightsRequest] = {}

    def _responsible_controller(self, target: str, now_ms: int) -> str | None:
        hits = [
            p
            for p in self.engine.policies.values()
            if p.status == "active"
            and target.startswith(p.pod_prefix)
            and p.controller
            and p.controller != self.engine.subject
        ]
        hits.sort(key=lambda p: (-len(p.pod_prefix), p.policy_id))
        return hits[0].controller if hits else None

    def _is_constrained(self, target: str) -> bool:
        """A contract-basis grant over the target pins it down (billing,
        medical records): the subject cannot unilaterally change it."""
        return any(
            p.status == "active"
            and p.legal_basis is LegalBasis.CONTRACT
            and target.startswith(p.pod_prefix)
            for p in self.engine.policies.values()
        )

    def submit(
        self,
        subject: str,
        article: int,
        target: str,
        now_ms: int,
        payload: bytes | None = None,
    ) -> RightsRequest:
        if article not in ARTICLES:
            raise ValidationError(f"unsupported article {article}")
        if subject != self.engine.subject:
            raise AuthorizationError("rights requests come from the pod's subject")
        constrained = article in (16, 17, 18) and self._is_constrained(target)
        controller = self._responsible_controller(target, now_ms)
        request = RightsRequest(
            request_id=f"rr-{self._rng.hex(6)}",
            article=article,
            subject=subject,
            target=target,
            state="submitted",
            controller=controller,
            constrained=constrained,
            payload=payload,
        )
        self.requests[request.request_id] = request
        # Notification always goes out; enforcement waits on the article's rules.
        request.state = rights_transition(
            article, request.state, "notify", False, constrained
        )
        if controller is not None:
            self.registry.deliver(
                controller,
                {
                    "kind": "rights-notification",
                    "request_id": request.request_id,
                    "article": article,
                    "target": target,
                },
            )
        if rights_transition(article, request.state, "enforce", False, constrained):
            self._enforce(request, now_ms)
        return request

    def acknowledge(self, controller: str, request_id: str, now_ms: int) -> RightsRequest:
        request = self._get(request_id)
        if request.controller != controller:
            raise AuthorizationError("acknowledgment must come from the notified controller")
        next_state = rights_transition(
            request.article, request.state, "acknowledge", False, request.constrained
        )
        if next_state is None:
            raise ValidationError(f"cannot acknowledge from state {request.state}")
        request.state = next_state
        request.article19_token = f"a19-{self._rng.hex(8)}"
        self.registry.deliver(
            request.subject,
            {
                "kind": "rights-acknowledged",
                "request_id": request.request_id,
                "article": request.article,
                "article19_token": request.article19_token,
            },
        )
        return request

    def contest(self, controller: str, request_id: str) -> RightsRequest:
        request = self._get(request_id)
        if request.controller != controller:
            raise AuthorizationError("contest must come from the notified controller")
        next_state = rights_transition(
            request.article, request.state, "contest", False, request.constrained
        )
        if next_state is None:
            raise ValidationError(f"cannot contest from state {request.state}")
        request.state = next_state
        return request

    def enforce(self, request_id: str, now_ms: int, article19_token: str | None = None) -> RightsRequest:
        request = self._get(request_id)
        has_token = (
            request.article19_token is not None
            and article19_token == request.article19_token
        )
        next_state = rights_transition(
            request.article, request.state, "enforce", has_token, request.constrained
        )
        if next_state is None:
            raise AuthorizationError(
                f"article {request.article} cannot be enforced from "
                f"{request.state} (token {'present' if has_token else 'absent'})"
            )
        self._apply_effect(request, now_ms)
        request.state = next_state
        return request

    def _enforce(self, request: RightsRequest, now_ms: int) -> None:
        self._apply_effect(request, now_ms)
        request.state = rights_transition(
            request.article, request.state, "enforce", True, request.constrained
        )

    def _apply_effect(self, request: RightsRequest, now_ms: int) -> None:
        if request.article == 16:
            uri = ResourceUri.parse(request.target)
            existing = self.store.raw_resource(uri)
            content_type = existing.content_type if existing else "text/plain"
            self.store.put_resource(uri, content_type, request.payload or b"")
        elif request.article == 17:
            self.store.erase_resource(ResourceUri.parse(request.target), now_ms)
        elif request.article == 18:
            self.engine.restrict_prefix(request.target)
        elif request.article == 21:
            # Objection: legitimate-interest grants over the target stop.
            for policy in self.engine.policies.values():
                if (
                    policy.status == "active"
                    and policy.legal_basis is LegalBasis.LEGITIMATE_INTEREST
                    and request.target.startswith(policy.pod_prefix)
                ):
                    policy.status = "revoked"
                    policy.revoked_at_ms = now_ms
        elif request.article == 22:
            self.engine.viewer_only_activities.add(request.target)

    def _get(self, request_id: str) -> RightsRequest:
        request = self.requests.get(request_id)
        if request is None:
            raise NotFoundError(f"no such rights request {request_id}")
        return request


# --------------------------------------------------------------------------
# portability
# --------------------------------------------------------------------------


def export_portable(
    subject: str,
    factors: list[MfaFactor],
    registry: GdprRegistry,
    store: PodStore,
    engine: DecisionEngine,
    ledger: AuditLedger,
    config: HardeningConfig,
    now_ms: int,
) -> dict:
    """Structured, deterministic bundle of everything the subject owns:
    live decrypted resources, active policies, and their full log view."""
    if subject != engine.subject:
        raise AuthorizationError("only the pod's subject can export it")
    if not registry.mfa.mfa_gate(
        subject, "portability-export", factors, config.mfa_required_actions
    ):
        raise AuthorizationError("multi-factor check failed for export")
    resources = []
    for res in store.live_resources():
        _, plaintext = store.get_resource(res.uri)
        resources.append(
            {
                "path": res.uri.path,
                "content_type": res.content_type,
                "payload_b64": base64.b64encode(plaintext).decode("ascii"),
            }
        )
    containers = store.container_paths()
    policies = sorted(
        (
            p.snapshot()
            for p in engine.policies.values()
            if p.status == "active"
        ),
        key=lambda s: s["policy_id"],
    )
    return {
        "manifest": {
            "format": "podguard-portability",
            "version": 1,
            "pod_host": store.host,
            "subject": subject,
            "exported_at_ms": now_ms,
        },
        "resources": sorted(resources, key=lambda r: r["path"]),
        "containers": containers,
        "policies": policies,
        "log_view": subject_view(ledger),
    }


def import_bundle(bundle: dict, store: PodStore) -> int:
    """Reproduce the exported resource set inside a fresh pod."""
    if bundle.get("manifest", {}).get("format") != "podguard-portability":
        raise ValidationError("not a portability bundle")
    for path in bundle.get("containers", []):
        store.create_container(ResourceUri(store.host, path))
    count = 0
    for item in bundle.get("resources", []):
        store.put_resource(
            ResourceUri(store.host, item["path"]),
            item["content_type"],
            base64.b64decode(item["payload_b64"]),
        )
        count += 1
    return count
