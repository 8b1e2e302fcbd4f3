"""Deterministic multi-agent execution of scenario scripts.

A world holds the shared registry, the pods (store + ledger + engine +
rights desk each) and a seeded RNG; running the same script with the same
seed produces bytewise-identical ledger exports. Actions execute strictly
in script order on simulated time; "concurrency" is whatever interleaving
the script encodes.

The same action stream can be pushed through an in-process transport or
an HTTP client against a served pod; the pod-side handling is identical,
which is what the transport-independence check pins down.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..codec import canonical_json
from ..config import HardeningConfig, PRESETS, apply_overrides
from ..crypto import DeterministicRng
from ..errors import PodGuardError, ValidationError
from ..gdpr import GdprRegistry, RightsDesk, RopaRecord
from ..ledger import AuditLedger, detect_and_notify
from ..policy import (
    AccessPolicy,
    AudienceClass,
    AuthorizationRequest,
    Decision,
    DecisionEngine,
    Grantee,
    LegalBasis,
    Mode,
    METHOD_MODE,
    Retention,
    RetentionKind,
    ResourceRequest,
)
from ..authn import Credential, present_credential, presentation_signing_key
from ..crypto import SigningKey
from ..ledger import access_receipt_payload, policy_sign_payload
from ..store import PodStore, ResourceUri
from .eavesdrop import Channel
from .script import ScenarioScript, parse_script

FAR_FUTURE_MS = 1 << 50


def webid_for(name: str) -> str:
    return f"https://id.example/{name}"


def default_host(name: str) -> str:
    return f"{name}.pods.example"


@dataclass
class PodUnit:
    name: str
    host: str
    subject: str
    store: PodStore
    ledger: AuditLedger
    engine: DecisionEngine
    desk: RightsDesk
    owner_policy_id: str


@dataclass
class ScenarioResult:
    decisions: list[dict] = field(default_factory=list)
    ledgers: dict[str, dict] = field(default_factory=dict)
    observations: list = field(default_factory=list)
    plaintext_captures: list = field(default_factory=list)
    notices: list = field(default_factory=list)
    world: "World | None" = None

    def export_bytes(self) -> bytes:
        """Canonical bytes covering everything determinism must pin."""
        blob = {
            "decisions": self.decisions,
            "ledgers": {
                name: {
                    "policy": data["policy"].hex(),
                    "access": data["access"].hex(),
                    "anchors": data["anchors"],
                }
                for name, data in sorted(self.ledgers.items())
            },
        }
        return canonical_json(blob)


class World:
    def __init__(self, config: HardeningConfig, seed: int):
        self.config = config
        self.seed = seed
        self.rng = DeterministicRng(f"world:{seed}")
        self.registry = GdprRegistry(self.rng.fork("registry"))
        self.channel = Channel()
        self.pods: dict[str, PodUnit] = {}
        self.credentials: dict[str, Credential] = {}
        self.policy_aliases: dict[str, str] = {}
        self.agent_names: dict[str, str] = {}  # name -> webid
        self.agent_hosts: dict[str, str] = {}

    # -- construction -------------------------------------------------------

    @classmethod
    def from_script(cls, script: ScenarioScript | str) -> "World":
        if isinstance(script, str):
            script = parse_script(script)
        config = apply_overrides(PRESETS[script.preset](), script.overrides)
        world = cls(config, script.seed)
        for agent in script.agents:
            world.add_agent(
                agent["name"], agent["roles"], host=agent.get("host"),
                controller=agent.get("controller"),
            )
        for pod_subject in script.pods:
            world.create_pod(pod_subject)
        for activity in script.activities:
            world.registry.register_activity(
                world.agent_names[activity["controller"]],
                RopaRecord(
                    activity_id=activity["activity_id"],
                    controller_contact=activity["contact"],
                    purposes=activity["purposes"],
                ),
            )
        for cred in script.credentials:
            world.credentials[cred["name"]] = world.registry.issue_credential(
                controller=world.agent_names[cred["issuer"]],
                holder=world.agent_names[cred["holder"]],
                activity_id=cred["activity_id"],
                attributes={
                    "role": cred["role"],
                    "organisation": cred["organisation"],
                    "purpose_scopes": cred["purpose_scopes"],
                },
                now_ms=0,
                ttl_ms=FAR_FUTURE_MS,
            )
        for binding in script.bindings:
            world.registry.bind_subject_pod(
                world.agent_names[binding["subject"]],
                binding["pod_host"],
                binding["attributes"] or {"registered": "yes"},
                world.agent_names[binding["attester"]],
            )
        world._script = script
        return world

    def add_agent(
        self,
        name: str,
        roles: list[str],
        host: str | None = None,
        controller: str | None = None,
        reputation: int = 5,
    ) -> str:
        webid = webid_for(name)
        controller_webid = self.agent_names.get(controller) if controller else None
        self.registry.register_agent(
            webid,
            set(roles),
            host=host or default_host(name),
            controller=controller_webid,
            reputation=reputation,
        )
        self.agent_names[name] = webid
        self.agent_hosts[name] = host or default_host(name)
        return webid

    def create_pod(self, subject_name: str, now_ms: int = 0,
                   data_dir=None) -> PodUnit:
        subject = self.agent_names[subject_name]
        host = self.agent_hosts[subject_name]
        pod_rng = self.rng.fork(f"pod:{subject_name}")
        store = PodStore(host, rng=pod_rng.fork("store"), data_dir=data_dir)
        ledger = AuditLedger(f"pod:{host}", SigningKey.generate(pod_rng.fork("key")))
        self.registry.register_pod_key(ledger.pod_id, ledger.pod_verify_key_hex)
        engine = DecisionEngine(
            store=store,
            ledger=ledger,
            config=self.config,
            subject=subject,
            trusted_keys=self.registry.trusted_keys,
            issuer_keys=self.registry.issuer_keys,
            revoked_credentials=self.registry.revoked_credentials,
            rng=pod_rng.fork("engine"),
            notify=self.registry.deliver,
        )
        desk = RightsDesk(self.registry, store, engine, pod_rng.fork("desk"))
        owner_policy = self._bootstrap_owner_policy(engine, subject, now_ms)
        unit = PodUnit(
            name=subject_name,
            host=host,
            subject=subject,
            store=store,
            ledger=ledger,
            engine=engine,
            desk=desk,
            owner_policy_id=owner_policy.policy_id,
        )
        self.pods[subject_name] = unit
        return unit

    def _bootstrap_owner_policy(
        self, engine: DecisionEngine, subject: str, now_ms: int
    ) -> AccessPolicy:
        """The subject's own full-control grant; every owner access is a
        normal logged access under this policy."""
        request = AuthorizationRequest(
            pod_prefix=f"https://{engine.store.host}/",
            grantee=Grantee(kind="agent", agent=subject),
            modes=frozenset(Mode),
            audience_class=AudienceClass.VIEWER,
            legal_basis=LegalBasis.CONSENT,
            purpose="",
            valid_from_ms=now_ms,
            valid_until_ms=FAR_FUTURE_MS,
            retention=Retention(RetentionKind.UNRESTRICTED),
            requester=subject,
            controller=subject,
        )
        snapshot = engine.draft_policy(request, now_ms)
        payload = policy_sign_payload("grant", now_ms, snapshot)
        signature = self.registry.sign_for(subject, payload)
        return engine.grant_policy(
            snapshot, subject, signature, subject, signature, now_ms
        )

    # -- signing helpers -----------------------------------------------------

    def signed_resource_request(
        self,
        actor_name: str | None,
        pod: PodUnit,
        method: str,
        path: str,
        at_ms: int,
        purpose: str = "",
        policy_alias: str | None = None,
        credential_name: str | None = None,
        content_type: str | None = None,
        body: bytes = b"",
        source_host: str | None = None,
        headers: dict | None = None,
    ) -> ResourceRequest:
        """Build a request the way a client would: presentation or agent
        identity, the asserted policy, and a signed access receipt."""
        uri = ResourceUri(pod.host, path)
        req_headers = dict(headers or {})
        if content_type:
            req_headers["content-type"] = content_type
        policy_id = (
            self.policy_aliases[policy_alias]
            if policy_alias
            else pod.owner_policy_id
        )
        mode = METHOD_MODE[method.upper()]
        presentation = None
        agent = None
        if credential_name is not None:
            credential = self.credentials[credential_name]
            presentation = present_credential(
                credential,
                ["role", "organisation", "purpose_scopes"],
                self.rng,
                at_ms,
                self.registry.revoked_credentials(),
            )
            actor_ref = presentation.presentation_id
            actor_key_hex = presentation.processor_signature_key
            signer = presentation_signing_key(
                credential.credential_secret, presentation.presentation_id
            )
        elif actor_name is not None:
            agent = self.agent_names[actor_name]
            actor_ref = agent
            actor_key_hex = self.registry.keys[agent].verify_key_hex
            signer = self.registry.keys[agent]
        else:
            actor_ref = ""
            actor_key_hex = ""
            signer = None
        receipt_signature = None
        if signer is not None:
            payload = access_receipt_payload(
                at_ms, actor_ref, actor_key_hex, str(uri), mode.value,
                policy_id, purpose,
            )
            receipt_signature = signer.sign_hex(payload)
        return ResourceRequest(
            method=method.upper(),
            uri=uri,
            headers=req_headers,
            body=body,
            agent=agent,
            presentation=presentation,
            asserted_purpose=purpose,
            asserted_policy_id=policy_id if signer is not None else None,
            receipt_signature=receipt_signature,
            receipt_time_ms=at_ms if signer is not None else None,
            source_host=source_host
            or (self.agent_hosts.get(actor_name or "", "client.example")),
        )

    def build_authorization_request(self, action: dict) -> AuthorizationRequest:
        pod = self.pods[action["pod"]]
        grantee_spec = action["grantee"]
        if grantee_spec.startswith("agent:"):
            grantee = Grantee(
                kind="agent", agent=self.agent_names[grantee_spec.split(":", 1)[1]]
            )
        else:
            _, issuer, role = grantee_spec.split(":", 2)
            grantee = Grantee(
                kind="class", issuer=self.agent_names[issuer], role=role
            )
        retention_spec = action["retention"]
        if retention_spec == "unrestricted":
            retention = Retention(RetentionKind.UNRESTRICTED)
        elif retention_spec == "destroy-after-use":
            retention = Retention(RetentionKind.DESTROY_AFTER_USE)
        else:
            retention = Retention(
                RetentionKind.WINDOW, int(retention_spec.split(":", 1)[1])
            )
        requester = self.agent_names[action["requester"]]
        requester_agent = self.registry.agents[requester]
        controller = (
            requester
            if "controller" in requester_agent.roles
            else requester_agent.controller or requester
        )
        return AuthorizationRequest(
            pod_prefix=f"https://{pod.host}" + (
                action.get("prefix") or "/"
            ),
            grantee=grantee,
            modes=frozenset(Mode(m) for m in action["modes"]),
            audience_class=AudienceClass(action["audience"]),
            legal_basis=LegalBasis(action["basis"]),
            purpose=action["purpose"],
            valid_from_ms=action["valid_from_ms"],
            valid_until_ms=action["valid_until_ms"],
            retention=retention,
            requester=requester,
            controller=controller,
        )

    # -- detection ------------------------------------------------------------

    def detect(self, pod_name: str, now_ms: int, sybil_fraction: float = 0.0):
        """Run incident detection for one pod and deliver any notices to
        the subject's and every oversight officer's mailbox."""
        unit = self.pods[pod_name]
        notices = detect_and_notify(
            unit.ledger,
            unit.engine.request_trace,
            self.config.probe_burst_threshold,
            sybil_fraction,
            self.config.sybil_fraction_threshold,
            self.registry.trusted_keys(),
            now_ms,
        )
        dpos = [
            webid for webid, agent in self.registry.agents.items()
            if "dpo" in agent.roles
        ]
        for notice in notices:
            for recipient in [unit.subject, *dpos]:
                self.registry.deliver(recipient, notice.to_dict())
        return notices


class SimTransport:
    """In-process execution plus channel observation of each exchange."""

    def __init__(self, world: World):
        self.world = world

    def resource_request(
        self, pod: PodUnit, request: ResourceRequest, at_ms: int
    ) -> Decision:
        wire = {
            "method": request.method,
            "uri": str(request.uri),
            "headers": request.headers,
            "purpose": request.asserted_purpose,
            "policy": request.asserted_policy_id,
            "presentation": (
                request.presentation.to_dict() if request.presentation else None
            ),
            "agent": request.agent,
            "receipt": request.receipt_signature,
            "body": request.body.hex(),
        }
        self.world.channel.transmit(
            at_ms, request.source_host, pod.host, canonical_json(wire), "request"
        )
        decision = pod.engine.evaluate(request, at_ms)
        self.world.channel.transmit(
            at_ms, pod.host, request.source_host, decision.serialize(), "response"
        )
        return decision

    def mkcol(self, pod: PodUnit, actor: str, path: str, at_ms: int) -> None:
        if actor != pod.subject:
            raise ValidationError("only the subject creates containers")
        pod.store.create_container(ResourceUri(pod.host, path))

    def draft_policy(self, pod: PodUnit, request: AuthorizationRequest, at_ms: int) -> dict:
        return pod.engine.draft_policy(request, at_ms)

    def grant_policy(
        self, pod: PodUnit, snapshot: dict, at_ms: int,
        approver: str, approver_signature: str,
        requester: str, requester_signature: str,
    ):
        return pod.engine.grant_policy(
            snapshot, approver, approver_signature, requester,
            requester_signature, at_ms,
        )

    def revoke_policy(
        self, pod: PodUnit, policy_id: str, actor: str, signature: str, at_ms: int
    ):
        return pod.engine.revoke_policy(policy_id, actor, signature, at_ms)

    def anchor(self, pod: PodUnit, at_ms: int):
        return pod.ledger.anchor(at_ms)

    def export_ledgers(self, pod: PodUnit) -> dict:
        return {
            "policy": pod.ledger.policy_log.export_lines(),
            "access": pod.ledger.access_log.export_lines(),
            "anchors": [a.to_dict() for a in pod.ledger.anchors],
        }


def authorization_request_to_dict(request: AuthorizationRequest) -> dict:
    return {
        "pod_prefix": request.pod_prefix,
        "grantee": request.grantee.to_dict(),
        "modes": sorted(m.value for m in request.modes),
        "audience_class": request.audience_class.value,
        "legal_basis": request.legal_basis.value if request.legal_basis else None,
        "purpose": request.purpose,
        "valid_from_ms": request.valid_from_ms,
        "valid_until_ms": request.valid_until_ms,
        "retention": request.retention.to_dict(),
        "requester": request.requester,
        "controller": request.controller,
    }


def authorization_request_from_dict(data: dict) -> AuthorizationRequest:
    return AuthorizationRequest(
        pod_prefix=data["pod_prefix"],
        grantee=Grantee(**data["grantee"]),
        modes=frozenset(Mode(m) for m in data["modes"]),
        audience_class=AudienceClass(data["audience_class"]),
        legal_basis=LegalBasis(data["legal_basis"]) if data.get("legal_basis") else None,
        purpose=data["purpose"],
        valid_from_ms=data["valid_from_ms"],
        valid_until_ms=data["valid_until_ms"],
        retention=Retention(
            RetentionKind(data["retention"]["kind"]),
            data["retention"].get("window_ms"),
        ),
        requester=data["requester"],
        controller=data["controller"],
    )


class HttpTransport:
    """Drive every pod action through a real local socket.

    Each pod in the world is served on its own port; the harness sets the
    service clock before each request, so simulated time matches the
    in-process transport tick for tick.
    """

    def __init__(self, world: World):
        from ..service import serve_pod

        self.world = world
        self.handles = {
            name: serve_pod(unit, world.registry, world.config)
            for name, unit in sorted(world.pods.items())
        }

    def close(self) -> None:
        for handle in self.handles.values():
            handle.stop()

    def _conn(self, pod: PodUnit):
        import http.client

        handle = self.handles[pod.name]
        return http.client.HTTPConnection("127.0.0.1", handle.port, timeout=10)

    def _set_clock(self, pod: PodUnit, at_ms: int) -> None:
        self.handles[pod.name].clock.now_ms = at_ms

    def resource_request(
        self, pod: PodUnit, request: ResourceRequest, at_ms: int
    ) -> Decision:
        import base64

        self._set_clock(pod, at_ms)
        headers = dict(request.headers)
        if request.agent:
            headers["x-agent"] = request.agent
        if request.presentation is not None:
            headers["authorization"] = "Presentation " + base64.b64encode(
                canonical_json(request.presentation.to_dict())
            ).decode("ascii")
        if request.asserted_purpose:
            headers["x-purpose"] = request.asserted_purpose
        if request.asserted_policy_id:
            headers["x-policy-id"] = request.asserted_policy_id
        if request.receipt_signature:
            headers["x-receipt-signature"] = request.receipt_signature
        if request.receipt_time_ms is not None:
            headers["x-receipt-time"] = str(request.receipt_time_ms)
        headers["x-source-host"] = request.source_host
        conn = self._conn(pod)
        try:
            conn.request(
                request.method, request.uri.path, body=request.body, headers=headers
            )
            response = conn.getresponse()
            body = response.read()
            resp_headers = {
                k.lower(): v
                for k, v in response.getheaders()
                if k.lower() != "content-length"
            }
            return Decision(response.status, resp_headers, body)
        finally:
            conn.close()

    def _admin(self, pod: PodUnit, path: str, payload: dict, at_ms: int,
               method: str = "POST") -> dict:
        import json as _json

        self._set_clock(pod, at_ms)
        conn = self._conn(pod)
        try:
            body = canonical_json(payload) if payload is not None else None
            conn.request(
                method, path, body=body,
                headers={"x-agent": pod.subject, "content-type": "application/json"},
            )
            response = conn.getresponse()
            raw = response.read()
            if response.status != 200:
                raise ValidationError(
                    f"admin call {path} failed with {response.status}"
                )
            return _json.loads(raw)
        finally:
            conn.close()

    def mkcol(self, pod: PodUnit, actor: str, path: str, at_ms: int) -> None:
        if actor != pod.subject:
            raise ValidationError("only the subject creates containers")
        self._admin(pod, "/admin/mkcol", {"path": path}, at_ms)

    def draft_policy(self, pod: PodUnit, request: AuthorizationRequest, at_ms: int) -> dict:
        return self._admin(
            pod, "/admin/policies/draft", authorization_request_to_dict(request), at_ms
        )

    def grant_policy(
        self, pod: PodUnit, snapshot: dict, at_ms: int,
        approver: str, approver_signature: str,
        requester: str, requester_signature: str,
    ):
        return self._admin(
            pod,
            "/admin/policies",
            {
                "snapshot": snapshot,
                "timestamp_ms": at_ms,
                "approver": approver,
                "approver_signature": approver_signature,
                "requester": requester,
                "requester_signature": requester_signature,
            },
            at_ms,
        )

    def revoke_policy(
        self, pod: PodUnit, policy_id: str, actor: str, signature: str, at_ms: int
    ):
        return self._admin(
            pod,
            "/admin/policies/revoke",
            {
                "policy_id": policy_id,
                "actor": actor,
                "signature": signature,
                "timestamp_ms": at_ms,
            },
            at_ms,
        )

    def anchor(self, pod: PodUnit, at_ms: int):
        return self._admin(pod, "/admin/anchor", {}, at_ms)

    def export_ledgers(self, pod: PodUnit) -> dict:
        data = self._admin(pod, "/admin/export", None, self.handles[pod.name].clock.now_ms, "GET")
        return {
            "policy": bytes.fromhex(data["policy_hex"]),
            "access": bytes.fromhex(data["access_hex"]),
            "anchors": data["anchors"],
        }


def run_scenario(
    script: ScenarioScript | str, transport_factory=None
) -> ScenarioResult:
    """Execute a script to completion and collect every artifact."""
    world = World.from_script(script)
    script_obj = world._script
    transport = (
        transport_factory(world) if transport_factory else SimTransport(world)
    )
    result = ScenarioResult()
    try:
        for action in script_obj.actions:
            _execute(world, transport, action, result)
        for name, unit in sorted(world.pods.items()):
            result.ledgers[name] = transport.export_ledgers(unit)
    finally:
        closer = getattr(transport, "close", None)
        if closer:
            closer()
    result.observations = list(world.channel.observations)
    result.plaintext_captures = list(world.channel.plaintext_captures)
    result.world = world
    return result


def _execute(world: World, transport, action: dict, result: ScenarioResult) -> None:
    kind = action["kind"]
    at_ms = action["at_ms"]
    outcome: dict = {"at_ms": at_ms, "kind": kind}
    try:
        if kind == "mkcol":
            pod = world.pods[action["pod"]]
            transport.mkcol(pod, world.agent_names[action["actor"]], action["path"], at_ms)
            outcome["status"] = "ok"
        elif kind == "put":
            pod = world.pods[action["pod"]]
            request = world.signed_resource_request(
                action["actor"], pod, "PUT", action["path"], at_ms,
                content_type=action["content_type"],
                body=action["payload"].encode("utf-8"),
            )
            decision = transport.resource_request(pod, request, at_ms)
            outcome["status"] = decision.status
        elif kind in ("get", "head", "delete"):
            pod = world.pods[action["pod"]]
            request = world.signed_resource_request(
                action["actor"], pod, kind.upper(), action["path"], at_ms,
                purpose=action.get("purpose", ""),
                policy_alias=action.get("policy"),
                credential_name=action.get("credential"),
            )
            decision = transport.resource_request(pod, request, at_ms)
            outcome["status"] = decision.status
            from ..crypto import sha256_hex

            outcome["response_digest"] = sha256_hex(decision.serialize())[:16]
        elif kind == "grant":
            pod = world.pods[action["pod"]]
            authreq = world.build_authorization_request(action)
            snapshot = transport.draft_policy(pod, authreq, at_ms)
            payload = policy_sign_payload("grant", at_ms, snapshot)
            approver = world.agent_names[action["approver"]]
            requester = world.agent_names[action["requester"]]
            transport.grant_policy(
                pod, snapshot, at_ms,
                approver, world.registry.sign_for(approver, payload),
                requester, world.registry.sign_for(requester, payload),
            )
            world.policy_aliases[action["alias"]] = snapshot["policy_id"]
            outcome["status"] = "granted"
            outcome["policy_id"] = snapshot["policy_id"]
        elif kind == "revoke":
            policy_id = world.policy_aliases[action["alias"]]
            actor = world.agent_names[action["actor"]]
            pod = next(
                u for u in world.pods.values()
                if policy_id in u.engine.policies
            )
            statement = {
                "policy_id": policy_id,
                "status": "revoked",
                "revoked_at_ms": at_ms,
            }
            payload = policy_sign_payload("revoke", at_ms, statement)
            transport.revoke_policy(
                pod, policy_id, actor, world.registry.sign_for(actor, payload), at_ms
            )
            outcome["status"] = "revoked"
        elif kind == "probe":
            pod = world.pods[action["pod"]]
            request = world.signed_resource_request(
                None, pod, "GET", action["path"], at_ms,
                source_host=action["source"],
            )
            decision = transport.resource_request(pod, request, at_ms)
            outcome["status"] = decision.status
        elif kind == "anchor":
            pod = world.pods[action["pod"]]
            transport.anchor(pod, at_ms)
            outcome["status"] = "anchored"
        else:  # pragma: no cover - parser rejects unknown kinds
            raise ValidationError(f"unhandled action {kind}")
    except PodGuardError as exc:
        outcome["status"] = "error"
        outcome["error"] = f"{type(exc).__name__}: {exc}"
    result.decisions.append(outcome)
