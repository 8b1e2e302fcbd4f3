import pytest

from podguard.config import hardened_preset, legacy_preset
from podguard.gdpr import RopaRecord
from podguard.harness.world import (
    FAR_FUTURE_MS,
    SimTransport,
    World,
)
from podguard.ledger import policy_sign_payload
from podguard.store import ResourceUri


class Clinic:
    """A populated world: subject alice with a health record, controller
    clinic, credentialed doctor, viewer bob. Actions go through the same
    transport layer the harness uses."""

    def __init__(self, config=None, seed=42):
        self.world = World(config or hardened_preset(), seed)
        w = self.world
        self.alice = w.add_agent("alice", ["data-subject"], host="alice.pods.example")
        self.clinic = w.add_agent("clinic", ["controller"], reputation=8)
        self.doctor = w.add_agent("doctor", ["processor"], controller="clinic")
        self.bob = w.add_agent("bob", ["viewer"])
        self.pod = w.create_pod("alice")
        w.registry.register_activity(
            self.clinic,
            RopaRecord(
                activity_id="medical-care",
                controller_contact="dpo@clinic.example",
                purposes=["medical-diagnosis", "covid-recovery-statistics"],
            ),
        )
        self.credential = w.registry.issue_credential(
            self.clinic,
            self.doctor,
            "medical-care",
            {
                "role": "physician",
                "organisation": "clinic",
                "purpose_scopes": ["medical-diagnosis"],
            },
            now_ms=0,
            ttl_ms=FAR_FUTURE_MS,
        )
        w.credentials["doccred"] = self.credential
        self.transport = SimTransport(w)
        self.now = 100
        self.mkcol("/health/")
        self.put("/health/vaccination.ttl", b"<#me> <vaccinated> true .")

    def tick(self, step=10):
        self.now += step
        return self.now

    def mkcol(self, path):
        self.transport.mkcol(self.pod, self.alice, path, self.tick())

    def put(self, path, body, actor="alice", content_type="text/turtle"):
        request = self.world.signed_resource_request(
            actor, self.pod, "PUT", path, self.tick(),
            content_type=content_type, body=body,
        )
        return self.transport.resource_request(self.pod, request, self.now)

    def request(self, method, path, actor=None, credential=None, purpose="",
                policy_alias=None, headers=None, at=None, **kw):
        at = at if at is not None else self.tick()
        request = self.world.signed_resource_request(
            actor, self.pod, method, path, at,
            purpose=purpose, policy_alias=policy_alias,
            credential_name=credential, headers=headers, **kw,
        )
        return self.transport.resource_request(self.pod, request, at)

    def bare_request(self, method, path, source="probe.evil.example", headers=None):
        from podguard.policy import ResourceRequest

        at = self.tick()
        request = ResourceRequest(
            method=method,
            uri=ResourceUri(self.pod.host, path),
            headers=headers or {},
            source_host=source,
        )
        return self.pod.engine.evaluate(request, at)

    def grant(self, alias, grantee, modes=("read",), basis="consent",
              purpose="medical-diagnosis", retention="unrestricted",
              audience=None, requester="clinic", approver="alice",
              valid_from=0, valid_until=FAR_FUTURE_MS, prefix="/"):
        action = {
            "pod": "alice",
            "grantee": grantee,
            "modes": list(modes),
            "basis": basis,
            "purpose": purpose,
            "valid_from_ms": valid_from,
            "valid_until_ms": valid_until,
            "retention": retention,
            "requester": requester,
            "audience": audience
            or ("processor" if grantee.startswith("class:") else "viewer"),
            "prefix": prefix,
        }
        authreq = self.world.build_authorization_request(action)
        at = self.tick()
        snapshot = self.transport.draft_policy(self.pod, authreq, at)
        payload = policy_sign_payload("grant", at, snapshot)
        approver_id = self.world.agent_names[approver]
        requester_id = self.world.agent_names[requester]
        self.transport.grant_policy(
            self.pod, snapshot, at,
            approver_id, self.world.registry.sign_for(approver_id, payload),
            requester_id, self.world.registry.sign_for(requester_id, payload),
        )
        self.world.policy_aliases[alias] = snapshot["policy_id"]
        return snapshot["policy_id"]

    def revoke(self, alias, actor="alice"):
        policy_id = self.world.policy_aliases[alias]
        at = self.tick()
        statement = {"policy_id": policy_id, "status": "revoked", "revoked_at_ms": at}
        payload = policy_sign_payload("revoke", at, statement)
        actor_id = self.world.agent_names[actor]
        return self.transport.revoke_policy(
            self.pod, policy_id, actor_id,
            self.world.registry.sign_for(actor_id, payload), at,
        )


@pytest.fixture
def clinic():
    return Clinic()


@pytest.fixture
def legacy_clinic():
    return Clinic(config=legacy_preset())
