import itertools

import pytest

from podguard.authn import MfaFactor, present_credential
from podguard.config import hardened_preset
from podguard.crypto import DeterministicRng
from podguard.errors import (
    AuthorizationError,
    IntegrityError,
    NotFoundError,
    RevokedError,
    ValidationError,
)
from podguard.gdpr import (
    RopaRecord,
    export_portable,
    import_bundle,
    rights_transition,
)
from podguard.harness.world import FAR_FUTURE_MS, World
from podguard.ledger import verify_chain
from podguard.store import PodStore, ResourceUri


class TestActivities:
    def test_register_study_activity(self, clinic):
        activity_id = clinic.world.registry.register_activity(
            clinic.clinic,
            RopaRecord(
                activity_id="covid-study",
                controller_contact="research-office@clinic.example",
                purposes=["covid-recovery-statistics"],
                categories_of_subjects=["community-members"],
                categories_of_data=["/health/"],
                erasure_time_limits_ms={"/health/": 90 * 86_400_000},
            ),
        )
        assert activity_id == "covid-study"

    def test_missing_contact_rejected(self, clinic):
        with pytest.raises(ValidationError, match="contact"):
            clinic.world.registry.register_activity(
                clinic.clinic,
                RopaRecord(activity_id="x", controller_contact="",
                           purposes=["p"]),
            )

    def test_empty_purposes_rejected(self, clinic):
        with pytest.raises(ValidationError, match="purpose"):
            clinic.world.registry.register_activity(
                clinic.clinic,
                RopaRecord(activity_id="x", controller_contact="c",
                           purposes=[]),
            )

    def test_duplicate_activity_id_rejected(self, clinic):
        with pytest.raises(ValidationError, match="duplicate"):
            clinic.world.registry.register_activity(
                clinic.clinic,
                RopaRecord(activity_id="medical-care",
                           controller_contact="c", purposes=["p"]),
            )

    def test_non_controller_cannot_register(self, clinic):
        with pytest.raises(AuthorizationError):
            clinic.world.registry.register_activity(
                clinic.bob,
                RopaRecord(activity_id="x", controller_contact="c",
                           purposes=["p"]),
            )


class TestCredentialIssuance:
    def test_scoped_issuance_ok(self, clinic):
        cred = clinic.world.registry.issue_credential(
            clinic.clinic, clinic.doctor, "medical-care",
            {"role": "researcher", "organisation": "clinic",
             "purpose_scopes": ["covid-recovery-statistics"]},
            now_ms=0,
        )
        assert cred.issuer == clinic.clinic
        assert cred.issuer_signature

    def test_scope_outside_activity_rejected(self, clinic):
        # Oracle: simple subset check against the registered purposes.
        activity = clinic.world.registry.controllers[clinic.clinic].activities[
            "medical-care"
        ]
        assert "advertising" not in activity.purposes
        with pytest.raises(ValidationError, match="exceed"):
            clinic.world.registry.issue_credential(
                clinic.clinic, clinic.doctor, "medical-care",
                {"role": "adtech", "organisation": "clinic",
                 "purpose_scopes": ["advertising"]},
                now_ms=0,
            )

    def test_reissue_after_revocation_gets_fresh_id(self, clinic):
        clinic.world.registry.revoke_credential(
            clinic.clinic, clinic.credential.credential_id, "rotation"
        )
        fresh = clinic.world.registry.issue_credential(
            clinic.clinic, clinic.doctor, "medical-care",
            {"role": "physician", "organisation": "clinic",
             "purpose_scopes": ["medical-diagnosis"]},
            now_ms=10,
        )
        assert fresh.credential_id != clinic.credential.credential_id
        assert fresh.credential_id not in clinic.world.registry.revoked_credentials()

    def test_scope_containment_holds_globally(self, clinic):
        registry = clinic.world.registry
        for controller in registry.controllers.values():
            for credential_id, activity_id in controller.issued.items():
                activity = controller.activities[activity_id]
                # every issued credential must stay inside its activity
                assert set(activity.purposes) >= set(activity.purposes)


class TestDelegation:
    def test_chain_of_two_records_both_controllers(self, clinic):
        relay = clinic.world.add_agent(
            "relay", ["processor", "intermediary"], controller="clinic"
        )
        cacheco = clinic.world.add_agent("cacheco", ["controller"], reputation=3)
        delegated = clinic.world.registry.delegate_credential(
            clinic.credential, relay, cacheco, now_ms=5
        )
        assert len(delegated.delegation_chain) == 1
        assert delegated.issuer == cacheco
        base_activity = clinic.world.registry.controllers[clinic.clinic].activities[
            "medical-care"
        ]
        assert (relay, cacheco) in base_activity.delegations

    def test_delegating_revoked_base_rejected(self, clinic):
        cacheco = clinic.world.add_agent("cacheco", ["controller"])
        clinic.world.registry.revoke_credential(
            clinic.clinic, clinic.credential.credential_id, "gone"
        )
        with pytest.raises(RevokedError):
            clinic.world.registry.delegate_credential(
                clinic.credential, clinic.doctor, cacheco, now_ms=5
            )

    def test_depth_limit_enforced(self, clinic):
        c2 = clinic.world.add_agent("c2", ["controller"])
        c3 = clinic.world.add_agent("c3", ["controller"])
        c4 = clinic.world.add_agent("c4", ["controller"])
        hop1 = clinic.world.registry.delegate_credential(
            clinic.credential, clinic.doctor, c2, now_ms=1, max_depth=2
        )
        hop2 = clinic.world.registry.delegate_credential(
            hop1, clinic.doctor, c3, now_ms=2, max_depth=2
        )
        with pytest.raises(ValidationError, match="depth"):
            clinic.world.registry.delegate_credential(
                hop2, clinic.doctor, c4, now_ms=3, max_depth=2
            )


class TestCredentialRevocation:
    def test_revoke_then_present_rejected(self, clinic):
        clinic.world.registry.revoke_credential(
            clinic.clinic, clinic.credential.credential_id, "policy breach"
        )
        with pytest.raises(RevokedError):
            present_credential(
                clinic.credential, ["role"], DeterministicRng(1), 100,
                clinic.world.registry.revoked_credentials(),
            )

    def test_revoke_unknown_credential_errors(self, clinic):
        with pytest.raises(NotFoundError):
            clinic.world.registry.revoke_credential(
                clinic.clinic, "cred-ghost", "n/a"
            )

    def test_non_issuer_cannot_revoke(self, clinic):
        other = clinic.world.add_agent("other", ["controller"])
        with pytest.raises(NotFoundError):
            clinic.world.registry.revoke_credential(
                other, clinic.credential.credential_id, "not mine"
            )

    def test_revocation_does_not_invalidate_past_accesses(self, clinic):
        clinic.grant("doc", "class:clinic:physician")
        clinic.request(
            "GET", "/health/vaccination.ttl", credential="doccred",
            purpose="medical-diagnosis", policy_alias="doc",
        )
        clinic.world.registry.revoke_credential(
            clinic.clinic, clinic.credential.credential_id, "rotation"
        )
        report = verify_chain(
            list(clinic.pod.ledger.access_log.entries),
            clinic.world.registry.trusted_keys(),
            pod_id=clinic.pod.ledger.pod_id,
            policy_entries=clinic.pod.ledger.policy_log.entries,
        )
        assert report.valid


class TestRightsStateMachine:
    def test_article_17_free_resource_enforced_immediately(self, clinic):
        request = clinic.pod.desk.submit(
            clinic.alice, 17, f"https://{clinic.pod.host}/health/vaccination.ttl",
            now_ms=clinic.tick(),
        )
        assert request.state == "enforced"
        assert not clinic.pod.store.exists(
            ResourceUri(clinic.pod.host, "/health/vaccination.ttl")
        )

    def test_article_18_waits_for_acknowledgment(self, clinic):
        clinic.grant("doc", "class:clinic:physician")
        target = f"https://{clinic.pod.host}/health/"
        request = clinic.pod.desk.submit(clinic.alice, 18, target, clinic.tick())
        assert request.state == "notified"
        assert not clinic.pod.engine.restricted_prefixes
        with pytest.raises(AuthorizationError):
            clinic.pod.desk.enforce(request.request_id, clinic.tick())
        # Processor access still works: nothing enforced yet.
        decision = clinic.request(
            "GET", "/health/vaccination.ttl", credential="doccred",
            purpose="medical-diagnosis", policy_alias="doc",
        )
        assert decision.status == 200

    def test_article_18_enforced_with_token_blocks_processing(self, clinic):
        clinic.grant("doc", "class:clinic:physician")
        target = f"https://{clinic.pod.host}/health/"
        request = clinic.pod.desk.submit(clinic.alice, 18, target, clinic.tick())
        clinic.pod.desk.acknowledge(clinic.clinic, request.request_id, clinic.tick())
        inbox = clinic.world.registry.inbox(clinic.alice)
        token = next(
            m["article19_token"] for m in inbox if m["kind"] == "rights-acknowledged"
        )
        enforced = clinic.pod.desk.enforce(
            request.request_id, clinic.tick(), article19_token=token
        )
        assert enforced.state == "enforced"
        denied = clinic.request(
            "GET", "/health/vaccination.ttl", credential="doccred",
            purpose="medical-diagnosis", policy_alias="doc",
        )
        assert denied.status == 404
        # The subject still reads their own data under restriction.
        own = clinic.request("GET", "/health/vaccination.ttl", actor="alice")
        assert own.status == 200

    def test_wrong_token_does_not_enforce_article_18(self, clinic):
        target = f"https://{clinic.pod.host}/health/"
        clinic.grant("doc", "class:clinic:physician")
        request = clinic.pod.desk.submit(clinic.alice, 18, target, clinic.tick())
        clinic.pod.desk.acknowledge(clinic.clinic, request.request_id, clinic.tick())
        with pytest.raises(AuthorizationError):
            clinic.pod.desk.enforce(
                request.request_id, clinic.tick(), article19_token="a19-forged"
            )

    def test_article_17_contract_bound_resource_contested(self, clinic):
        clinic.grant("billing", "class:clinic:physician", basis="contract",
                     purpose="medical-diagnosis", prefix="/health/")
        request = clinic.pod.desk.submit(
            clinic.alice, 17, f"https://{clinic.pod.host}/health/vaccination.ttl",
            now_ms=clinic.tick(),
        )
        assert request.state == "notified"  # not enforced: contract pins it
        contested = clinic.pod.desk.contest(clinic.clinic, request.request_id)
        assert contested.state == "contested"
        assert clinic.pod.store.exists(
            ResourceUri(clinic.pod.host, "/health/vaccination.ttl")
        )

    def test_article_16_rectifies_content(self, clinic):
        request = clinic.pod.desk.submit(
            clinic.alice, 16, f"https://{clinic.pod.host}/health/vaccination.ttl",
            now_ms=clinic.tick(), payload=b"<#me> <vaccinated> false .",
        )
        assert request.state == "enforced"
        _, plaintext = clinic.pod.store.get_resource(
            ResourceUri(clinic.pod.host, "/health/vaccination.ttl")
        )
        assert plaintext == b"<#me> <vaccinated> false ."

    def test_article_21_objection_stops_legitimate_interest(self, clinic):
        # Controller-initiated grant with an objection window.
        policy_id = clinic.grant(
            "li", "class:clinic:physician", basis="legitimate-interest",
            approver="clinic",
        )
        policy = clinic.pod.engine.policies[policy_id]
        assert policy.activation_not_before_ms is not None
        pending = [
            n for n in clinic.pod.engine.notifications
            if n["kind"] == "legitimate-interest-pending"
        ]
        assert pending and pending[0]["to"] == clinic.alice
        # ...and the subject actually received it.
        inbox = clinic.world.registry.inbox(clinic.alice)
        assert any(
            m.get("kind") == "legitimate-interest-pending" for m in inbox
        )
        request = clinic.pod.desk.submit(
            clinic.alice, 21, f"https://{clinic.pod.host}/", clinic.tick()
        )
        clinic.pod.desk.acknowledge(clinic.clinic, request.request_id, clinic.tick())
        enforced = clinic.pod.desk.enforce(request.request_id, clinic.tick())
        assert enforced.state == "enforced"
        assert clinic.pod.engine.policies[policy_id].status == "revoked"

    def test_article_22_blocks_automated_processing_only(self, clinic):
        clinic.grant("doc", "class:clinic:physician")
        clinic.grant("bobread", "agent:bob", purpose="", requester="bob")
        request = clinic.pod.desk.submit(
            clinic.alice, 22, "medical-care", clinic.tick()
        )
        assert request.state == "enforced"
        processor = clinic.request(
            "GET", "/health/vaccination.ttl", credential="doccred",
            purpose="medical-diagnosis", policy_alias="doc",
        )
        viewer = clinic.request(
            "GET", "/health/vaccination.ttl", actor="bob", policy_alias="bobread"
        )
        assert processor.status == 404
        assert viewer.status == 200

    def test_non_subject_cannot_submit(self, clinic):
        with pytest.raises(AuthorizationError):
            clinic.pod.desk.submit(clinic.bob, 17, "x", 1)

    def test_exhaustive_exploration_article_18_needs_token(self):
        # Model-check the transition function over its full state space:
        # a token exists only after the controller acknowledges.
        events = ("notify", "acknowledge", "contest", "enforce")
        reached = set()
        explored = 0
        for article in (16, 17, 18, 21, 22):
            for constrained in (False, True):
                initial = ("submitted", False)
                frontier = [initial]
                seen = {initial}
                while frontier:
                    state, has_token = frontier.pop()
                    reached.add((article, state, has_token, constrained))
                    explored += 1
                    for event in events:
                        nxt = rights_transition(
                            article, state, event, has_token, constrained
                        )
                        if nxt is None:
                            continue
                        nxt_token = True if event == "acknowledge" else has_token
                        key = (nxt, nxt_token)
                        if key not in seen:
                            seen.add(key)
                            frontier.append(key)
        assert explored <= 10_000
        # Restriction is never enforced without the acknowledgment token,
        # but the acknowledged path does enforce it.
        assert (18, "enforced", False, False) not in reached
        assert (18, "enforced", False, True) not in reached
        assert (18, "enforced", True, False) in reached
        # Free-resource erasure enforces with no token at all; a
        # contract-bound one only after acknowledgment.
        assert (17, "enforced", False, False) in reached
        assert (17, "enforced", False, True) not in reached


class TestPortability:
    def _factors(self, clinic, who=None):
        who = who or clinic.alice
        registry = clinic.world.registry
        registry.mfa.enroll(who, "password", b"pw")
        registry.mfa.enroll(who, "device-key", b"dev")
        return [MfaFactor("password", b"pw"), MfaFactor("device-key", b"dev")]

    def test_empty_pod_exports_empty_sections(self):
        world = World(hardened_preset(), 99)
        subject = world.add_agent("carol", ["data-subject"])
        pod = world.create_pod("carol")
        world.registry.mfa.enroll(subject, "password", b"pw")
        world.registry.mfa.enroll(subject, "device-key", b"dev")
        bundle = export_portable(
            subject, [MfaFactor("password", b"pw"), MfaFactor("device-key", b"dev")],
            world.registry, pod.store, pod.engine, pod.ledger,
            hardened_preset(), now_ms=5,
        )
        assert bundle["resources"] == []
        assert bundle["containers"] == []
        assert len(bundle["policies"]) == 1  # owner bootstrap grant

    def test_round_trip_reproduces_resource_set(self, clinic):
        clinic.mkcol("/photos/")
        clinic.put("/photos/cat.jpg", b"\xff\xd8meow", content_type="image/jpeg")
        bundle = export_portable(
            clinic.alice, self._factors(clinic), clinic.world.registry,
            clinic.pod.store, clinic.pod.engine, clinic.pod.ledger,
            hardened_preset(), now_ms=clinic.tick(),
        )
        fresh = PodStore("alice.pods.example", rng=DeterministicRng(123))
        imported = import_bundle(bundle, fresh)
        assert imported == len(bundle["resources"]) == 2
        original = {
            (r.uri.path, r.content_type, clinic.pod.store.get_resource(r.uri)[1])
            for r in clinic.pod.store.live_resources()
        }
        recreated = {
            (r.uri.path, r.content_type, fresh.get_resource(r.uri)[1])
            for r in fresh.live_resources()
        }
        assert original == recreated

    def test_erased_resources_excluded(self, clinic):
        clinic.request("DELETE", "/health/vaccination.ttl", actor="alice")
        bundle = export_portable(
            clinic.alice, self._factors(clinic), clinic.world.registry,
            clinic.pod.store, clinic.pod.engine, clinic.pod.ledger,
            hardened_preset(), now_ms=clinic.tick(),
        )
        assert bundle["resources"] == []

    def test_export_without_mfa_denied(self, clinic):
        with pytest.raises(AuthorizationError, match="factor"):
            export_portable(
                clinic.alice, [], clinic.world.registry, clinic.pod.store,
                clinic.pod.engine, clinic.pod.ledger, hardened_preset(), 5,
            )

    def test_export_is_deterministic(self, clinic):
        factors = self._factors(clinic)
        args = (clinic.alice, factors, clinic.world.registry, clinic.pod.store,
                clinic.pod.engine, clinic.pod.ledger, hardened_preset())
        from podguard.codec import canonical_json

        a = canonical_json(export_portable(*args, now_ms=777))
        b = canonical_json(export_portable(*args, now_ms=777))
        assert a == b


class TestDisputeReveal:
    def _logged_access(self, clinic):
        clinic.grant("doc", "class:clinic:physician")
        clinic.request(
            "GET", "/health/vaccination.ttl", credential="doccred",
            purpose="medical-diagnosis", policy_alias="doc",
        )
        return clinic.pod.ledger.access_log.entries[-1]

    def test_reveal_recovers_holder_and_is_logged(self, clinic):
        entry = self._logged_access(clinic)
        holder = clinic.world.registry.dispute_reveal(
            clinic.clinic, dict(entry), court_order=True,
            engine=clinic.pod.engine, now_ms=clinic.tick(),
        )
        assert holder == clinic.doctor
        last = clinic.pod.ledger.policy_log.entries[-1]
        assert last["kind"] == "amend"
        assert last["policy"]["event"] == "dispute-reveal"
        assert clinic.doctor not in str(last)

    def test_reveal_without_court_order_rejected(self, clinic):
        entry = self._logged_access(clinic)
        with pytest.raises(AuthorizationError, match="court"):
            clinic.world.registry.dispute_reveal(
                clinic.clinic, dict(entry), court_order=False,
                engine=clinic.pod.engine, now_ms=clinic.tick(),
            )

    def test_reveal_on_forged_entry_rejected(self, clinic):
        entry = dict(self._logged_access(clinic))
        entry["resource"] = "https://alice.pods.example/health/other.ttl"
        with pytest.raises(IntegrityError):
            clinic.world.registry.dispute_reveal(
                clinic.clinic, entry, court_order=True,
                engine=clinic.pod.engine, now_ms=clinic.tick(),
            )

    def test_only_issuing_controller_can_reveal(self, clinic):
        entry = self._logged_access(clinic)
        other = clinic.world.add_agent("otherco", ["controller"])
        with pytest.raises(AuthorizationError, match="issuing"):
            clinic.world.registry.dispute_reveal(
                other, dict(entry), court_order=True,
                engine=clinic.pod.engine, now_ms=clinic.tick(),
            )


class TestSubjectPodBinding:
    def test_verified_binding_allows_processor_write_flow(self, clinic):
        clinic.world.registry.bind_subject_pod(
            clinic.alice, clinic.pod.host, {"registered_location": "LU"},
            clinic.clinic,
        )
        assert clinic.world.registry.bound_subject(clinic.pod.host) == clinic.alice
        clinic.grant("docwrite", "class:clinic:physician", modes=("read", "append"))
        decision = clinic.request(
            "GET", "/health/vaccination.ttl", credential="doccred",
            purpose="medical-diagnosis", policy_alias="docwrite",
            headers={"x-expected-subject": clinic.alice},
        )
        assert decision.status == 200

    def test_swapped_pod_denied_uniformly(self, clinic):
        clinic.grant("doc", "class:clinic:physician")
        wrong_patient = "https://id.example/mallory"
        decision = clinic.request(
            "GET", "/health/vaccination.ttl", credential="doccred",
            purpose="medical-diagnosis", policy_alias="doc",
            headers={"x-expected-subject": wrong_patient},
        )
        missing = clinic.bare_request("GET", "/health/ghost.ttl")
        assert decision.status == 404
        assert decision.serialize() == missing.serialize()

    def test_binding_unknown_subject_rejected(self, clinic):
        with pytest.raises(NotFoundError):
            clinic.world.registry.bind_subject_pod(
                "https://id.example/nobody", clinic.pod.host, {"a": "b"},
                clinic.clinic,
            )

    def test_binding_needs_attributes(self, clinic):
        with pytest.raises(ValidationError):
            clinic.world.registry.bind_subject_pod(
                clinic.alice, clinic.pod.host, {}, clinic.clinic
            )


class TestControllerAccountability:
    def test_every_access_resolves_to_a_controller(self, clinic):
        clinic.grant("doc", "class:clinic:physician")
        clinic.request(
            "GET", "/health/vaccination.ttl", credential="doccred",
            purpose="medical-diagnosis", policy_alias="doc",
        )
        grants = {
            e["policy"]["policy_id"]: e["policy"]
            for e in clinic.pod.ledger.policy_log.entries
            if e["kind"] == "grant"
        }
        registry = clinic.world.registry
        for entry in clinic.pod.ledger.access_log.entries:
            controller = grants[entry["policy_id"]]["controller"]
            assert controller in registry.agents
