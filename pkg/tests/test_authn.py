import dataclasses

import pytest

from podguard.authn import (
    IdentityManager,
    MfaFactor,
    MfaRegistry,
    RelyingPartyPod,
    outbound_navigation,
    present_credential,
    presentation_signing_key,
    split_uri_query,
    verify_presentation,
)
from podguard.crypto import DeterministicRng
from podguard.errors import (
    AccountabilityError,
    AuthenticationError,
    RevokedError,
    ValidationError,
)
from podguard.harness.world import FAR_FUTURE_MS


@pytest.fixture
def login_setup():
    rng = DeterministicRng("login")
    idm_a = IdentityManager("idm-a", "a.idm.example", rng.fork("a"))
    idm_b = IdentityManager("idm-b", "b.idm.example", rng.fork("b"))
    idm_a.register_user("https://id.example/alice", "hunter2")
    pod = RelyingPartyPod(
        "alice.pods.example", {"idm-a": idm_a, "idm-b": idm_b},
        rng.fork("pod"), issuer_binding=True,
    )
    return pod, idm_a, idm_b


class TestLoginFlow:
    def test_begin_login_records_expected_issuer(self, login_setup):
        pod, idm_a, _ = login_setup
        redirect, session = pod.begin_login("https://id.example/alice", "idm-a", 100)
        assert session.expected_issuer == "idm-a"
        assert redirect.status == 303
        _, params = split_uri_query(redirect.headers["location"])
        assert params["state"] == session.state_nonce

    def test_begin_login_unknown_idm_rejected(self, login_setup):
        pod, _, _ = login_setup
        with pytest.raises(AuthenticationError):
            pod.begin_login("https://id.example/alice", "idm-zz", 100)

    def test_complete_login_with_matching_issuer(self, login_setup):
        pod, idm_a, _ = login_setup
        _, session = pod.begin_login("https://id.example/alice", "idm-a", 100)
        token = idm_a.issue_token(
            "https://id.example/alice", pod.pod_host, session.state_nonce, 100
        )
        access = pod.complete_login(session.session_id, token, "idm-a", 150)
        assert access.subject == "https://id.example/alice"
        assert access.audience == pod.pod_host

    def test_issuer_mismatch_rejected_and_logged(self, login_setup):
        pod, _, idm_b = login_setup
        _, session = pod.begin_login("https://id.example/alice", "idm-a", 100)
        token = idm_b.issue_token(
            "https://id.example/alice", pod.pod_host, session.state_nonce, 100
        )
        with pytest.raises(AuthenticationError, match="issuer"):
            pod.complete_login(session.session_id, token, "idm-b", 150)
        assert any(e.kind == "issuer-mismatch" for e in pod.security_events)

    def test_issuer_binding_off_accepts_rogue_issuer(self, login_setup):
        pod, _, idm_b = login_setup
        pod.issuer_binding = False
        _, session = pod.begin_login("https://id.example/alice", "idm-a", 100)
        token = idm_b.issue_token(
            "https://id.example/alice", pod.pod_host, session.state_nonce, 100
        )
        access = pod.complete_login(session.session_id, token, "idm-b", 150)
        assert access.issuer == "idm-b"

    def test_nonce_replay_rejected(self, login_setup):
        pod, idm_a, _ = login_setup
        _, session = pod.begin_login("https://id.example/alice", "idm-a", 100)
        token = idm_a.issue_token(
            "https://id.example/alice", pod.pod_host, session.state_nonce, 100
        )
        pod.complete_login(session.session_id, token, "idm-a", 150)
        with pytest.raises(AuthenticationError, match="consumed"):
            pod.complete_login(session.session_id, token, "idm-a", 160)

    def test_forged_token_signature_rejected(self, login_setup):
        pod, idm_a, _ = login_setup
        _, session = pod.begin_login("https://id.example/alice", "idm-a", 100)
        token = idm_a.issue_token(
            "https://id.example/alice", pod.pod_host, session.state_nonce, 100
        )
        token["subject"] = "https://id.example/mallory"
        with pytest.raises(AuthenticationError, match="signature"):
            pod.complete_login(session.session_id, token, "idm-a", 150)


class TestIssuerBindingSoundness:
    def test_exhaustive_small_state_exploration(self):
        # Enumerate every combination of issuer claims, signing keys and
        # nonce freshness: a token is accepted only when the asserted
        # issuer is the recorded one, the signature is that issuer's, and
        # the nonce is fresh.
        rng = DeterministicRng("binding-model")
        idms = {
            "idm-a": IdentityManager("idm-a", "a.example", rng.fork("a")),
            "idm-b": IdentityManager("idm-b", "b.example", rng.fork("b")),
        }
        client = "https://id.example/alice"
        accepted, rejected = 0, 0
        for asserted in ("idm-a", "idm-b"):
            for signer in ("idm-a", "idm-b"):
                for fresh_nonce in (True, False):
                    pod = RelyingPartyPod(
                        "pod.example", idms, rng.fork(
                            f"pod-{asserted}-{signer}-{fresh_nonce}"
                        ), issuer_binding=True,
                    )
                    _, session = pod.begin_login(client, "idm-a", 10)
                    nonce = session.state_nonce if fresh_nonce else "stale"
                    token = idms[signer].issue_token(
                        client, pod.pod_host, nonce, 10
                    )
                    try:
                        pod.complete_login(session.session_id, token, asserted, 20)
                        accepted += 1
                        assert asserted == session.expected_issuer
                        assert signer == asserted
                        assert fresh_nonce
                    except AuthenticationError:
                        rejected += 1
        assert accepted == 1  # only (idm-a, idm-a, fresh)
        assert rejected == 7

    def test_nonce_single_use_under_concurrency(self):
        import threading

        rng = DeterministicRng("concurrency")
        idm = IdentityManager("idm-a", "a.example", rng.fork("a"))
        pod = RelyingPartyPod("pod.example", {"idm-a": idm}, rng.fork("pod"))
        client = "https://id.example/alice"
        _, session = pod.begin_login(client, "idm-a", 10)
        token = idm.issue_token(client, pod.pod_host, session.state_nonce, 10)
        outcomes = []
        barrier = threading.Barrier(8)

        def attempt():
            barrier.wait()
            try:
                pod.complete_login(session.session_id, token, "idm-a", 20)
                outcomes.append("ok")
            except AuthenticationError:
                outcomes.append("rejected")

        threads = [threading.Thread(target=attempt) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert outcomes.count("ok") == 1
        assert outcomes.count("rejected") == 7


class TestIdmAuthenticate:
    def _post(self, state="st-1"):
        return {
            "username": "https://id.example/alice",
            "password": "hunter2",
            "redirect_uri": "https://alice.pods.example/login/callback",
            "state": state,
        }

    def test_hardened_303_with_empty_body(self, login_setup):
        _, idm_a, _ = login_setup
        message = idm_a.authenticate(self._post(), never_307=True, now_ms=100)
        assert message.status == 303
        assert message.body == b""
        assert "location" in message.headers

    def test_legacy_307_replays_credentials_in_body(self, login_setup):
        _, idm_a, _ = login_setup
        message = idm_a.authenticate(self._post(), never_307=False, now_ms=100)
        assert message.status == 307
        assert b"password" in message.body

    def test_bad_credentials_no_redirect(self, login_setup):
        _, idm_a, _ = login_setup
        post = self._post()
        post["password"] = "wrong"
        with pytest.raises(AuthenticationError):
            idm_a.authenticate(post, never_307=True, now_ms=100)

    def test_hardened_never_emits_307_on_any_path(self, login_setup):
        # Enumerate credential POST variants; in hardened mode no reply
        # is ever a 307.
        _, idm_a, _ = login_setup
        for user in ("https://id.example/alice", "https://id.example/ghost"):
            for state in ("", "st-9"):
                post = {
                    "username": user,
                    "password": "hunter2",
                    "redirect_uri": "https://x.example/cb",
                    "state": state,
                }
                try:
                    message = idm_a.authenticate(post, never_307=True, now_ms=5)
                except AuthenticationError:
                    continue
                assert message.status == 303


class TestReferrerPolicy:
    PAGE = "https://alice.pods.example/login/callback?state=n-123&session=s-1"

    def test_strip_cross_origin_keeps_origin_only(self):
        nav = outbound_navigation(self.PAGE, "https://evil.example/x", True)
        assert nav.headers["referrer"] == "https://alice.pods.example"

    def test_leak_exposes_state(self):
        nav = outbound_navigation(self.PAGE, "https://evil.example/x", False)
        _, params = split_uri_query(nav.headers["referrer"])
        assert params["state"] == "n-123"

    def test_same_origin_keeps_full_referrer_under_strip(self):
        nav = outbound_navigation(
            self.PAGE, "https://alice.pods.example/other", True
        )
        assert nav.headers["referrer"] == self.PAGE


@pytest.fixture
def issued_credential(clinic):
    return clinic.credential, clinic.world


class TestPresentations:
    def test_presentation_discloses_requested_attributes(self, clinic):
        pres = present_credential(
            clinic.credential, ["role", "organisation"], DeterministicRng(5), 100
        )
        assert pres.disclosed == {"role": "physician", "organisation": "clinic"}

    def test_two_presentations_share_only_disclosed_fields(self, clinic):
        rng = DeterministicRng(6)
        p1 = present_credential(clinic.credential, ["role"], rng, 100)
        p2 = present_credential(clinic.credential, ["role"], rng, 100)
        d1, d2 = p1.to_dict(), p2.to_dict()
        for field_name in d1:
            if field_name == "disclosed":
                assert d1[field_name] == d2[field_name]
            else:
                assert d1[field_name] != d2[field_name], field_name

    def test_verifier_equality_join_finds_no_match(self, clinic):
        rng = DeterministicRng(7)
        presentations = [
            present_credential(clinic.credential, ["role"], rng, 100)
            for _ in range(5)
        ]
        joinable = 0
        for i, a in enumerate(presentations):
            for b in presentations[i + 1:]:
                da, db = a.to_dict(), b.to_dict()
                joinable += sum(
                    1 for k in da if k != "disclosed" and da[k] == db[k]
                )
        assert joinable == 0

    def test_presentation_verifies_without_holder_identity(self, clinic):
        rng = DeterministicRng(8)
        pres = present_credential(
            clinic.credential, ["role", "purpose_scopes"], rng, 100
        )
        vp = verify_presentation(
            pres, clinic.world.registry.issuer_keys(), set(), 100
        )
        assert vp.issuer == clinic.clinic
        serialized = str(pres.to_dict())
        assert clinic.doctor not in serialized

    def test_anonymous_access_without_credential_rejected(self):
        with pytest.raises(AccountabilityError):
            present_credential(None, [], DeterministicRng(1), 0)

    def test_revoked_credential_rejected(self, clinic):
        clinic.world.registry.revoke_credential(
            clinic.clinic, clinic.credential.credential_id, "compromised"
        )
        with pytest.raises(RevokedError):
            present_credential(
                clinic.credential, ["role"], DeterministicRng(1), 100,
                clinic.world.registry.revoked_credentials(),
            )

    def test_expired_credential_rejected(self, clinic):
        expired = dataclasses.replace(clinic.credential, expires_at_ms=50)
        with pytest.raises(AuthenticationError, match="expired"):
            present_credential(expired, ["role"], DeterministicRng(1), 100)

    def test_undisclosable_attribute_rejected(self, clinic):
        with pytest.raises(ValidationError):
            present_credential(
                clinic.credential, ["shoe_size"], DeterministicRng(1), 100
            )

    def test_tampered_disclosure_fails_verification(self, clinic):
        rng = DeterministicRng(9)
        pres = present_credential(clinic.credential, ["role"], rng, 100)
        tampered = dataclasses.replace(
            pres, disclosed={"role": "chief-surgeon"}
        )
        with pytest.raises(AuthenticationError):
            verify_presentation(
                tampered, clinic.world.registry.issuer_keys(), set(), 100
            )

    def test_delegated_chain_of_two_verifies_with_both_controllers(self, clinic):
        relay = clinic.world.add_agent(
            "relay", ["processor", "intermediary"], controller="clinic"
        )
        cache_controller = clinic.world.add_agent(
            "cacheco", ["controller"], reputation=4
        )
        delegated = clinic.world.registry.delegate_credential(
            clinic.credential, relay, cache_controller, now_ms=10
        )
        rng = DeterministicRng(10)
        pres = present_credential(delegated, ["role"], rng, 100)
        vp = verify_presentation(
            pres, clinic.world.registry.issuer_keys(), set(), 100
        )
        assert len(vp.delegation_chain) == 1
        link = vp.delegation_chain[0]
        assert link.upstream_issuer == clinic.clinic
        assert link.delegate_controller == cache_controller
        assert vp.issuer == cache_controller

    def test_replayed_presentation_rejected_by_engine(self, clinic):
        clinic.grant("doc", "class:clinic:physician")
        rng = DeterministicRng(11)
        pres = present_credential(
            clinic.credential, ["role", "organisation", "purpose_scopes"],
            rng, clinic.now,
        )
        from podguard.ledger import access_receipt_payload
        from podguard.policy import ResourceRequest
        from podguard.store import ResourceUri

        signer = presentation_signing_key(
            clinic.credential.credential_secret, pres.presentation_id
        )
        policy_id = clinic.world.policy_aliases["doc"]

        def build(at):
            uri = ResourceUri(clinic.pod.host, "/health/vaccination.ttl")
            payload = access_receipt_payload(
                at, pres.presentation_id, pres.processor_signature_key,
                str(uri), "read", policy_id, "medical-diagnosis",
            )
            return ResourceRequest(
                method="GET", uri=uri, presentation=pres,
                asserted_purpose="medical-diagnosis",
                asserted_policy_id=policy_id,
                receipt_signature=signer.sign_hex(payload),
                receipt_time_ms=at,
            )

        first = clinic.pod.engine.evaluate(build(clinic.tick()), clinic.now)
        second = clinic.pod.engine.evaluate(build(clinic.tick()), clinic.now)
        assert first.status == 200
        assert second.status == 404


class TestMfa:
    @pytest.fixture
    def registry(self):
        registry = MfaRegistry()
        registry.enroll("https://id.example/alice", "password", b"pw-evidence")
        registry.enroll("https://id.example/alice", "device-key", b"device-evidence")
        registry.enroll("https://id.example/alice", "proximity", b"near-evidence")
        return registry

    REQUIRED = frozenset({"account-init", "account-recovery", "ciso-log-access",
                          "first-contact-grant"})

    def test_two_distinct_kinds_pass(self, registry):
        assert registry.mfa_gate(
            "https://id.example/alice", "account-init",
            [MfaFactor("password", b"pw-evidence"),
             MfaFactor("device-key", b"device-evidence")],
            self.REQUIRED,
        )

    def test_same_kind_twice_fails(self, registry):
        assert not registry.mfa_gate(
            "https://id.example/alice", "account-init",
            [MfaFactor("password", b"pw-evidence"),
             MfaFactor("password", b"pw-evidence")],
            self.REQUIRED,
        )

    def test_first_contact_grant_with_proximity_passes(self, registry):
        assert registry.mfa_gate(
            "https://id.example/alice", "first-contact-grant",
            [MfaFactor("password", b"pw-evidence"),
             MfaFactor("proximity", b"near-evidence")],
            self.REQUIRED,
        )

    def test_wrong_evidence_does_not_count(self, registry):
        assert not registry.mfa_gate(
            "https://id.example/alice", "account-recovery",
            [MfaFactor("password", b"wrong"),
             MfaFactor("device-key", b"device-evidence")],
            self.REQUIRED,
        )

    def test_non_critical_action_passes_without_factors(self, registry):
        assert registry.mfa_gate(
            "https://id.example/alice", "routine-read", [], self.REQUIRED
        )

    def test_unknown_factor_kind_rejected(self):
        with pytest.raises(ValidationError):
            MfaFactor("retina", b"scan")
