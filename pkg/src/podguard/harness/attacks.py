"""Scripted attackers, run differentially against the mitigation toggles.

Every attack builds its own small deterministic world from (kind, seed),
plays the adversary's moves, and reports whether the adversary reached
its goal under the given hardening configuration:

* probe           — tell existing-but-forbidden apart from nonexistent
* replay-307      — capture replayed login credentials at a hostile pod
* idm-hijack      — obtain an access token for an honest client's rights
* session-hijack  — learn the login state nonce from a referrer
* log-forge       — produce a log that verifies with a fabricated or
                    mutated entry (must fail under every configuration)
* eavesdrop-profile — recover request URIs from the wire as a passive
                    observer (plain-scheme handling is the toggle)
* sybil-reid      — buy an anonymized release by padding a class with
                    fake identities (release accounting is the toggle)
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from ..authn import IdentityManager, RelyingPartyPod, outbound_navigation, split_uri_query
from ..codec import canonical_json, from_canonical_json
from ..config import HardeningConfig
from ..crypto import DeterministicRng, SigningKey, sha256_hex
from ..errors import AuthenticationError, PodGuardError, ValidationError
from ..ledger import verify_chain
from ..policy import ResourceRequest, upgrade_insecure_uri, Refusal
from ..store import ResourceUri
from .eavesdrop import eavesdrop_profile
from .anonymity import ReleaseRecord, k_anon_release, sybil_suspects_by_issuer_standing
from .world import World, SimTransport, FAR_FUTURE_MS

ATTACK_KINDS = (
    "probe",
    "replay-307",
    "idm-hijack",
    "session-hijack",
    "log-forge",
    "eavesdrop-profile",
    "sybil-reid",
)

#: Which toggle each differential attack pivots on.
MITIGATION_FOR = {
    "probe": "always_404",
    "replay-307": "never_307",
    "idm-hijack": "issuer_binding",
    "session-hijack": "referrer_strip",
    "eavesdrop-profile": "refuse_insecure_scheme",
    "sybil-reid": "sybil_fraction_threshold",
}


@dataclass(frozen=True)
class AttackReport:
    attack_kind: str
    mitigation_config: dict
    seed: int
    success: bool
    evidence: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "attack_kind": self.attack_kind,
            "mitigation_config": self.mitigation_config,
            "seed": self.seed,
            "success": self.success,
            "evidence": list(self.evidence),
        }


def _config_snapshot(config: HardeningConfig) -> dict:
    snap = dataclasses.asdict(config)
    snap["mfa_required_actions"] = sorted(config.mfa_required_actions)
    return snap


def run_attack(
    kind: str,
    hardening: HardeningConfig,
    seed: int,
    forgery_attempts: int = 50,
) -> AttackReport:
    if kind not in ATTACK_KINDS:
        raise ValidationError(f"unsupported attack kind {kind!r}")
    runner = {
        "probe": _attack_probe,
        "replay-307": _attack_replay_307,
        "idm-hijack": _attack_idm_hijack,
        "session-hijack": _attack_session_hijack,
        "log-forge": lambda c, s: _attack_log_forge(c, s, forgery_attempts),
        "eavesdrop-profile": _attack_eavesdrop,
        "sybil-reid": _attack_sybil_reid,
    }[kind]
    success, evidence = runner(hardening, seed)
    return AttackReport(
        attack_kind=kind,
        mitigation_config=_config_snapshot(hardening),
        seed=seed,
        success=success,
        evidence=tuple(evidence),
    )


# --------------------------------------------------------------------------


def _victim_world(config: HardeningConfig, seed: int) -> World:
    """One subject, one pod, one private health record; no outside grants."""
    world = World(config, seed)
    world.add_agent("alice", ["data-subject"])
    pod = world.create_pod("alice")
    pod.store.create_container(ResourceUri(pod.host, "/health/"))
    pod.store.put_resource(
        ResourceUri(pod.host, "/health/vaccination.ttl"),
        "text/turtle",
        b"<vaccinated> .",
    )
    return world


def _attack_probe(config: HardeningConfig, seed: int) -> tuple[bool, list[str]]:
    world = _victim_world(config, seed)
    pod = world.pods["alice"]
    attacker_host = f"probe-{seed}.evil.example"

    def bare_get(path: str, at: int):
        request = ResourceRequest(
            method="GET",
            uri=ResourceUri(pod.host, path),
            source_host=attacker_host,
        )
        return pod.engine.evaluate(request, at)

    existing = bare_get("/health/vaccination.ttl", 1_000)
    missing = bare_get("/health/does-not-exist.ttl", 1_001)
    distinguishable = existing.serialize() != missing.serialize()
    return distinguishable, [
        f"existing-forbidden: status {existing.status}, "
        f"digest {sha256_hex(existing.serialize())[:12]}",
        f"nonexistent: status {missing.status}, "
        f"digest {sha256_hex(missing.serialize())[:12]}",
        "responses differ" if distinguishable else "responses identical",
    ]


def _attack_replay_307(config: HardeningConfig, seed: int) -> tuple[bool, list[str]]:
    rng = DeterministicRng(f"replay307:{seed}")
    idm = IdentityManager("idm-main", "idm.example", rng.fork("idm"))
    client = "https://id.example/carol"
    password = f"pw-{rng.hex(4)}"
    idm.register_user(client, password)
    # The client was lured into a login whose redirect target is hostile.
    hostile_host = "evil-pod.example"
    post = {
        "username": client,
        "password": password,
        "redirect_uri": f"https://{hostile_host}/login/callback",
        "state": rng.hex(8),
    }
    response = idm.authenticate(post, never_307=config.never_307, now_ms=1_000)
    # Follow the redirect the way a browser does: 307 repeats the POST with
    # its body at the new location, 303 downgrades to a body-free GET.
    captured_at_hostile = response.body if response.status == 307 else b""
    captured_fields = []
    if captured_at_hostile:
        captured_fields = sorted(from_canonical_json(captured_at_hostile))
    success = b"password" in captured_at_hostile
    return success, [
        f"identity manager answered {response.status}",
        f"hostile pod received fields: {captured_fields or 'none'}",
    ]


def _attack_idm_hijack(config: HardeningConfig, seed: int) -> tuple[bool, list[str]]:
    rng = DeterministicRng(f"idmhijack:{seed}")
    honest_idm = IdentityManager("idm-honest", "idm.example", rng.fork("honest"))
    rogue_idm = IdentityManager("idm-rogue", "rogue.example", rng.fork("rogue"))
    pod = RelyingPartyPod(
        "alice.pods.example",
        {"idm-honest": honest_idm, "idm-rogue": rogue_idm},
        rng.fork("pod"),
        issuer_binding=config.issuer_binding,
    )
    client = "https://id.example/alice"
    honest_idm.register_user(client, "correct-horse")
    redirect, session = pod.begin_login(client, "idm-honest", now_ms=1_000)
    # The attacker reads the redirect in transit: session id and state are
    # theirs, and their own registered identity manager will vouch for
    # anything, including the honest client's identity.
    rogue_token = rogue_idm.issue_token(
        subject=client,
        audience=pod.pod_host,
        nonce=session.state_nonce,
        now_ms=1_000,
    )
    try:
        token = pod.complete_login(
            session.session_id, rogue_token, "idm-rogue", now_ms=1_100
        )
        return True, [
            f"access token issued for {token.subject} via rogue identity manager",
        ]
    except AuthenticationError as exc:
        return False, [f"completion rejected: {exc}"]


def _attack_session_hijack(config: HardeningConfig, seed: int) -> tuple[bool, list[str]]:
    rng = DeterministicRng(f"sessionhijack:{seed}")
    state_nonce = rng.hex(16)
    page_uri = (
        f"https://alice.pods.example/login/callback?state={state_nonce}"
        f"&session=s-{rng.hex(8)}"
    )
    # The fetched page embeds an attacker-controlled link; the honest client
    # follows it and the attacker's server logs the navigation.
    navigation = outbound_navigation(
        page_uri, "https://evil.example/lure.html", config.referrer_strip
    )
    referrer = navigation.headers["referrer"]
    _, params = split_uri_query(referrer)
    captured = params.get("state")
    success = captured == state_nonce
    return success, [
        f"attacker-observed referrer: {referrer}",
        f"state nonce captured: {bool(captured)}",
    ]


def _forgeable_world(config: HardeningConfig, seed: int) -> World:
    """Honest history with both logs populated, then anchored."""
    world = World(config, seed)
    world.add_agent("alice", ["data-subject"])
    world.add_agent("clinic", ["controller"], reputation=5)
    world.add_agent("doctor", ["processor"], controller="clinic")
    pod = world.create_pod("alice")
    from ..gdpr import RopaRecord

    world.registry.register_activity(
        world.agent_names["clinic"],
        RopaRecord(
            activity_id="care",
            controller_contact="dpo@clinic.example",
            purposes=["medical-diagnosis"],
        ),
    )
    world.credentials["doccred"] = world.registry.issue_credential(
        world.agent_names["clinic"],
        world.agent_names["doctor"],
        "care",
        {"role": "physician", "organisation": "clinic",
         "purpose_scopes": ["medical-diagnosis"]},
        now_ms=0,
        ttl_ms=FAR_FUTURE_MS,
    )
    transport = SimTransport(world)
    transport.mkcol(pod, pod.subject, "/health/", 100)
    put = world.signed_resource_request(
        "alice", pod, "PUT", "/health/vaccination.ttl", 200,
        content_type="text/turtle", body=b"<vaccinated> .",
    )
    transport.resource_request(pod, put, 200)
    authreq = world.build_authorization_request(
        {
            "pod": "alice",
            "grantee": "class:clinic:physician",
            "modes": ["read"],
            "basis": "consent",
            "purpose": "medical-diagnosis",
            "valid_from_ms": 0,
            "valid_until_ms": FAR_FUTURE_MS,
            "retention": "unrestricted",
            "requester": "clinic",
            "audience": "processor",
        }
    )
    snapshot = transport.draft_policy(pod, authreq, 300)
    from ..ledger import policy_sign_payload

    payload = policy_sign_payload("grant", 300, snapshot)
    transport.grant_policy(
        pod, snapshot, 300,
        world.agent_names["alice"],
        world.registry.sign_for(world.agent_names["alice"], payload),
        world.agent_names["clinic"],
        world.registry.sign_for(world.agent_names["clinic"], payload),
    )
    world.policy_aliases["doc"] = snapshot["policy_id"]
    read = world.signed_resource_request(
        None, pod, "GET", "/health/vaccination.ttl", 400,
        purpose="medical-diagnosis", policy_alias="doc", credential_name="doccred",
    )
    transport.resource_request(pod, read, 400)
    put2 = world.signed_resource_request(
        "alice", pod, "PUT", "/health/notes.txt", 500,
        content_type="text/plain", body=b"keep walking",
    )
    transport.resource_request(pod, put2, 500)
    pod.ledger.anchor(600)
    return world


def _attack_log_forge(
    config: HardeningConfig, seed: int, attempts: int
) -> tuple[bool, list[str]]:
    world = _forgeable_world(config, seed)
    pod = world.pods["alice"]
    rng = DeterministicRng(f"logforge:{seed}")
    trusted = world.registry.trusted_keys()
    anchor = pod.ledger.anchors[-1]
    pod_key_hex = pod.ledger.pod_verify_key_hex
    # The insider (a malicious pod owner) holds the pod countersigning key.
    insider_key = pod.ledger._pod_key  # noqa: SLF001 - attacker-equivalent access

    original_access = [dict(e) for e in pod.ledger.access_log.entries]
    original_policy = [dict(e) for e in pod.ledger.policy_log.entries]

    def verified(forged_access: list[dict]) -> bool:
        report = verify_chain(
            forged_access, trusted, pod_id=pod.ledger.pod_id,
            policy_entries=original_policy, anchor=anchor,
        )
        return report.valid

    successes = 0
    strategies = ["bitflip", "mutate", "fabricate", "replay", "reorder", "truncate"]
    for attempt in range(attempts):
        strategy = strategies[attempt % len(strategies)]
        forged = _forge(
            strategy, original_access, insider_key, pod.ledger.pod_id, rng
        )
        if forged is None:
            continue
        if forged != original_access and verified(forged):
            successes += 1
    return successes > 0, [
        f"{attempts} forgery attempts across {len(strategies)} strategies",
        f"{successes} passed verification",
    ]


def _rechain(entries: list[dict], insider_key: SigningKey) -> list[dict]:
    """What a key-holding insider can do: fix seq, re-countersign, relink."""
    from ..ledger import countersign_payload, _entry_hash

    prev = "0" * 64
    out = []
    for i, entry in enumerate(entries):
        entry = dict(entry)
        entry["seq"] = i + 1
        entry["pod_countersignature"] = insider_key.sign_hex(
            countersign_payload(entry)
        )
        entry["prev_hash"] = prev
        entry.pop("entry_hash", None)
        entry["entry_hash"] = _entry_hash(prev, entry)
        prev = entry["entry_hash"]
        out.append(entry)
    return out


def _forge(
    strategy: str,
    original: list[dict],
    insider_key: SigningKey,
    pod_id: str,
    rng: DeterministicRng,
) -> list[dict] | None:
    entries = [dict(e) for e in original]
    if not entries:
        return None
    if strategy == "bitflip":
        raw = bytearray(b"".join(canonical_json(e) + b"\n" for e in entries))
        raw[rng.randint(0, len(raw) - 1)] ^= 1 << rng.randint(0, 7)
        try:
            from ..ledger import parse_export

            return parse_export(bytes(raw))
        except PodGuardError:
            return [{"entry_type": "garbage", "seq": 1}]  # unparseable == detected
    if strategy == "mutate":
        idx = rng.randint(0, len(entries) - 1)
        field = rng.choice(["resource", "operation", "asserted_purpose", "policy_id"])
        entries[idx][field] = f"forged-{rng.hex(4)}"
        return _rechain(entries, insider_key)
    if strategy == "fabricate":
        template = dict(entries[rng.randint(0, len(entries) - 1)])
        template["timestamp_ms"] = entries[-1]["timestamp_ms"] + rng.randint(1, 1000)
        template["resource"] = f"https://forged.example/x-{rng.hex(3)}"
        template["processor_signature"] = rng.hex(32)
        entries.append(template)
        return _rechain(entries, insider_key)
    if strategy == "replay":
        victim = dict(entries[rng.randint(0, len(entries) - 1)])
        entries.append(dict(victim))
        return _rechain(entries, insider_key)
    if strategy == "reorder":
        if len(entries) < 2:
            return None
        i = rng.randint(0, len(entries) - 2)
        entries[i], entries[i + 1] = entries[i + 1], entries[i]
        return _rechain(entries, insider_key)
    if strategy == "truncate":
        return _rechain(entries[:-1], insider_key) if len(entries) > 1 else None
    return None


def _attack_eavesdrop(config: HardeningConfig, seed: int) -> tuple[bool, list[str]]:
    world = World(config, seed)
    world.add_agent("john", ["data-subject"], host="john.provider.example")
    pod = world.create_pod("john")
    pod.store.create_container(ResourceUri(pod.host, "/health/"))
    pod.store.put_resource(
        ResourceUri(pod.host, "/health/vaccinationdata.ttl"),
        "text/turtle", b"<vaccinated> .",
    )
    transport = SimTransport(world)
    client_host = "client.example"
    # Habitual client: tries the plain scheme first, upgrades on demand.
    raw_uri = f"http://{pod.host}/health/vaccinationdata.ttl"
    outcome = upgrade_insecure_uri(raw_uri, config)
    if isinstance(outcome, Refusal):
        world.channel.record_refused_connection(900, client_host, pod.host)
    else:
        # The plain request and the redirect both cross the wire readable.
        world.channel.transmit(
            900, client_host, pod.host,
            f"GET {raw_uri}".encode(), "request", secure=False,
        )
        world.channel.transmit(
            901, pod.host, client_host, outcome.serialize(), "response",
            secure=False,
        )
    request = world.signed_resource_request(
        "john", pod, "GET", "/health/vaccinationdata.ttl", 1_000,
        source_host=client_host,
    )
    transport.resource_request(pod, request, 1_000)
    captured_paths = [
        c.content.decode("utf-8", "replace")
        for c in world.channel.plaintext_captures
        if b"/health/" in c.content
    ]
    findings = eavesdrop_profile(
        world.channel.observations, {"john": world.agent_names["john"]}
    )
    leak_kinds = sorted({f["kind"] for f in findings})
    return bool(captured_paths), [
        f"plaintext URL captures: {len(captured_paths)}",
        f"metadata findings: {leak_kinds}",
    ]


def _attack_sybil_reid(config: HardeningConfig, seed: int) -> tuple[bool, list[str]]:
    rng = DeterministicRng(f"sybil:{seed}")
    issuer_reputation = {"census-office": 10, "identity-mill": 1}
    subject_issuers: dict[str, str] = {}
    records: list[ReleaseRecord] = []
    sensitive_values = ["flu", "covid", "healthy"]
    # Three well-populated classes of genuine subjects.
    for class_idx in range(3):
        quasi = (f"district-{class_idx}", "1980s")
        for member in range(config.k + 1):
            name = f"citizen-{class_idx}-{member}"
            subject_issuers[name] = "census-office"
            records.append(
                ReleaseRecord(name, quasi, sensitive_values[member % len(sensitive_values)])
            )
    # The victim's class: one genuine co-member, padded up with fakes until
    # it clears k and l on paper.
    victim_quasi = ("district-9", "1980s")
    subject_issuers["victim"] = "census-office"
    records.append(ReleaseRecord("victim", victim_quasi, "rare-condition"))
    subject_issuers["citizen-9-1"] = "census-office"
    records.append(ReleaseRecord("citizen-9-1", victim_quasi, "rare-condition"))
    for i in range(max(config.k, config.l)):
        name = f"sybil-{i}"
        subject_issuers[name] = "identity-mill"
        records.append(
            ReleaseRecord(name, victim_quasi, sensitive_values[i % len(sensitive_values)])
        )
    accounting_on = config.sybil_fraction_threshold < 1.0
    suspects = (
        sybil_suspects_by_issuer_standing(subject_issuers, issuer_reputation)
        if accounting_on
        else set()
    )
    decision = k_anon_release(records, config.k, config.l, suspects)
    genuine_in_victim_class = sum(
        1
        for r in records
        if r.quasi == victim_quasi and subject_issuers[r.subject] == "census-office"
    )
    success = decision.released and genuine_in_victim_class < config.k
    return success, [
        f"sybil accounting {'on' if accounting_on else 'off'}, "
        f"{len(suspects)} suspects",
        f"release decision: {decision.reason}",
        f"victim class genuine members: {genuine_in_victim_class}",
    ]
