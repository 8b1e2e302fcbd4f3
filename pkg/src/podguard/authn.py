"""Hardened login and credential presentation.

Three actors interact here: a client, a pod acting as relying party, and
an identity manager (IdM) that vouches for the client. Each known login
weakness has a dedicated, individually toggleable mitigation so attack
runs can flip exactly one:

* credential POSTs at the IdM answer with a body-free 303 redirect, never
  a 307 that would replay the credentials to the redirect target;
* the pod records which IdM a session expects at redirect time and only
  accepts tokens asserting that issuer;
* outbound navigations strip path/query (and with them the login state
  parameter) from the referrer on cross-origin hops.

Processor access uses anonymous-but-accountable credentials instead of
interactive login: an issuer-signed attribute bundle whose holder identity
is escrow-encrypted to the issuer. A presentation of a credential is
single-use, carries a fresh signature key, and shares no equal field with
another presentation of the same credential except the disclosed
attributes. Pods verify presentations locally, so no identity service
observes per-access traffic. This is an interface-level construction:
unlinkability holds for any observer joining presentation fields, not
against a colluding issuer inspecting sealed evidence.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass, field

from .codec import canonical_json, from_canonical_json
from .crypto import (
    AEAD_NONCE_LEN,
    DeterministicRng,
    SigningKey,
    aead_decrypt,
    aead_encrypt,
    sha256_hex,
    verify_signature,
)
from .errors import (
    AccountabilityError,
    AuthenticationError,
    IntegrityError,
    RevokedError,
    ValidationError,
)

STATE_PARAM = "state"


# --------------------------------------------------------------------------
# wire messages
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ProtocolMessage:
    """One serialized protocol step: redirects, navigations, callbacks."""

    kind: str
    status: int
    headers: dict[str, str]
    body: bytes

    def serialize(self) -> bytes:
        return canonical_json(
            {
                "kind": self.kind,
                "status": self.status,
                "headers": dict(sorted(self.headers.items())),
                "body": self.body.hex(),
            }
        )


def split_uri_query(uri: str) -> tuple[str, dict[str, str]]:
    base, _, query = uri.partition("?")
    params: dict[str, str] = {}
    if query:
        for pair in query.split("&"):
            key, _, value = pair.partition("=")
            params[key] = value
    return base, params


def origin_of(uri: str) -> str:
    scheme, sep, rest = uri.partition("://")
    if not sep:
        return uri
    return f"{scheme}://{rest.split('/', 1)[0]}"


# --------------------------------------------------------------------------
# login sessions (pod side)
# --------------------------------------------------------------------------


@dataclass
class LoginSession:
    session_id: str
    client: str                 # webid
    expected_issuer: str        # IdM recorded when the redirect was minted
    state_nonce: str
    created_at_ms: int
    nonce_used: bool = False


@dataclass(frozen=True)
class AccessToken:
    token_id: str
    issuer: str
    subject: str
    audience: str
    session_id: str
    expires_at_ms: int


@dataclass(frozen=True)
class SecurityEvent:
    at_ms: int
    kind: str
    detail: str


class RelyingPartyPod:
    """The pod's side of the login flow."""

    def __init__(self, pod_host: str, idm_registry: "dict[str, IdentityManager]",
                 rng: DeterministicRng, issuer_binding: bool = True):
        self.pod_host = pod_host
        self.idm_registry = idm_registry
        self.issuer_binding = issuer_binding
        self._rng = rng
        self.sessions: dict[str, LoginSession] = {}
        self.security_events: list[SecurityEvent] = []
        import threading

        self._nonce_lock = threading.Lock()

    def begin_login(self, client: str, idm_id: str, now_ms: int) -> tuple[ProtocolMessage, LoginSession]:
        if idm_id not in self.idm_registry:
            raise AuthenticationError(f"unknown identity manager: {idm_id}")
        session = LoginSession(
            session_id=f"s-{self._rng.hex(8)}",
            client=client,
            expected_issuer=idm_id,
            state_nonce=self._rng.hex(16),
            created_at_ms=now_ms,
        )
        self.sessions[session.session_id] = session
        callback = f"https://{self.pod_host}/login/callback"
        redirect = ProtocolMessage(
            kind="login-redirect",
            status=303,
            headers={
                "location": (
                    f"https://{self.idm_registry[idm_id].host}/authorize"
                    f"?{STATE_PARAM}={session.state_nonce}"
                    f"&redirect_uri={callback}"
                    f"&session={session.session_id}"
                )
            },
            body=b"",
        )
        return redirect, session

    def complete_login(
        self, session_id: str, token: dict, asserted_issuer: str, now_ms: int
    ) -> AccessToken:
        """Accept an IdM-signed token for a pending session.

        The state nonce is compare-and-consumed under a lock, so a replayed
        callback loses the race deterministically.
        """
        session = self.sessions.get(session_id)
        if session is None:
            raise AuthenticationError("unknown session")
        with self._nonce_lock:
            if session.nonce_used:
                raise AuthenticationError("state nonce already consumed")
            if token.get("nonce") != session.state_nonce:
                raise AuthenticationError("state nonce mismatch")
            session.nonce_used = True
        if self.issuer_binding and asserted_issuer != session.expected_issuer:
            self.security_events.append(
                SecurityEvent(now_ms, "issuer-mismatch",
                              f"expected {session.expected_issuer}, got {asserted_issuer}")
            )
            raise AuthenticationError("issuer does not match the one recorded at redirect")
        idm = self.idm_registry.get(asserted_issuer)
        if idm is None:
            raise AuthenticationError(f"unknown identity manager: {asserted_issuer}")
        payload = canonical_json({k: v for k, v in token.items() if k != "signature"})
        if not verify_signature(idm.verify_key_hex, payload, token.get("signature", "")):
            raise AuthenticationError("token signature invalid")
        if token.get("expires_at_ms", 0) <= now_ms:
            raise AuthenticationError("token expired")
        if token.get("audience") != self.pod_host:
            raise AuthenticationError("token audience mismatch")
        return AccessToken(
            token_id=f"t-{self._rng.hex(8)}",
            issuer=asserted_issuer,
            subject=token["subject"],
            audience=self.pod_host,
            session_id=session_id,
            expires_at_ms=token["expires_at_ms"],
        )


class IdentityManager:
    """Identity manager holding user credentials and a token signing key."""

    TOKEN_TTL_MS = 3_600_000

    def __init__(self, idm_id: str, host: str, rng: DeterministicRng):
        self.idm_id = idm_id
        self.host = host
        self._key = SigningKey.generate(rng)
        self._users: dict[str, str] = {}  # webid -> password hash

    @property
    def verify_key_hex(self) -> str:
        return self._key.verify_key_hex

    def register_user(self, webid: str, password: str) -> None:
        self._users[webid] = sha256_hex(password.encode("utf-8"))

    def check_password(self, webid: str, password: str) -> bool:
        expected = self._users.get(webid)
        return expected is not None and hmac.compare_digest(
            expected, sha256_hex(password.encode("utf-8"))
        )

    def issue_token(self, subject: str, audience: str, nonce: str, now_ms: int) -> dict:
        token = {
            "issuer": self.idm_id,
            "subject": subject,
            "audience": audience,
            "nonce": nonce,
            "expires_at_ms": now_ms + self.TOKEN_TTL_MS,
        }
        token["signature"] = self._key.sign_hex(canonical_json(token))
        return token

    def authenticate(
        self, credentials_post: dict, never_307: bool, now_ms: int
    ) -> ProtocolMessage:
        """Handle a credential POST and redirect back to the relying party.

        Hardened mode answers 303 with an empty body; the credentials die
        here. Legacy mode answers 307, which instructs the client to repeat
        the POST — body included — at the redirect target.
        """
        webid = credentials_post.get("username", "")
        password = credentials_post.get("password", "")
        if not self.check_password(webid, password):
            raise AuthenticationError("invalid credentials")
        redirect_uri = credentials_post.get("redirect_uri", "")
        state = credentials_post.get(STATE_PARAM, "")
        token = self.issue_token(
            subject=webid,
            audience=origin_of(redirect_uri).split("://", 1)[-1],
            nonce=state,
            now_ms=now_ms,
        )
        location = f"{redirect_uri}?{STATE_PARAM}={state}&issuer={self.idm_id}"
        if never_307:
            return ProtocolMessage(
                kind="idm-redirect",
                status=303,
                headers={"location": location, "x-token": canonical_json(token).hex()},
                body=b"",
            )
        # Legacy: 307 keeps the request method and body on the redirect hop.
        return ProtocolMessage(
            kind="idm-redirect",
            status=307,
            headers={"location": location, "x-token": canonical_json(token).hex()},
            body=canonical_json(credentials_post),
        )


def outbound_navigation(
    page_uri: str, target_uri: str, referrer_strip: bool
) -> ProtocolMessage:
    """Navigation from a fetched page to a (possibly hostile) target.

    With stripping on, cross-origin hops carry the origin only, so state
    parameters in the page URI never reach the target's server logs.
    """
    same_origin = origin_of(page_uri) == origin_of(target_uri)
    if referrer_strip and not same_origin:
        referrer = origin_of(page_uri)
    else:
        referrer = page_uri
    return ProtocolMessage(
        kind="navigation",
        status=200,
        headers={"referrer": referrer, "target": target_uri},
        body=b"",
    )


# --------------------------------------------------------------------------
# anonymous accountable credentials
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DelegationLink:
    """One authority handoff; the upstream issuer signs the link."""

    upstream_credential_id: str
    upstream_issuer: str
    delegate_controller: str
    signature: str

    def payload(self) -> bytes:
        return canonical_json(
            {
                "upstream_credential_id": self.upstream_credential_id,
                "upstream_issuer": self.upstream_issuer,
                "delegate_controller": self.delegate_controller,
            }
        )

    def to_dict(self) -> dict:
        return {
            "upstream_credential_id": self.upstream_credential_id,
            "upstream_issuer": self.upstream_issuer,
            "delegate_controller": self.delegate_controller,
            "signature": self.signature,
        }


@dataclass(frozen=True)
class Credential:
    """Issuer-signed attribute bundle held by a processor.

    ``escrowed_identity`` is the holder's webid sealed to the issuer; pods
    verifying a presentation never learn it. ``credential_secret`` is known
    to holder and issuer only and seeds per-presentation keys.
    """

    credential_id: str
    issuer: str
    attributes: dict[str, object]     # role, organisation, purpose_scopes
    activity_id: str
    escrowed_identity: str            # hex AEAD blob under issuer escrow key
    delegation_chain: tuple[DelegationLink, ...]
    expires_at_ms: int
    issuer_signature: str
    credential_secret: bytes

    def bundle(self) -> dict:
        return {
            "credential_id": self.credential_id,
            "issuer": self.issuer,
            "attributes": self.attributes,
            "activity_id": self.activity_id,
            "escrowed_identity": self.escrowed_identity,
            "delegation_chain": [l.to_dict() for l in self.delegation_chain],
            "expires_at_ms": self.expires_at_ms,
        }

    def signed_payload(self) -> bytes:
        return canonical_json(self.bundle())


@dataclass(frozen=True)
class Presentation:
    """Single-use proof of authority; fresh in every field but ``disclosed``."""

    presentation_id: str
    credential_ref: str               # blinded
    disclosed: dict[str, object]
    nonce: str
    processor_signature_key: str      # per-presentation verification key, hex
    sealed_evidence: str              # hex; opened by the verifying pod

    def core_payload(self) -> bytes:
        return canonical_json(
            {
                "presentation_id": self.presentation_id,
                "credential_ref": self.credential_ref,
                "disclosed": self.disclosed,
                "nonce": self.nonce,
                "processor_signature_key": self.processor_signature_key,
            }
        )

    def to_dict(self) -> dict:
        return {
            "presentation_id": self.presentation_id,
            "credential_ref": self.credential_ref,
            "disclosed": self.disclosed,
            "nonce": self.nonce,
            "processor_signature_key": self.processor_signature_key,
            "sealed_evidence": self.sealed_evidence,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Presentation":
        return cls(
            presentation_id=data["presentation_id"],
            credential_ref=data["credential_ref"],
            disclosed=data["disclosed"],
            nonce=data["nonce"],
            processor_signature_key=data["processor_signature_key"],
            sealed_evidence=data["sealed_evidence"],
        )


@dataclass(frozen=True)
class VerifiedPresentation:
    """What a pod learns from a valid presentation: the class, not the holder."""

    presentation_id: str
    credential_id: str
    issuer: str
    attributes: dict[str, object]
    activity_id: str
    escrowed_identity: str
    delegation_chain: tuple[DelegationLink, ...]
    processor_signature_key: str


def _seal_key(presentation_id: str, nonce: str) -> bytes:
    return hashlib.sha256(b"seal:" + presentation_id.encode() + nonce.encode()).digest()


def presentation_signing_key(credential_secret: bytes, presentation_id: str) -> SigningKey:
    return SigningKey.derive(credential_secret, "presentation:" + presentation_id)


def present_credential(
    credential: Credential | None,
    disclosure_request: list[str],
    rng: DeterministicRng,
    now_ms: int,
    revoked_ids: set[str] | frozenset[str] = frozenset(),
) -> Presentation:
    """Build a fresh presentation disclosing the requested attributes.

    Credential-free access is refused outright: without at least a class
    credential nobody could be held to account for the access later.
    """
    if credential is None:
        raise AccountabilityError("fully anonymous access is not accepted")
    if credential.credential_id in revoked_ids:
        raise RevokedError(f"credential {credential.credential_id} is revoked")
    if credential.expires_at_ms <= now_ms:
        raise AuthenticationError("credential expired")
    unknown = [a for a in disclosure_request if a not in credential.attributes]
    if unknown:
        raise ValidationError(f"cannot disclose unknown attributes: {unknown}")
    presentation_id = f"pr-{rng.hex(12)}"
    nonce = rng.hex(16)
    pkey = presentation_signing_key(credential.credential_secret, presentation_id)
    disclosed = {a: credential.attributes[a] for a in disclosure_request}
    credential_ref = sha256_hex(
        (credential.credential_id + presentation_id + nonce).encode("utf-8")
    )
    core = canonical_json(
        {
            "presentation_id": presentation_id,
            "credential_ref": credential_ref,
            "disclosed": disclosed,
            "nonce": nonce,
            "processor_signature_key": pkey.verify_key_hex,
        }
    )
    holder_binding_sig = pkey.sign_hex(core)
    evidence = canonical_json(
        {
            "bundle": credential.bundle(),
            "issuer_signature": credential.issuer_signature,
            "holder_binding_sig": holder_binding_sig,
        }
    )
    seal_nonce = rng.bytes(AEAD_NONCE_LEN)
    sealed = seal_nonce + aead_encrypt(
        _seal_key(presentation_id, nonce), seal_nonce, evidence, core
    )
    return Presentation(
        presentation_id=presentation_id,
        credential_ref=credential_ref,
        disclosed=disclosed,
        nonce=nonce,
        processor_signature_key=pkey.verify_key_hex,
        sealed_evidence=sealed.hex(),
    )


def verify_presentation(
    presentation: Presentation,
    issuer_keys: dict[str, str],
    revoked_ids: set[str] | frozenset[str],
    now_ms: int,
    max_delegation_depth: int = 2,
) -> VerifiedPresentation:
    """Local verification; no identity service is contacted.

    Checks, in order: the sealed evidence opens and matches the outer
    fields, the issuer signature covers the bundle, the bundle is neither
    expired nor revoked, every delegation link is signed by its upstream
    issuer, and the holder controls the per-presentation key.
    """
    blob = bytes.fromhex(presentation.sealed_evidence)
    nonce, ciphertext = blob[:AEAD_NONCE_LEN], blob[AEAD_NONCE_LEN:]
    core = presentation.core_payload()
    try:
        evidence = from_canonical_json(
            aead_decrypt(_seal_key(presentation.presentation_id, presentation.nonce),
                         nonce, ciphertext, core)
        )
    except IntegrityError as exc:
        raise AuthenticationError("presentation evidence does not match") from exc
    bundle = evidence["bundle"]
    issuer = bundle["issuer"]
    issuer_key = issuer_keys.get(issuer)
    if issuer_key is None:
        raise AuthenticationError(f"unknown issuer: {issuer}")
    if not verify_signature(
        issuer_key, canonical_json(bundle), evidence["issuer_signature"]
    ):
        raise AuthenticationError("issuer signature invalid")
    if bundle["expires_at_ms"] <= now_ms:
        raise AuthenticationError("credential expired")
    if bundle["credential_id"] in revoked_ids:
        raise RevokedError("credential revoked")
    chain = tuple(
        DelegationLink(
            upstream_credential_id=l["upstream_credential_id"],
            upstream_issuer=l["upstream_issuer"],
            delegate_controller=l["delegate_controller"],
            signature=l["signature"],
        )
        for l in bundle["delegation_chain"]
    )
    if len(chain) > max_delegation_depth:
        raise AuthenticationError("delegation chain too deep")
    for link in chain:
        upstream_key = issuer_keys.get(link.upstream_issuer)
        if upstream_key is None or not verify_signature(
            upstream_key, link.payload(), link.signature
        ):
            raise AuthenticationError("delegation link signature invalid")
    for attr, value in presentation.disclosed.items():
        if bundle["attributes"].get(attr) != value:
            raise AuthenticationError(f"disclosed attribute {attr!r} not certified")
    if not verify_signature(
        presentation.processor_signature_key, core, evidence["holder_binding_sig"]
    ):
        raise AuthenticationError("holder binding signature invalid")
    return VerifiedPresentation(
        presentation_id=presentation.presentation_id,
        credential_id=bundle["credential_id"],
        issuer=issuer,
        attributes=bundle["attributes"],
        activity_id=bundle["activity_id"],
        escrowed_identity=bundle["escrowed_identity"],
        delegation_chain=chain,
        processor_signature_key=presentation.processor_signature_key,
    )


# --------------------------------------------------------------------------
# multi-factor gate
# --------------------------------------------------------------------------

FACTOR_KINDS = ("password", "device-key", "proximity")


@dataclass(frozen=True)
class MfaFactor:
    kind: str
    evidence: bytes

    def __post_init__(self):
        if self.kind not in FACTOR_KINDS:
            raise ValidationError(f"unknown factor kind: {self.kind}")


class MfaRegistry:
    """Enrolled second-factor material per agent."""

    def __init__(self):
        self._enrolled: dict[str, dict[str, str]] = {}

    def enroll(self, webid: str, kind: str, evidence: bytes) -> None:
        if kind not in FACTOR_KINDS:
            raise ValidationError(f"unknown factor kind: {kind}")
        self._enrolled.setdefault(webid, {})[kind] = sha256_hex(evidence)

    def verify(self, webid: str, factor: MfaFactor) -> bool:
        expected = self._enrolled.get(webid, {}).get(factor.kind)
        return expected is not None and hmac.compare_digest(
            expected, sha256_hex(factor.evidence)
        )

    def mfa_gate(
        self,
        webid: str,
        action: str,
        factors: list[MfaFactor],
        required_actions: frozenset[str] | set[str],
    ) -> bool:
        """Pass iff two factors of distinct kinds verify.

        Duplicate kinds count once. Actions outside the configured critical
        set pass without factors.
        """
        if action not in required_actions:
            return True
        verified_kinds = {
            f.kind for f in factors if self.verify(webid, f)
        }
        return len(verified_kinds) >= 2
