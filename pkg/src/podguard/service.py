"""Serve one pod over a local socket.

The handler decodes wire requests into the same structures the simulator
uses and pushes everything through the decision engine, so transport is
the only difference between a served run and a simulated one. Responses
carry exactly the engine's headers (plus content-length) — no server
banner, no date — keeping refusal responses bytewise stable.

A simulated-time clock is injected through the service handle; the
harness advances it before each request. Plain-scheme requests (marked by
the ``x-scheme`` header, since TLS termination is external) are dropped
without an answer in hardened mode.
"""

from __future__ import annotations

import base64
import json
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .authn import Presentation
from .codec import canonical_json
from .config import HardeningConfig
from .errors import PodGuardError, ValidationError
from .gdpr import GdprRegistry, export_portable
from .ledger import ciso_view, dpo_view, epoch_for, serialize_view, subject_view
from .policy import (
    Decision,
    Refusal,
    ResourceRequest,
    uniform_not_found,
    upgrade_insecure_uri,
)
from .store import ResourceUri

RESERVED_PREFIXES = ("/admin/", "/login/", "/idm/", "/logs/", "/rights/", "/export/")


class SimClock:
    """Injected time source: pinned simulated time, or wall clock."""

    def __init__(self, wall: bool = False):
        self._wall = wall
        self._now = 0

    @property
    def now_ms(self) -> int:
        if self._wall:
            import time

            return int(time.time() * 1000)
        return self._now

    @now_ms.setter
    def now_ms(self, value: int) -> None:
        self._wall = False
        self._now = value


class ServiceHandle:
    def __init__(self, server: ThreadingHTTPServer, thread: threading.Thread,
                 clock: SimClock, pod_unit, registry: GdprRegistry):
        self.server = server
        self.thread = thread
        self.clock = clock
        self.pod_unit = pod_unit
        self.registry = registry

    @property
    def port(self) -> int:
        return self.server.server_address[1]

    def stop(self) -> None:
        self.server.shutdown()
        self.server.server_close()
        self.thread.join(timeout=5)


def serve_pod(
    pod_unit,
    registry: GdprRegistry,
    config: HardeningConfig,
    idms: dict | None = None,
    port: int = 0,
    wall_clock: bool = False,
) -> ServiceHandle:
    """Expose a pod unit on a local socket; port 0 picks a free one."""
    clock = SimClock(wall=wall_clock)

    class Handler(_PodHandler):
        pass

    Handler.pod_unit = pod_unit
    Handler.registry = registry
    Handler.config = config
    Handler.clock = clock
    Handler.idms = idms or {}
    server = ThreadingHTTPServer(("127.0.0.1", port), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return ServiceHandle(server, thread, clock, pod_unit, registry)


class _PodHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    pod_unit = None
    registry: GdprRegistry | None = None
    config: HardeningConfig | None = None
    clock: SimClock | None = None
    idms: dict = {}

    # silence default stderr logging
    def log_message(self, fmt, *args):  # noqa: D102
        pass

    def _send_decision(self, decision: Decision) -> None:
        body = decision.body
        self.send_response_only(decision.status)
        for name in sorted(decision.headers):
            self.send_header(name, decision.headers[name])
        self.send_header("content-length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _drop_connection(self) -> None:
        """Model a connection-level refusal: close without answering."""
        self.close_connection = True
        try:
            self.connection.shutdown(2)
        except OSError:
            pass

    def _read_body(self) -> bytes:
        length = int(self.headers.get("content-length") or 0)
        return self.rfile.read(length) if length else b""

    def _json_body(self) -> dict:
        raw = self._read_body()
        return json.loads(raw.decode("utf-8")) if raw else {}

    def _handle(self) -> None:
        try:
            self._route()
        except PodGuardError:
            self._send_decision(uniform_not_found())
        except Exception:  # malformed input must not crash the server
            self._send_decision(uniform_not_found())

    do_GET = do_HEAD = do_PUT = do_POST = do_DELETE = do_PATCH = _handle

    def _route(self) -> None:
        now = self.clock.now_ms
        scheme = self.headers.get("x-scheme", "https")
        if scheme != "https":
            raw_uri = f"{scheme}://{self.pod_unit.host}{self.path}"
            outcome = upgrade_insecure_uri(raw_uri, self.config)
            if isinstance(outcome, Refusal):
                self._drop_connection()
                return
            self._send_decision(outcome)
            return
        path = self.path
        if path.startswith("/admin/"):
            self._route_admin(path, now)
            return
        if path.startswith("/login/") or path.startswith("/idm/"):
            self._route_login(path, now)
            return
        if path.startswith("/logs/"):
            self._route_logs(path, now)
            return
        if path.startswith("/export/"):
            self._route_export(path, now)
            return
        self._route_resource(path, now)

    # -- resources ----------------------------------------------------------

    def _route_resource(self, path: str, now: int) -> None:
        presentation = None
        auth = self.headers.get("authorization", "")
        if auth.startswith("Presentation "):
            data = json.loads(base64.b64decode(auth.split(" ", 1)[1]))
            presentation = Presentation.from_dict(data)
        headers = {}
        for name in ("content-type", "slug"):
            value = self.headers.get(name)
            if value:
                headers[name] = value
        expected_subject = self.headers.get("x-expected-subject")
        if expected_subject and expected_subject != self.pod_unit.subject:
            self._send_decision(uniform_not_found({"outcome": "binding-mismatch"}))
            return
        try:
            uri = ResourceUri(self.pod_unit.host, path)
        except ValidationError:
            self._send_decision(uniform_not_found({"outcome": "bad-path"}))
            return
        receipt_time = self.headers.get("x-receipt-time")
        request = ResourceRequest(
            method=self.command,
            uri=uri,
            headers=headers,
            body=self._read_body(),
            agent=self.headers.get("x-agent"),
            presentation=presentation,
            asserted_purpose=self.headers.get("x-purpose", ""),
            asserted_policy_id=self.headers.get("x-policy-id"),
            receipt_signature=self.headers.get("x-receipt-signature"),
            receipt_time_ms=int(receipt_time) if receipt_time else None,
            source_host=self.headers.get("x-source-host", self.client_address[0]),
        )
        decision = self.pod_unit.engine.evaluate(request, now)
        self._send_decision(decision)

    # -- administration (subject-only wire surface) ---------------------------

    def _subject_or_404(self) -> bool:
        return self.headers.get("x-agent") == self.pod_unit.subject

    def _route_admin(self, path: str, now: int) -> None:
        if not self._subject_or_404():
            self._send_decision(uniform_not_found({"outcome": "admin-denied"}))
            return
        unit = self.pod_unit
        if path == "/admin/mkcol" and self.command == "POST":
            body = self._json_body()
            unit.store.create_container(ResourceUri(unit.host, body["path"]))
            self._send_json(200, {"created": body["path"]})
        elif path == "/admin/policies/draft" and self.command == "POST":
            from .harness.world import authorization_request_from_dict

            body = self._json_body()
            snapshot = unit.engine.draft_policy(
                authorization_request_from_dict(body), now
            )
            self._send_json(200, snapshot)
        elif path == "/admin/policies" and self.command == "POST":
            body = self._json_body()
            policy = unit.engine.grant_policy(
                body["snapshot"],
                body["approver"],
                body["approver_signature"],
                body["requester"],
                body["requester_signature"],
                body.get("timestamp_ms", now),
            )
            self._send_json(200, policy.snapshot())
        elif path == "/admin/policies/revoke" and self.command == "POST":
            body = self._json_body()
            policy = unit.engine.revoke_policy(
                body["policy_id"], body["actor"], body["signature"],
                body.get("timestamp_ms", now),
            )
            self._send_json(200, policy.snapshot())
        elif path == "/admin/anchor" and self.command == "POST":
            anchor = unit.ledger.anchor(now)
            self._send_json(200, anchor.to_dict())
        elif path == "/admin/export" and self.command == "GET":
            self._send_json(
                200,
                {
                    "policy_hex": unit.ledger.policy_log.export_lines().hex(),
                    "access_hex": unit.ledger.access_log.export_lines().hex(),
                    "anchors": [a.to_dict() for a in unit.ledger.anchors],
                },
            )
        else:
            self._send_decision(uniform_not_found({"outcome": "admin-unknown"}))

    # -- login flow -----------------------------------------------------------

    def _route_login(self, path: str, now: int) -> None:
        from .authn import RelyingPartyPod

        unit = self.pod_unit
        if not hasattr(unit, "relying_party"):
            unit.relying_party = RelyingPartyPod(
                unit.host, self.idms, unit.engine._rng.fork("rp"),
                issuer_binding=self.config.issuer_binding,
            )
        rp = unit.relying_party
        if path == "/login/begin" and self.command == "POST":
            body = self._json_body()
            redirect, session = rp.begin_login(body["client"], body["idm"], now)
            self._send_json(
                200,
                {
                    "redirect": {
                        "status": redirect.status,
                        "headers": redirect.headers,
                    },
                    "session_id": session.session_id,
                },
            )
        elif path.startswith("/idm/") and path.endswith("/authenticate") and self.command == "POST":
            idm_id = path.split("/")[2]
            idm = self.idms.get(idm_id)
            if idm is None:
                self._send_decision(uniform_not_found({"outcome": "unknown-idm"}))
                return
            body = self._json_body()
            message = idm.authenticate(body, self.config.never_307, now)
            self.send_response_only(message.status)
            for name in sorted(message.headers):
                self.send_header(name, message.headers[name])
            self.send_header("content-length", str(len(message.body)))
            self.end_headers()
            self.wfile.write(message.body)
        elif path == "/login/complete" and self.command == "POST":
            body = self._json_body()
            token = rp.complete_login(
                body["session_id"], body["token"], body["issuer"], now
            )
            self._send_json(200, token.__dict__)
        else:
            self._send_decision(uniform_not_found({"outcome": "login-unknown"}))

    # -- log views --------------------------------------------------------------

    def _parse_factors(self):
        from .authn import MfaFactor

        raw = self.headers.get("x-mfa-factors")
        if not raw:
            return []
        return [
            MfaFactor(kind=f["kind"], evidence=bytes.fromhex(f["evidence_hex"]))
            for f in json.loads(raw)
        ]

    def _route_logs(self, path: str, now: int) -> None:
        agent_id = self.headers.get("x-agent", "")
        agent = self.registry.agents.get(agent_id)
        unit = self.pod_unit
        if agent is None:
            self._send_decision(uniform_not_found({"outcome": "logs-denied"}))
            return
        if path == "/logs/subject" and agent_id == unit.subject:
            self._send_json(200, {"entries": subject_view(unit.ledger)})
            return
        if path == "/logs/dpo" and "dpo" in agent.roles:
            if self.registry.mfa.mfa_gate(
                agent_id, "ciso-log-access", self._parse_factors(),
                self.config.mfa_required_actions,
            ):
                self._send_json(200, {"entries": dpo_view(unit.ledger)})
                return
        if path == "/logs/ciso" and "ciso" in agent.roles:
            if self.registry.mfa.mfa_gate(
                agent_id, "ciso-log-access", self._parse_factors(),
                self.config.mfa_required_actions,
            ):
                epoch = epoch_for(
                    b"service-epoch", now, self.config.pseudonym_epoch_len_ms
                )
                rows = ciso_view(
                    unit.ledger, epoch, sorted(self.registry.agents)
                )
                self.send_response_only(200)
                body = serialize_view(rows)
                self.send_header("content-type", "application/x-ndjson")
                self.send_header("content-length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)
                return
        self._send_decision(uniform_not_found({"outcome": "logs-denied"}))

    def _route_export(self, path: str, now: int) -> None:
        if path != "/export/portability" or not self._subject_or_404():
            self._send_decision(uniform_not_found({"outcome": "export-denied"}))
            return
        unit = self.pod_unit
        bundle = export_portable(
            unit.subject,
            self._parse_factors(),
            self.registry,
            unit.store,
            unit.engine,
            unit.ledger,
            self.config,
            now,
        )
        self._send_json(200, bundle)

    def _send_json(self, status: int, payload: dict) -> None:
        body = canonical_json(payload) + b"\n"
        self.send_response_only(status)
        self.send_header("content-type", "application/json")
        self.send_header("content-length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)
