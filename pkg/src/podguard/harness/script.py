"""Scenario scripts: line-oriented, human-readable, strictly validated.

Grammar (one directive per line, ``#`` starts a comment, shell-style
quoting for payload text):

    seed <int>
    preset hardened|legacy
    toggle <boolean-field> on|off
    set <numeric-field> <value>
    agent <name> roles <r1,r2,...> [host <host>] [controller <agent>]
    pod <subject-agent>
    activity <controller> <activity-id> purposes <p1,p2,...> [contact <text>]
    credential <name> issuer <controller> holder <agent> activity <id>
               role <role> org <org> scopes <s1,s2,...>
    bind <subject> <pod-host> attester <agent> [attr <k>=<v> ...]
    at <ms> mkcol <actor> <pod> <path>
    at <ms> put <actor> <pod> <path> <content-type> <payload>
    at <ms> get|head|delete <actor> <pod> <path>
               [purpose <p>] [policy <alias>] [credential <name>]
    at <ms> grant <alias> approver <agent> pod <pod>
               grantee agent:<name>|class:<controller>:<role>
               modes <m1,m2> basis <basis> purpose <p>
               from <ms> until <ms> retention <spec> requester <agent>
               [audience viewer|processor]
    at <ms> revoke <actor> <alias>
    at <ms> probe <source-host> <pod> <path>
    at <ms> anchor <pod>

Retention spec: ``unrestricted``, ``destroy-after-use`` or ``window:<ms>``.
Action times must be strictly increasing: the interleaving is the script.
"""

from __future__ import annotations

import shlex
from dataclasses import dataclass, field

from ..errors import ScriptError

ACTION_KINDS = (
    "mkcol", "put", "get", "head", "delete", "grant", "revoke", "probe", "anchor",
)

BOOLEAN_FIELDS = (
    "always_404", "never_307", "issuer_binding", "referrer_strip",
    "refuse_insecure_scheme",
)

NUMERIC_FIELDS = (
    "pseudonym_epoch_len_ms", "probe_burst_threshold", "sybil_fraction_threshold",
    "delegation_max_depth", "k", "l",
)


@dataclass
class ScenarioScript:
    seed: int = 0
    preset: str = "hardened"
    overrides: dict = field(default_factory=dict)
    agents: list[dict] = field(default_factory=list)
    pods: list[str] = field(default_factory=list)
    activities: list[dict] = field(default_factory=list)
    credentials: list[dict] = field(default_factory=list)
    bindings: list[dict] = field(default_factory=list)
    actions: list[dict] = field(default_factory=list)


def _kv_pairs(tokens: list[str], line_no: int) -> dict[str, str]:
    if len(tokens) % 2 != 0:
        raise ScriptError(line_no, f"dangling keyword in {tokens!r}")
    return {tokens[i]: tokens[i + 1] for i in range(0, len(tokens), 2)}


def parse_script(text: str) -> ScenarioScript:
    script = ScenarioScript()
    agent_names: set[str] = set()
    pod_names: set[str] = set()
    credential_names: set[str] = set()
    grant_aliases: set[str] = set()
    last_at = -1

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            tokens = shlex.split(line)
        except ValueError as exc:
            raise ScriptError(line_no, f"unbalanced quoting: {exc}") from exc
        head, rest = tokens[0], tokens[1:]

        if head == "seed":
            script.seed = _int(rest, 0, line_no, "seed")
        elif head == "preset":
            if len(rest) != 1 or rest[0] not in ("hardened", "legacy"):
                raise ScriptError(line_no, "preset must be 'hardened' or 'legacy'")
            script.preset = rest[0]
        elif head == "toggle":
            if len(rest) != 2 or rest[0] not in BOOLEAN_FIELDS or rest[1] not in ("on", "off"):
                raise ScriptError(line_no, f"toggle <field> on|off, fields: {BOOLEAN_FIELDS}")
            script.overrides[rest[0]] = rest[1] == "on"
        elif head == "set":
            if len(rest) != 2 or rest[0] not in NUMERIC_FIELDS:
                raise ScriptError(line_no, f"set <field> <value>, fields: {NUMERIC_FIELDS}")
            value = float(rest[1]) if rest[0] == "sybil_fraction_threshold" else int(rest[1])
            script.overrides[rest[0]] = value
        elif head == "agent":
            if len(rest) < 3 or rest[1] != "roles":
                raise ScriptError(line_no, "agent <name> roles <r1,r2,...> ...")
            name = rest[0]
            if name in agent_names:
                raise ScriptError(line_no, f"duplicate agent {name!r}")
            extra = _kv_pairs(rest[3:], line_no)
            if extra.get("controller") and extra["controller"] not in agent_names:
                raise ScriptError(line_no, f"unknown controller {extra['controller']!r}")
            script.agents.append(
                {
                    "name": name,
                    "roles": rest[2].split(","),
                    "host": extra.get("host"),
                    "controller": extra.get("controller"),
                }
            )
            agent_names.add(name)
        elif head == "pod":
            if len(rest) != 1 or rest[0] not in agent_names:
                raise ScriptError(line_no, "pod <registered-subject>")
            script.pods.append(rest[0])
            pod_names.add(rest[0])
        elif head == "activity":
            if len(rest) < 4 or rest[2] != "purposes":
                raise ScriptError(line_no, "activity <controller> <id> purposes <p,...>")
            if rest[0] not in agent_names:
                raise ScriptError(line_no, f"unknown controller {rest[0]!r}")
            extra = _kv_pairs(rest[4:], line_no)
            script.activities.append(
                {
                    "controller": rest[0],
                    "activity_id": rest[1],
                    "purposes": rest[3].split(","),
                    "contact": extra.get("contact", f"{rest[0]}@contact.example"),
                }
            )
        elif head == "credential":
            fields = _kv_pairs(rest[1:], line_no)
            missing = {"issuer", "holder", "activity", "role", "org", "scopes"} - set(fields)
            if missing:
                raise ScriptError(line_no, f"credential missing {sorted(missing)}")
            if rest[0] in credential_names:
                raise ScriptError(line_no, f"duplicate credential {rest[0]!r}")
            for ref in (fields["issuer"], fields["holder"]):
                if ref not in agent_names:
                    raise ScriptError(line_no, f"unknown agent {ref!r}")
            script.credentials.append(
                {
                    "name": rest[0],
                    "issuer": fields["issuer"],
                    "holder": fields["holder"],
                    "activity_id": fields["activity"],
                    "role": fields["role"],
                    "organisation": fields["org"],
                    "purpose_scopes": fields["scopes"].split(","),
                }
            )
            credential_names.add(rest[0])
        elif head == "bind":
            if len(rest) < 4 or rest[2] != "attester":
                raise ScriptError(line_no, "bind <subject> <pod-host> attester <agent> ...")
            attributes = {}
            for token in rest[4:]:
                if token == "attr":
                    continue
                key, sep, value = token.partition("=")
                if not sep:
                    raise ScriptError(line_no, f"bad attribute {token!r}")
                attributes[key] = value
            script.bindings.append(
                {
                    "subject": rest[0],
                    "pod_host": rest[1],
                    "attester": rest[3],
                    "attributes": attributes,
                }
            )
        elif head == "at":
            action = _parse_action(rest, line_no, agent_names, pod_names,
                                   credential_names, grant_aliases)
            if action["at_ms"] <= last_at:
                raise ScriptError(line_no, "action times must strictly increase")
            last_at = action["at_ms"]
            script.actions.append(action)
        else:
            raise ScriptError(line_no, f"unknown directive {head!r}")
    return script


def _int(tokens: list[str], index: int, line_no: int, what: str) -> int:
    try:
        return int(tokens[index])
    except (IndexError, ValueError) as exc:
        raise ScriptError(line_no, f"expected integer {what}") from exc


def _parse_action(
    rest: list[str],
    line_no: int,
    agents: set[str],
    pods: set[str],
    credentials: set[str],
    grant_aliases: set[str],
) -> dict:
    at_ms = _int(rest, 0, line_no, "timestamp")
    if len(rest) < 2:
        raise ScriptError(line_no, "missing action kind")
    kind = rest[1]
    args = rest[2:]
    if kind not in ACTION_KINDS:
        raise ScriptError(line_no, f"unknown action {kind!r}")
    action: dict = {"at_ms": at_ms, "kind": kind, "line_no": line_no}

    def need_agent(name: str) -> str:
        if name not in agents:
            raise ScriptError(line_no, f"unknown agent {name!r}")
        return name

    def need_pod(name: str) -> str:
        if name not in pods:
            raise ScriptError(line_no, f"unknown pod {name!r}")
        return name

    if kind == "mkcol":
        if len(args) != 3:
            raise ScriptError(line_no, "mkcol <actor> <pod> <path>")
        action.update(actor=need_agent(args[0]), pod=need_pod(args[1]), path=args[2])
    elif kind == "put":
        if len(args) != 5:
            raise ScriptError(line_no, "put <actor> <pod> <path> <content-type> <payload>")
        action.update(
            actor=need_agent(args[0]), pod=need_pod(args[1]), path=args[2],
            content_type=args[3], payload=args[4],
        )
    elif kind in ("get", "head", "delete"):
        if len(args) < 3:
            raise ScriptError(line_no, f"{kind} <actor> <pod> <path> ...")
        extra = _kv_pairs(args[3:], line_no)
        if extra.get("credential") and extra["credential"] not in credentials:
            raise ScriptError(line_no, f"unknown credential {extra['credential']!r}")
        if extra.get("policy") and extra["policy"] not in grant_aliases:
            raise ScriptError(line_no, f"unknown policy alias {extra['policy']!r}")
        action.update(
            actor=need_agent(args[0]), pod=need_pod(args[1]), path=args[2],
            purpose=extra.get("purpose", ""), policy=extra.get("policy"),
            credential=extra.get("credential"),
        )
    elif kind == "grant":
        if not args:
            raise ScriptError(line_no, "grant <alias> ...")
        alias = args[0]
        if alias in grant_aliases:
            raise ScriptError(line_no, f"duplicate grant alias {alias!r}")
        fields = _kv_pairs(args[1:], line_no)
        missing = {
            "approver", "pod", "grantee", "modes", "basis", "purpose",
            "from", "until", "retention", "requester",
        } - set(fields)
        if missing:
            raise ScriptError(line_no, f"grant missing {sorted(missing)}")
        need_agent(fields["approver"])
        need_agent(fields["requester"])
        need_pod(fields["pod"])
        grantee = fields["grantee"]
        if not (grantee.startswith("agent:") or grantee.startswith("class:")):
            raise ScriptError(line_no, "grantee is agent:<name> or class:<issuer>:<role>")
        retention = fields["retention"]
        if retention not in ("unrestricted", "destroy-after-use") and not (
            retention.startswith("window:") and retention.split(":", 1)[1].isdigit()
        ):
            raise ScriptError(line_no, f"bad retention {retention!r}")
        action.update(
            alias=alias,
            approver=fields["approver"],
            pod=fields["pod"],
            grantee=grantee,
            modes=fields["modes"].split(","),
            basis=fields["basis"],
            purpose=fields["purpose"],
            valid_from_ms=int(fields["from"]),
            valid_until_ms=int(fields["until"]),
            retention=retention,
            requester=fields["requester"],
            audience=fields.get(
                "audience",
                "processor" if grantee.startswith("class:") else "viewer",
            ),
        )
        grant_aliases.add(alias)
    elif kind == "revoke":
        if len(args) != 2 or args[1] not in grant_aliases:
            raise ScriptError(line_no, "revoke <actor> <known-alias>")
        action.update(actor=need_agent(args[0]), alias=args[1])
    elif kind == "probe":
        if len(args) != 3:
            raise ScriptError(line_no, "probe <source-host> <pod> <path>")
        action.update(source=args[0], pod=need_pod(args[1]), path=args[2])
    elif kind == "anchor":
        if len(args) != 1:
            raise ScriptError(line_no, "anchor <pod>")
        action.update(pod=need_pod(args[0]))
    return action
