"""Release gate for aggregate data: k-anonymity and l-diversity with
fake-identity accounting.

A dataset is released only if every quasi-identifier equivalence class
still satisfies the thresholds after discounting records from suspected
fake identities — an attacker who pads a victim's class with invented
subjects must not be able to buy the release and then subtract their own
records. Suspicion is a heuristic, not a detector claim: identities whose
credentials trace to issuers with too little standing are discounted.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import ConfigError


@dataclass(frozen=True)
class ReleaseRecord:
    subject: str
    quasi: tuple
    sensitive: object


@dataclass(frozen=True)
class ReleaseDecision:
    released: bool
    failing_class: tuple | None
    reason: str
    class_count: int


def k_anon_release(
    records: list[ReleaseRecord],
    k: int,
    l: int,
    sybil_suspects: set[str] | frozenset[str] = frozenset(),
) -> ReleaseDecision:
    """All-or-nothing release decision.

    Every equivalence class (grouping by the full quasi-identifier tuple)
    must contain at least ``k`` non-suspect subjects and at least ``l``
    distinct sensitive values among them.
    """
    if k < 2 or l < 2:
        raise ConfigError("k and l must both be at least 2")
    classes: dict[tuple, list[ReleaseRecord]] = {}
    for record in records:
        classes.setdefault(record.quasi, []).append(record)
    for quasi in sorted(classes, key=repr):
        members = classes[quasi]
        genuine = [r for r in members if r.subject not in sybil_suspects]
        if len(genuine) < k:
            return ReleaseDecision(
                released=False,
                failing_class=quasi,
                reason=(
                    f"class {quasi!r} has {len(genuine)} genuine members, "
                    f"needs {k}"
                ),
                class_count=len(classes),
            )
        distinct = {repr(r.sensitive) for r in genuine}
        if len(distinct) < l:
            return ReleaseDecision(
                released=False,
                failing_class=quasi,
                reason=(
                    f"class {quasi!r} has {len(distinct)} distinct sensitive "
                    f"values, needs {l}"
                ),
                class_count=len(classes),
            )
    return ReleaseDecision(
        released=True, failing_class=None, reason="all classes pass",
        class_count=len(classes),
    )


def sybil_suspects_by_issuer_standing(
    subject_issuers: dict[str, str],
    issuer_reputation: dict[str, int],
    min_reputation: int = 2,
) -> set[str]:
    """Heuristic: subjects vouched for only by low-standing issuers."""
    return {
        subject
        for subject, issuer in subject_issuers.items()
        if issuer_reputation.get(issuer, 0) < min_reputation
    }
