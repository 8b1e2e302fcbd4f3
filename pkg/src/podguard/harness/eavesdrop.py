"""Network observer model: time, endpoints, padded sizes — nothing else.

A passive observer on the secure channel sees when hosts talk and how
much, with payload lengths rounded up to 128-bit cipher blocks. That is
already enough for identity leaks through hostnames, per-host access
profiles and response-size fingerprints. Plain-scheme traffic additionally
exposes its full request line, which is why hardened pods refuse it before
reading a single path byte.
"""

from __future__ import annotations

from dataclasses import dataclass, field

BLOCK_BITS = 128


def padded_bits(payload_len_bytes: int) -> int:
    """Payload bits rounded up to whole cipher blocks; 0 stays 0."""
    bits = payload_len_bytes * 8
    return ((bits + BLOCK_BITS - 1) // BLOCK_BITS) * BLOCK_BITS


@dataclass(frozen=True)
class ObservedMessage:
    time_ms: int
    src: str
    dst: str
    padded_length_bits: int
    direction: str  # "request" | "response"


@dataclass(frozen=True)
class PlaintextCapture:
    """What an insecure-scheme exchange hands an eavesdropper for free."""

    time_ms: int
    src: str
    dst: str
    content: bytes


@dataclass
class Channel:
    """Message transport that records what an on-path observer learns."""

    observations: list[ObservedMessage] = field(default_factory=list)
    plaintext_captures: list[PlaintextCapture] = field(default_factory=list)

    def transmit(
        self,
        time_ms: int,
        src: str,
        dst: str,
        payload: bytes,
        direction: str,
        secure: bool = True,
    ) -> None:
        self.observations.append(
            ObservedMessage(
                time_ms=time_ms,
                src=src,
                dst=dst,
                padded_length_bits=padded_bits(len(payload)),
                direction=direction,
            )
        )
        if not secure:
            self.plaintext_captures.append(
                PlaintextCapture(time_ms=time_ms, src=src, dst=dst, content=payload)
            )

    def record_refused_connection(self, time_ms: int, src: str, dst: str) -> None:
        """Connection-level reject: the observer sees the attempt, zero payload."""
        self.observations.append(
            ObservedMessage(
                time_ms=time_ms, src=src, dst=dst,
                padded_length_bits=0, direction="request",
            )
        )


def eavesdrop_profile(
    observations: list[ObservedMessage],
    registered_identifiers: dict[str, str],
) -> list[dict]:
    """Leak findings from pure metadata.

    ``registered_identifiers`` maps a person's short identifier to their
    webid; a hostname label containing one is an identity leak. Per-host
    request counts and distinct response-size classes are reported as
    profiling material.
    """
    findings: list[dict] = []
    hosts = sorted({m.dst for m in observations if m.direction == "request"})
    for host in hosts:
        labels = host.split(".")
        for identifier, webid in sorted(registered_identifiers.items()):
            if any(identifier == label or identifier in label for label in labels):
                findings.append(
                    {
                        "kind": "subdomain-identity-leak",
                        "host": host,
                        "identifier": identifier,
                        "subject": webid,
                    }
                )
    for host in hosts:
        count = sum(
            1 for m in observations if m.dst == host and m.direction == "request"
        )
        findings.append(
            {"kind": "access-count-profile", "host": host, "request_count": count}
        )
        sizes = sorted(
            {
                m.padded_length_bits
                for m in observations
                if m.src == host and m.direction == "response"
                and m.padded_length_bits > 0
            }
        )
        if len(sizes) >= 2:
            findings.append(
                {
                    "kind": "size-fingerprint",
                    "host": host,
                    "distinct_response_sizes": sizes,
                }
            )
    return findings
