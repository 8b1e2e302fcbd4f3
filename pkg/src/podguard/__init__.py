"""podguard: a privacy-hardened personal data pod server with an
adversarial conformance harness.

The pod side: encrypted container storage with crypto-shredding erasure,
a decision engine whose refusals are bytewise uniform, hardened login and
anonymous-but-accountable credential presentation, dual tamper-evident
audit logs, and the controller/rights protocols that make accesses
answerable. The harness side: deterministic multi-agent scenarios,
scripted attackers run differentially against each mitigation toggle, a
metadata-only eavesdropper, release anonymity checks and a requirement
coverage matrix.
"""

from .config import HardeningConfig, hardened_preset, legacy_preset, load_config
from .errors import PodGuardError
from .policy import Decision, DecisionEngine, ResourceRequest
from .store import PodStore, ResourceUri

__version__ = "0.1.0"

__all__ = [
    "Decision",
    "DecisionEngine",
    "HardeningConfig",
    "PodGuardError",
    "PodStore",
    "ResourceRequest",
    "hardened_preset",
    "legacy_preset",
    "load_config",
    "__version__",
]
