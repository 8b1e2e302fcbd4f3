"""Exception hierarchy shared across the pod server and harness."""


class PodGuardError(Exception):
    """Base class for all podguard errors."""


class NotFoundError(PodGuardError):
    """Target resource, container, policy or record does not exist."""


class ContainerMissingError(NotFoundError):
    """Parent container does not exist and auto-creation is disabled."""


class NotAContainerError(PodGuardError):
    """Container operation attempted on a plain resource."""


class IntegrityError(PodGuardError):
    """Stored ciphertext or a ledger record failed an authenticity check."""


class ValidationError(PodGuardError):
    """Input violates a structural precondition."""


class AuthorizationError(PodGuardError):
    """Caller lacks the authority required for an internal operation.

    Never surfaces on the wire: the decision engine maps external
    authorization failures onto the uniform not-found response.
    """


class AuthenticationError(PodGuardError):
    """Login or credential verification failed."""


class AccountabilityError(PodGuardError):
    """Operation would break the audit trail (e.g. fully anonymous access)."""


class RevokedError(PodGuardError):
    """Credential or policy has been revoked."""


class ConfigError(PodGuardError):
    """Configuration file is malformed or carries unknown keys."""


class ScriptError(PodGuardError):
    """Scenario script rejected; carries the offending line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no
