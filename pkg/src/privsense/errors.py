"""Exception types shared across the framework."""


class PrivsenseError(Exception):
    """Base class for all framework errors."""


class UnknownSourceError(PrivsenseError):
    """A source_id that is not part of the data source catalog."""

    def __init__(self, source_id: str):
        super().__init__(f"unknown data source: {source_id!r}")
        self.source_id = source_id


class EmptyInputError(PrivsenseError):
    """An input string that must be nonempty was empty."""


class InvalidEventError(PrivsenseError):
    """An event failed validation where a valid event was required."""

    def __init__(self, violations):
        super().__init__(f"invalid event: {[str(v) for v in violations]}")
        self.violations = tuple(violations)


class MissingEthicsApprovalError(PrivsenseError):
    """Agent configuration lacks an ethics approval reference."""


class NoConsentError(PrivsenseError):
    """Operation requires recorded consent."""


class OptedOutError(PrivsenseError):
    """Operation is not available after opt-out."""


class PddDisabledError(PrivsenseError):
    """Daily diary completion tracking is disabled on this agent."""


class InvalidWindowError(PrivsenseError):
    """A date window whose end precedes its start."""


class ChannelInsecureError(PrivsenseError):
    """Refused to hand data to an unauthenticated or unencrypted channel."""


class NetworkFailureError(PrivsenseError):
    """Transient transfer failure; the operation may be retried."""


class NotRegisteredError(PrivsenseError):
    """Upload attempted before the device registered with the backend."""


class UnknownDeviceError(PrivsenseError):
    """The backend holds no record for this device pseudonym."""

    def __init__(self, device_pseudonym: str):
        super().__init__(f"unknown device: {device_pseudonym!r}")
        self.device_pseudonym = device_pseudonym


class RawDataRejectedError(PrivsenseError):
    """The backend refused a batch containing non-anonymized events."""


class EmptyContactError(PrivsenseError):
    """Enrollment requires nonempty contact information."""


class MalformedExportError(PrivsenseError):
    """An export manifest did not parse against its documented format."""


class InvalidProfileError(PrivsenseError):
    """A simulation profile violates its invariants."""


class ConfigError(PrivsenseError):
    """A configuration file is missing keys or carries bad values."""
