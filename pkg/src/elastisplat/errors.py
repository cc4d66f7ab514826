"""Exception types shared across the package."""


class ElastisplatError(Exception):
    """Base class for package-specific failures."""


class InvalidAttributeError(ElastisplatError, ValueError):
    """Gaussian attributes violate a shape, dtype, or finiteness contract."""


class InvalidRatioError(ElastisplatError, ValueError):
    """Requested keep-ratio falls outside (0, 1]."""


class StaleGraphError(ElastisplatError, RuntimeError):
    """A render graph was used after the model it captured was mutated."""


class StaleImportanceError(ElastisplatError, RuntimeError):
    """An importance table older than the refresh cadence was consumed."""


class ConfigError(ElastisplatError, ValueError):
    """A configuration value failed validation.

    `field` names the offending key as a dotted path, e.g. "config.ratios".
    """

    def __init__(self, message: str, field: str | None = None):
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field


class FormatError(ElastisplatError, ValueError):
    """A serialized artifact could not be parsed.

    Carries the byte offset at which parsing failed when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ChecksumError(FormatError):
    """Stored checksum does not match the payload."""


class VersionError(FormatError):
    """Artifact version is not supported by this build."""
