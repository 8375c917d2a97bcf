"""Exception hierarchy shared by every module.

The CLI maps these onto stable exit codes: configuration and validation
problems exit 1, I/O and file-format problems exit 2.
"""


class CapnetError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(CapnetError):
    """Tensor shapes incompatible with the requested operation."""


class DomainError(CapnetError):
    """Numeric input outside an operation's domain (log of non-positive, overflow)."""


class ValidationError(CapnetError):
    """Data fails a contract: non-binary targets, unknown symbols, charset mismatch."""


class EncodingError(ValidationError):
    """A label symbol has no index in the charset."""


class ParameterError(CapnetError):
    """Hyperparameter outside its legal range."""


class DegenerateBatchError(CapnetError):
    """Batch too small for an operation that needs batch statistics."""


class ConfigError(CapnetError):
    """Model or run configuration is internally inconsistent."""


class CapacityError(CapnetError):
    """Requested dataset size exceeds the number of distinct labels."""


class RenderError(CapnetError):
    """A symbol cannot be rendered (missing from the glyph atlas)."""


class DatasetIOError(CapnetError):
    """Base class for dataset persistence failures."""


class MissingFileError(DatasetIOError):
    """A file listed in the manifest does not exist."""


class ManifestError(DatasetIOError):
    """Dataset manifest missing, malformed, or inconsistent."""


class IntegrityError(DatasetIOError):
    """Stored image bytes do not match their declared shape or format."""


class ModelFormatError(CapnetError):
    """Model file malformed (bad magic, unknown tensor, corrupt payload)."""


class TruncationError(ModelFormatError):
    """Model file ends before the declared payload is complete."""


class UnsupportedVersionError(ModelFormatError):
    """Model file written by an incompatible format version."""


class ChecksumError(ModelFormatError):
    """Model file checksum does not match its contents."""
