"""Exception hierarchy shared across the package."""


class SplatsliceError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(SplatsliceError, ValueError):
    """An argument violates an operation's precondition."""


class ContractViolationError(SplatsliceError):
    """An internal contract was broken (e.g. unsorted compositing input)."""


class PlyError(SplatsliceError):
    """Base class for PLY ingestion failures."""


class PlyParseError(PlyError):
    """Malformed PLY header or body."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class PlySchemaError(PlyError):
    """A required vertex property is missing or has the wrong layout."""


class PlyDataError(PlyError):
    """Vertex data contains invalid (e.g. non-finite) values."""

    def __init__(self, message, vertex=None):
        if vertex is not None:
            message = f"vertex {vertex}: {message}"
        super().__init__(message)
        self.vertex = vertex


class ManifestError(SplatsliceError):
    """State-sequence manifest is malformed or inconsistent."""


class CompileError(SplatsliceError):
    """Consolidation cannot produce a well-formed layered asset."""


class AssetFormatError(SplatsliceError):
    """Encoded asset has a bad magic, version or field value."""


class AssetTruncatedError(AssetFormatError):
    """Encoded asset is shorter than its header claims."""

    def __init__(self, expected, actual):
        super().__init__(f"truncated asset: expected {expected} bytes, got {actual}")
        self.expected = expected
        self.actual = actual


class AssetIntegrityError(AssetFormatError):
    """Checksum mismatch in an encoded asset."""
