"""Exception types shared across the package."""


class TcnError(Exception):
    """Base class for all package errors."""


class ConfigError(TcnError):
    """Bad wiring: dimension mismatches, unknown variants, malformed configs."""


class SchemaError(ConfigError):
    """An input file does not match the expected schema."""


class EncodingError(ConfigError):
    """A categorical value has no entry in the encoding table."""


class NumericError(TcnError):
    """Non-finite values where finite ones are required."""


class UsageError(TcnError):
    """API called out of contract (wrong order, wrong inputs)."""
