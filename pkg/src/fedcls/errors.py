"""Exception hierarchy shared across the package.

Every documented failure mode maps to a distinct class so the CLI can
translate it into a distinct nonzero exit status.
"""


class FedclsError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ContractError(FedclsError):
    """A caller violated an operation precondition (level/scale/domain/shape)."""

    exit_code = 3


class ConfigError(FedclsError):
    """Invalid or unsupported configuration (parameters, missing keys, bad dims)."""

    exit_code = 4


class NoiseBudgetError(FedclsError):
    """The modulus chain is exhausted; no further rescale/multiply is possible."""

    exit_code = 5


class NumericalError(FedclsError):
    """A numerical procedure failed (singular system, divergence, NaN)."""

    exit_code = 6


class WireError(FedclsError):
    """Malformed serialized payload."""

    exit_code = 7


class BadMagicError(WireError):
    exit_code = 8


class BadVersionError(WireError):
    exit_code = 9


class ChecksumError(WireError):
    exit_code = 10
