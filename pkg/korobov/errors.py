"""Exception types shared by the library and the experiment runner."""

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_CONTRACT = 2


class KorobovError(Exception):
    """Base class for every error raised on purpose by this package."""


class ConfigError(KorobovError):
    """Invalid experiment configuration, unknown function name or unwritable output."""

    exit_code = EXIT_CONFIG


class ContractViolation(KorobovError):
    """A gadget or assembled network missed its size or error contract."""

    exit_code = EXIT_CONTRACT


class DomainError(KorobovError, ValueError):
    """Parameters outside the range a construction is defined for."""


class DimensionMismatch(KorobovError, ValueError):
    pass


class SampleError(KorobovError, ValueError):
    """A sampler returned a non-finite value at a requested node."""
