"""Exception types shared across the toolkit."""


class HowlsimError(Exception):
    """Base class for all howlsim errors."""


class ConfigError(HowlsimError, ValueError):
    """Invalid configuration: bad geometry, out-of-range parameters, or
    mismatched components (RIR set vs scene, frame-size contracts, ...)."""


class DegenerateInputError(HowlsimError, ValueError):
    """An input signal is empty, all-zero, or otherwise unusable."""


class UnmeasurableError(HowlsimError, RuntimeError):
    """A measurement cannot be made on the given data."""
