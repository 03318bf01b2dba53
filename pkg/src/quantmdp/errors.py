"""Exception types raised across the package."""


class QuantMdpError(Exception):
    """Base class for all package errors."""


class InputError(QuantMdpError, ValueError):
    """Invalid argument (bad dimension, out-of-range parameter, empty input)."""


class DegenerateRegionError(InputError):
    """Lyapunov sizing collapsed the compact region to a point."""


class ResourceError(QuantMdpError):
    """Requested object would exceed a configured size cap."""


class ConvergenceError(QuantMdpError):
    """An iterative solver hit its iteration cap before reaching tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class CertificateError(QuantMdpError):
    """A regularity certificate is inconsistent with the model it is used on."""


class EvaluationError(QuantMdpError):
    """A quantity could not be evaluated (e.g. empirical weighting on an empty bin)."""


class OracleUnstableError(QuantMdpError):
    """The reference solution failed its self-consistency gate."""


class ConfigError(QuantMdpError):
    """Experiment configuration failed schema validation."""
