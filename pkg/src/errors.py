"""
Exception hierarchy for the beamformer toolkit.

Iterative routines never raise on non-convergence; they hand back a result
with ``converged=False`` and log a warning instead.
"""


class BeamAlignError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(BeamAlignError, ValueError):
    """Invalid configuration values or unknown configuration keys."""


class InfeasibleConfig(ConfigError):
    """Problem dimensions that cannot be realized (e.g. d > M)."""


class NotOrthonormal(BeamAlignError, ValueError):
    """A matrix expected to have orthonormal columns does not."""


class ZeroDirection(BeamAlignError, ArithmeticError):
    """A whitened matched filter collapsed to the zero vector."""


class AllZeroGains(BeamAlignError, ValueError):
    """Water-filling was asked to allocate power over all-zero gains."""


class SingularEquivalentChannel(BeamAlignError, ArithmeticError):
    """The equivalent d x d channel is numerically singular."""


class SchemaVersionError(BeamAlignError):
    """A persisted document was written by a newer schema version."""


class PersistenceError(BeamAlignError):
    """Reading or writing a result file failed."""

    def __init__(self, path, message):
        self.path = str(path)
        super().__init__(f'{message}: {self.path}')
