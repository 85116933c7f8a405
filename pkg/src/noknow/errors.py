"""Exception hierarchy.

Everything raised on purpose by this package derives from :class:`NoknowError`,
so callers can catch one type at the boundary.  The CLI maps these onto exit
codes (config 2, numerical 3, resource 4, solver 5).
"""

from __future__ import annotations


class NoknowError(Exception):
    """Base class for all package errors."""


class DimensionError(NoknowError):
    """Operator/state shapes are inconsistent or not square."""


class ModelError(NoknowError):
    """A model is malformed (non-Hermitian Hamiltonian, bad channel mix, ...)."""


class StateError(NoknowError):
    """A state is unusable (non-positive trace, wrong shape, ...)."""


class NumericalError(NoknowError):
    """A computation produced non-finite or inconsistent numbers."""


class RecordError(NoknowError):
    """A measurement record does not match the model or integration grid."""


class ConfigError(NoknowError):
    """Invalid integrator or run configuration."""


class ResourceError(NoknowError):
    """Requested problem size exceeds the supported dense-matrix budget."""


class SolverError(NoknowError):
    """A linear-algebra solve failed to converge or returned garbage."""


class NonHermitianChannelError(ModelError):
    """No-knowledge feedback requires Hermitian coupling operators."""


class AngleError(ModelError):
    """Channel is not tuned to the no-knowledge quadrature angle."""


class NonUnitaryError(ModelError):
    """Jump correction requires a unitary operator."""


class NoQuadratureError(ModelError):
    """No homodyne angle makes this coupling operator's signal pure noise."""


class ParseError(ConfigError):
    """Config document is not syntactically valid."""


class ValidationError(ConfigError):
    """Config document parsed but violates the schema; carries all violations."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {v}" for v in self.violations))
