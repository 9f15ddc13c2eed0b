"""Exception types raised across the package.

All of them derive from ValueError so callers that only care about
"bad input" can catch a single class.
"""


class DehnFillError(ValueError):
    """Base class for every rejection raised by this package."""


class DomainError(DehnFillError):
    """A radius, mass, or parameter lies outside its admissible range."""


class DimensionError(DehnFillError):
    """Array shapes or dimensions do not agree."""


class NonPrimitiveError(DehnFillError):
    """An integer vector is not primitive (its coefficients share a factor)."""

    def __init__(self, coeffs, divisor):
        self.coeffs = tuple(coeffs)
        self.divisor = divisor
        super().__init__(
            f"filling curve {self.coeffs} is not primitive: "
            f"all coefficients are divisible by {divisor}"
        )


class SeamMismatchError(DehnFillError):
    """Two model pieces disagree where they are supposed to be glued."""

    def __init__(self, discrepancy, tol):
        self.discrepancy = discrepancy
        self.tol = tol
        super().__init__(
            f"cross-section Gram mismatch at the seam: {discrepancy:.3e} exceeds {tol:.1e}"
        )


class ChartError(DehnFillError):
    """A finite-difference stencil would leave the chart's domain."""


class AdmissibilityError(DehnFillError):
    """A filling curve is not admissible for a flat-manifold end."""


class RelationError(DehnFillError):
    """A group presentation is malformed or fails validation."""


class ConfigError(DehnFillError):
    """An experiment configuration is invalid.

    ``location`` names the offending key path, e.g. ``lattice.gram[1]``.
    """

    def __init__(self, location, message):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)
