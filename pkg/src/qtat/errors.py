"""Exception types shared across the toolkit."""


class QtatError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(QtatError):
    """Malformed or inconsistent configuration input."""


class AdmissibilityError(QtatError):
    """Coefficient pair leaves the admissible set (n > 0, sigma >= 0)."""


class ParamError(QtatError):
    """Phantom or construction parameters outside their documented range."""


class GridMismatch(QtatError):
    """Fields defined on incompatible grids."""


class DivisionByZero(QtatError):
    """|q| fell below the configured floor where 1/q is required."""


class ResolutionError(QtatError):
    """Grid too coarse to resolve the wavelength of the forward problem."""


class NoConvergence(QtatError):
    """Iterative solver hit its iteration cap before reaching tolerance."""


class DegenerateInput(QtatError):
    """Input vector too close to zero (or otherwise degenerate) to use."""


class OrthogonalityError(QtatError):
    """Direction pair violates the required orthogonality."""


class DimensionError(QtatError):
    """Unsupported space dimension."""


class ResonanceError(QtatError):
    """A lattice frequency landed on (or near) the zero set of xi^2 + 2 zeta.xi.

    Remedy: change s (hence zeta) or the box length so the lattice clears
    the resonant set.
    """


class SupportError(QtatError):
    """Coefficient perturbation touches the boundary collar that must stay clear."""


class NoContraction(QtatError):
    """Neumann series does not contract; s (hence |zeta|) is too small."""


class ZeroFieldError(QtatError):
    """A background field vanishes somewhere it must not."""


class DegenerateCase(QtatError):
    """No usable field pair for the boundary-covering test (all give a = 0)."""


class Divergence(QtatError):
    """Outer iteration residual grew for several consecutive damped steps."""


class IllPosedWarning(UserWarning):
    """Unregularized normal solve stagnated; system likely has a near-null space."""
