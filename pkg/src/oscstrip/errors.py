"""Exception hierarchy shared by all oscstrip modules."""


class OscStripError(Exception):
    """Base class for every error raised by this package."""


class ProfileError(OscStripError, ValueError):
    """Invalid boundary profile parameters."""


class NegativeProfileError(ProfileError):
    """The synthesized profile dips below zero."""


class PeriodError(ProfileError):
    """Custom profile samples are not 1-periodic."""


class DegenerateDomainError(OscStripError, ValueError):
    """Strip parameters violate eta * b_max < d / 2 or L / epsilon is not integral."""


class MeshQualityError(OscStripError):
    """A mesh element is inverted or has an angle below the quality threshold."""


class QuadratureError(OscStripError):
    """A coefficient or forcing value is non-finite at a quadrature point."""


class ModalReductionError(OscStripError, ValueError):
    """Coefficients supplied to the modal solver depend on x1."""


class UnclassifiableRegimeError(OscStripError, ValueError):
    """A tabulated eta law has no discernible limit of eta / epsilon."""


class NonConvergenceError(OscStripError):
    """The linear solve did not reach the requested residual."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


class SingularSystemError(OscStripError):
    """The assembled matrix is numerically singular."""


class OutOfDomainError(OscStripError, ValueError):
    """An evaluation point lies outside the meshed domain."""

    def __init__(self, point):
        super().__init__(f"point {tuple(point)} is outside the mesh")
        self.point = tuple(point)


class ModeMismatchError(OscStripError, ValueError):
    """Reference Fourier mode differs from the forcing mode."""


class TruncationWarning(UserWarning):
    """The truncated corrector cell is not tall enough for the far field to settle."""


class UnderflowError(OscStripError):
    """Decay profile values fall below the representable fit window."""


class ConstructionError(OscStripError):
    """An analytic reference failed its own consistency checks."""


class SingularityError(OscStripError):
    """Zero pivot in the tridiagonal elimination."""


class MissingDegeneracyError(OscStripError, ValueError):
    """A degenerate-Robin bound was requested without a degeneracy description."""


class DiscretizationNotConverged(OscStripError):
    """Two-resolution error agreement failed at the finest allowed mesh."""

    def __init__(self, epsilon, change):
        super().__init__(
            f"discretization not converged at epsilon={epsilon:g}: "
            f"relative change {change:.3f} between resolutions"
        )
        self.epsilon = epsilon
        self.change = change


class DegenerateFitError(OscStripError, ValueError):
    """Log-log fit with fewer than three points or no spread in epsilon."""


class ExperimentSpecError(OscStripError, ValueError):
    """Experiment configuration is inconsistent with the theorem it targets."""
