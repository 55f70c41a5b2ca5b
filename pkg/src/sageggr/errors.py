"""Exception types raised across the package."""


class SageError(Exception):
    """Base class for all package-specific errors."""


class PositiveDefinitenessViolation(SageError):
    """A precision matrix requested for sampling is not positive definite.

    Carries the offending covariate pattern in ``covariates``.
    """

    def __init__(self, covariates):
        self.covariates = covariates
        super().__init__(
            f"precision matrix is not positive definite at covariates {covariates!r}"
        )


class DegenerateDesign(SageError):
    """Design matrix has no eigenvalue above the rank tolerance."""


class Infeasible(SageError):
    """The debias constraint set is empty for the given thresholds."""

    def __init__(self, message, violation=None):
        self.violation = violation
        super().__init__(message)


class SingularRestrictedDesign(SageError):
    """Support-restricted design columns are rank deficient."""


class SupportTooLarge(SageError):
    """Support size reaches or exceeds the sample count."""


class DegenerateNoise(SageError):
    """Residual sum of squares is (numerically) zero; noise scale undefined."""


class SingularContrastCovariance(SageError):
    """Contrast covariance matrix is singular (rank-deficient rows or collinear columns)."""


class InputError(SageError):
    """Malformed user input (files, configuration, shapes)."""
