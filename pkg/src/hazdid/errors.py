"""Exception types shared across the package."""


class InputError(ValueError):
    """Invalid or malformed input data (CLI exit code 2)."""


class EstimationError(RuntimeError):
    """A model could not be estimated (CLI exit code 1)."""


class SingularDesignError(EstimationError):
    """The design is rank deficient; ``term`` names the offending column."""

    def __init__(self, term, message=None):
        self.term = term
        super().__init__(message or f"design is singular: term {term!r} is collinear "
                                    "with earlier terms or with the strata")
