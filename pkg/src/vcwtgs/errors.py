"""Exception types shared across the package."""


class VcwtgsError(Exception):
    pass


class ConfigError(VcwtgsError, ValueError):
    pass


class DataError(VcwtgsError, ValueError):
    pass


class NumericalError(VcwtgsError, ArithmeticError):
    """Raised when the posterior algebra hits a non-positive pivot or scale.

    ``size`` is the model size |gamma| being factorized, ``min_pivot`` the
    offending pivot (when known) and ``iteration`` the sampler iteration at
    which the failure surfaced (filled in by the samplers).
    """

    def __init__(self, message, *, size=None, min_pivot=None, iteration=None):
        super().__init__(message)
        self.size = size
        self.min_pivot = min_pivot
        self.iteration = iteration

    def __str__(self):
        msg = super().__str__()
        extra = []
        if self.size is not None:
            extra.append(f"|gamma|={self.size}")
        if self.min_pivot is not None:
            extra.append(f"min_pivot={self.min_pivot:.3e}")
        if self.iteration is not None:
            extra.append(f"iteration={self.iteration}")
        return f"{msg} ({', '.join(extra)})" if extra else msg
