"""Exception types shared across the package."""


class ModelError(ValueError):
    """Invalid model specification or out-of-domain argument."""


class UnstableQueueError(ModelError):
    """Raised when a stationary quantity is requested for a queue with
    utilization >= 1."""

    def __init__(self, rho: float):
        self.rho = rho
        super().__init__(f"queue is unstable: utilization rho = {rho:.6g} >= 1")


class NotInvertibleError(ModelError):
    """Raised when the cumulative rate multiplier cannot be inverted because
    the rate multiplier vanishes on an interval."""


class NumericsError(RuntimeError):
    """Numerical routine failed to reach the requested accuracy.

    Carries the best available estimate and its error bound, when known.
    """

    def __init__(self, message: str, estimate: float | None = None,
                 error_estimate: float | None = None):
        self.estimate = estimate
        self.error_estimate = error_estimate
        if estimate is not None:
            message += f" (best estimate {estimate!r}, error {error_estimate!r})"
        super().__init__(message)
