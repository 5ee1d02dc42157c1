"""Exception types shared across the package."""


class DataError(ValueError):
    """Malformed input file, bundle, or index."""


class StaleStateError(RuntimeError):
    """A propagated state was used after its embedding table changed."""


class MemoryBudgetError(RuntimeError):
    """Materializing similarity rows would exceed the configured budget."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""
