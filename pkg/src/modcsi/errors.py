"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of a metric or map (e.g. a zero vector)."""


class DegenerateBasisError(ValueError):
    """A set of basis vectors is (numerically) rank deficient.

    Attributes
    ----------
    column : int or None
        Index of the first column found to be linearly dependent on its predecessors.
    """

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap."""


class ConfigError(ValueError):
    """Invalid experiment configuration.

    Attributes
    ----------
    diagnostics : list of str
        One human readable line per problem, prefixed with field path and line number
        when available.
    """

    def __init__(self, diagnostics):
        if isinstance(diagnostics, str):
            diagnostics = [diagnostics]
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


class InvariantViolation(AssertionError):
    """A hard runtime invariant failed during an experiment."""

    def __init__(self, name, detail=""):
        self.name = name
        super().__init__(f"{name}: {detail}" if detail else name)
