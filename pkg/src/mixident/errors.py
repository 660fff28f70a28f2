"""Exception hierarchy shared by all modules; the CLI maps these to exit codes."""


class MixidentError(Exception):
    pass


class SchemaError(MixidentError, ValueError):
    """Parameter blocks or extras do not line up."""


class DomainError(MixidentError, ValueError):
    """A value lies outside the admissible domain (exit code 2)."""


class BoundaryError(DomainError):
    """Derivative requested on a support boundary."""


class QuadratureError(DomainError):
    """Integration box does not hold enough mass or refinement ran out."""


class DegenerateError(DomainError):
    """Numerically degenerate input, e.g. an all-zero probe matrix."""


class DependencyError(MixidentError, RuntimeError):
    """An upstream result needed by a computation is unavailable (exit code 3)."""
