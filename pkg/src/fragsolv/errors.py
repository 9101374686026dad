"""Exception hierarchy.

The CLI maps each family to one exit code: input/usage problems to 1,
numerical failures to 2, file and format problems to 3.
"""


class FragsolvError(Exception):
    pass


# -- usage / parameter problems (exit 1)

class ParameterError(FragsolvError, ValueError):
    pass


class SpillError(ParameterError):
    """A site or atom sits too close to (or outside) a grid box face."""


class SizeGuardError(ParameterError):
    pass


class CycleError(ParameterError):
    pass


class SemanticError(FragsolvError, TypeError):
    """A payload or transform does not match the declared quantity kind."""


# -- file / format problems (exit 3)

class FormatError(FragsolvError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnknownElementError(FormatError):
    pass


class PartitionError(FormatError):
    def __init__(self, reason, indices):
        self.reason = reason
        self.indices = sorted(indices)
        shown = ", ".join(str(i) for i in self.indices)
        super().__init__(f"{reason}: {shown}")


class AtomIndexError(FormatError, IndexError):
    pass


class NotFoundError(FragsolvError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class VersionError(FragsolvError, LookupError):
    pass


# -- numerical failures (exit 2)

class NumericalError(FragsolvError, ArithmeticError):
    pass


class SingularSystemError(NumericalError):
    def __init__(self, message, fragment_id=None):
        super().__init__(message)
        self.fragment_id = fragment_id


class NonConvergenceError(NumericalError):
    """Iteration limit reached. ``state`` holds the last iterate, ``history`` the residuals."""

    def __init__(self, message, state=None, history=()):
        super().__init__(message)
        self.state = state
        self.history = list(history)


class DivergenceError(NumericalError):
    pass


class ClosureOverflowError(NumericalError):
    pass


