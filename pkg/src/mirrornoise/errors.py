"""Exception types shared across the package."""


class MirrorNoiseError(Exception):
    pass


class InvalidInputError(MirrorNoiseError, ValueError):
    """A parameter record or argument violates its invariants."""


class DomainError(InvalidInputError):
    """Evaluation outside the domain of a model equation."""


class ConvergenceError(MirrorNoiseError, ArithmeticError):
    pass


class NetlistError(MirrorNoiseError, ValueError):
    """Positioned netlist diagnostic raised by the parser."""

    def __init__(self, message: str, line: int = 0, col: int = 0, source: str = "<netlist>"):
        self.message = message
        self.line = line
        self.col = col
        self.source = source
        super().__init__(self.format())

    def format(self) -> str:
        return f"{self.source}:{self.line}:{self.col}: error: {self.message}"


class SingularMatrixError(MirrorNoiseError, ArithmeticError):
    def __init__(self, freq: float, pivot: int):
        self.freq = freq
        self.pivot = pivot
        super().__init__(f"singular MNA matrix at f={freq:g} Hz (pivot {pivot})")


class ZeroGainError(MirrorNoiseError, ArithmeticError):
    """Input referral requested through a zero transfer."""


class InfeasibleError(MirrorNoiseError):
    def __init__(self, binding: str, detail: str = ""):
        self.binding = binding
        msg = f"no feasible design point (binding constraint: {binding})"
        if detail:
            msg += f"; {detail}"
        super().__init__(msg)
