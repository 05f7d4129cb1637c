"""Exception types raised by the numerical guards."""


class SclabError(Exception):
    """Base class for all package errors."""


class ZeroNorm(SclabError, ValueError):
    pass


class OutOfBox(SclabError, ValueError):
    """A state or test function does not fit inside the computational box."""


class NyquistViolation(SclabError, RuntimeError):
    """Spectral mass too close to the edge of the momentum grid."""


class TailOverflow(SclabError, RuntimeError):
    """Too much probability mass near the periodic boundary."""


class OnSingularSet(SclabError, ValueError):
    pass


class SupportViolation(SclabError, ValueError):
    """A test function touches the tube around the singular set."""


class BoundViolation(SclabError, ArithmeticError):
    """An a-priori bound was exceeded; this signals a quadrature failure."""


class NonSeparable(SclabError, TypeError):
    pass


class NotNormalized(SclabError, ValueError):
    pass


class ConfigError(SclabError, ValueError):
    """Invalid experiment configuration. ``line`` anchors the message in the file."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        loc = ""
        if path is not None:
            loc = f"{path}:{line or 1}: "
        elif line is not None:
            loc = f"line {line}: "
        super().__init__(loc + message)
