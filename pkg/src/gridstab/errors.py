"""Exception hierarchy for gridstab.

Every error raised by the library derives from :class:`GridstabError`, so the
CLI can map failures onto exit codes without catching unrelated exceptions.
"""

from __future__ import annotations


class GridstabError(Exception):
    """Base class for all library errors."""


# --- network topology -------------------------------------------------------

class NetworkError(GridstabError, ValueError):
    pass


class NotConnected(NetworkError):
    pass


class NotRadial(NetworkError):
    pass


class NoSubstation(NetworkError):
    pass


class UnknownBus(NetworkError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return Exception.__str__(self)


class SingularMatrix(NetworkError):
    pass


# --- case file parsing ------------------------------------------------------

class ParseError(GridstabError, ValueError):
    """A case file could not be turned into a network.

    ``line`` is the 1-based line number the problem was detected on.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CaseSyntaxError(ParseError):
    pass


class MissingSection(ParseError):
    pass


class MultipleSlackBuses(ParseError):
    pass


class NoSlackBus(ParseError):
    pass


class NonRadialCase(ParseError):
    pass


# --- numerics ---------------------------------------------------------------

class NumericalError(GridstabError, ArithmeticError):
    pass


class NegativeSquaredVoltage(NumericalError):
    pass


class NonConvergence(NumericalError):
    pass


# --- inverter / stability ---------------------------------------------------

class MuSaturated(GridstabError, ValueError):
    pass


class InsufficientHistory(GridstabError, ValueError):
    pass


class CannotStabilize(GridstabError):
    """Widening ran out of iterations; ``adjustment`` holds the last attempt."""

    def __init__(self, message: str, adjustment=None):
        super().__init__(message)
        self.adjustment = adjustment


# --- scenarios and profiles -------------------------------------------------

class ScenarioError(GridstabError, ValueError):
    pass


class UnknownParameter(ScenarioError):
    pass


class NotAnInverterBus(ScenarioError):
    pass


class ProfileError(GridstabError, ValueError):
    pass


class DegenerateKnots(ProfileError):
    pass


class OutOfRange(ProfileError):
    pass
