from __future__ import annotations


class CedsError(Exception):
    """Base class for every error raised by the model checker."""


# bvlogic


class SortError(CedsError, ValueError):
    pass


class UnassignedVariable(CedsError, KeyError):
    def __init__(self, var: object):
        super().__init__(var)
        self.var = var

    def __str__(self) -> str:
        return f"no value assigned to {self.var}"


# progmodel


class ProgramError(CedsError, ValueError):
    def __init__(self, message: str, *, line: int = 0, column: int = 0):
        super().__init__(message)
        self.message = message
        self.line = line
        self.column = column

    def __str__(self) -> str:
        if self.line:
            return f"{self.line}:{self.column}: {self.message}"
        return self.message


class ProgramSyntaxError(ProgramError):
    pass


class UndeclaredVariable(ProgramError):
    pass


class WidthMismatch(ProgramError):
    pass


class RecursionRejected(ProgramError):
    pass


# multistate / eqcheck


class ShapeMismatch(CedsError, ValueError):
    pass


class NotMatched(CedsError, ValueError):
    pass


# solverbridge / pipeline


class BackendError(CedsError, RuntimeError):
    def __init__(self, message: str, *, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class SpawnFailure(BackendError):
    pass


class DomainTooLarge(CedsError, ValueError):
    def __init__(self, bits: int, cap: int):
        super().__init__(f"enumeration needs {bits} bits, cap is {cap}")
        self.bits = bits
        self.cap = cap


class SolverFailure(CedsError, RuntimeError):
    pass


# cli


class ReportError(CedsError, RuntimeError):
    pass
