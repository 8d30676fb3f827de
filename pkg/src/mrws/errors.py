"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class MRWSError(Exception):
    """Base class for every error raised by this package."""


class IsolatedState(MRWSError):
    def __init__(self, state):
        super().__init__(f"state {state!r} has zero total weight")
        self.state = state


class AsymmetricWeights(MRWSError):
    pass


class NotStochastic(MRWSError):
    def __init__(self, message, row=None, row_sum=None):
        super().__init__(message)
        self.row = row
        self.row_sum = row_sum


class NoStationaryMeasure(MRWSError):
    pass


class MissingMetric(MRWSError):
    pass


class EmptyAnnulus(MRWSError):
    def __init__(self, state):
        super().__init__(f"annulus around state {state!r} carries no mass")
        self.state = state


class EmptyDomain(MRWSError):
    pass


class NotReversible(MRWSError):
    pass


class ProblemTooLarge(MRWSError):
    pass


class BoundaryMismatch(MRWSError):
    def __init__(self, missing, extra):
        super().__init__(f"boundary data mismatch: missing={sorted(map(str, missing))} "
                         f"extra={sorted(map(str, extra))}")
        self.missing = list(missing)
        self.extra = list(extra)


class EmptyBoundary(MRWSError):
    pass


class NonNestedCuts(MRWSError):
    pass


class InvalidExponent(MRWSError, ValueError):
    pass


class NoConvergence(MRWSError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []


class SupportMismatch(MRWSError):
    pass


class MedianViolated(MRWSError):
    pass


class ZeroDenominator(MRWSError):
    pass


class Unbounded(MRWSError):
    def __init__(self, states):
        super().__init__(f"states unreachable from the m-boundary: {list(states)}")
        self.states = list(states)


class ZeroAlpha(MRWSError):
    def __init__(self, shell):
        super().__init__(f"shell {shell} receives no mass from the previous shell")
        self.shell = shell


class WitnessExceedsTruncation(MRWSError):
    pass


class ParseError(MRWSError):
    def __init__(self, message, line=None, column=None):
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + where)
        self.line = line
        self.column = column


class SchemaVersionUnsupported(MRWSError):
    pass


class ValidationFailed(MRWSError):
    def __init__(self, message, certificate=None, cause=None):
        super().__init__(message)
        self.certificate = certificate
        self.cause = cause
