"""Exception hierarchy shared across the package."""

from __future__ import annotations


class EigenflowError(Exception):
    """Base class for all package errors."""


class ExprSyntaxError(SyntaxError, EigenflowError):
    """Malformed coefficient expression; ``offset`` is a byte offset into the source."""

    def __init__(self, message: str, source: str, offset: int):
        super().__init__(f"{message} at byte {offset}")
        self.msg = message
        self.text = source
        self.offset = offset


class UnknownIdentifier(EigenflowError, NameError):
    def __init__(self, name: str, offset: int | None = None):
        where = "" if offset is None else f" at byte {offset}"
        super().__init__(f"unknown identifier {name!r}{where}")
        self.name = name
        self.offset = offset


class SpecError(EigenflowError, ValueError):
    """Structurally invalid problem specification."""


class DegenerateDiffusion(SpecError):
    def __init__(self, point, min_eig: float):
        super().__init__(f"diffusion matrix not positive definite at x={list(point)} "
                         f"(min eigenvalue {min_eig:.6g})")
        self.point = point
        self.min_eig = min_eig


class UnboundedBelowPotential(SpecError):
    def __init__(self, point, value: float, floor: float):
        super().__init__(f"potential c={value:.6g} below floor {floor:.6g} at x={list(point)}")
        self.point = point
        self.value = value
        self.floor = floor


class TooCoarse(EigenflowError, ValueError):
    pass


class NonMonotoneStencil(EigenflowError, ValueError):
    def __init__(self, message: str, node=None):
        super().__init__(message)
        self.node = node


class NoConvergence(EigenflowError, RuntimeError):
    def __init__(self, message: str, last=None):
        super().__init__(message)
        self.last = last


class SingularShift(EigenflowError, RuntimeError):
    pass


class NonPositiveTestVector(EigenflowError, ValueError):
    pass


class NonPositiveTestFunction(NonPositiveTestVector):
    pass


class NotSupercritical(EigenflowError, ValueError):
    pass


class LinearSolveFailure(EigenflowError, RuntimeError):
    pass


class ExcessTruncation(EigenflowError, RuntimeError):
    def __init__(self, message: str, fraction: float):
        super().__init__(message)
        self.fraction = fraction


class CyclingDetected(RuntimeWarning):
    """Policy iteration revisited a policy; the best iterate is kept."""
