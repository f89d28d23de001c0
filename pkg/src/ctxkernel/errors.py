"""Exception hierarchy shared across the package.

Every error carries an ``exit_code`` used by the CLI: 1 for usage problems,
2 for data/format problems, 3 for numerical failures.
"""

from __future__ import annotations


class CtxKernelError(Exception):
    """Base class for all package errors."""

    exit_code = 2


class UsageError(CtxKernelError):
    exit_code = 1


class ConfigError(UsageError):
    pass


class MissingFile(CtxKernelError):
    pass


class DimensionMismatch(CtxKernelError):
    pass


class LabelArity(CtxKernelError):
    pass


class BadValue(CtxKernelError):
    pass


class ShapeMismatch(CtxKernelError):
    pass


class StateMismatch(CtxKernelError):
    pass


class NegativeInput(CtxKernelError):
    pass


class OutOfRange(CtxKernelError):
    pass


class CheckpointMismatch(CtxKernelError):
    pass


class SingleClass(CtxKernelError):
    exit_code = 3


class NonFinite(CtxKernelError):
    exit_code = 3


class NoPositives(CtxKernelError):
    exit_code = 3


class DivergenceDetected(CtxKernelError):
    exit_code = 3
