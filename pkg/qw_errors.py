import logging
from typing import Any, Dict, Optional

from pydantic import ValidationError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3


class PercolationError(Exception):
    """Base class for every error raised by the simulation stack."""

    exit_code = EXIT_NUMERICAL


class InvalidArgumentError(PercolationError, ValueError):
    exit_code = EXIT_USAGE


class UsageError(PercolationError):
    exit_code = EXIT_USAGE


class CapacityError(PercolationError):
    """Raised when exact enumeration would exceed the realization limit."""

    exit_code = EXIT_USAGE

    def __init__(self, edge_count: int, limit: int):
        self.edge_count = edge_count
        self.limit = limit
        super().__init__(
            f"graph has {edge_count} edges, exact enumeration is limited to {limit} "
            f"(2^{edge_count} realizations); use the monte_carlo backend instead"
        )


class NumericalFailure(PercolationError, ArithmeticError):
    exit_code = EXIT_NUMERICAL

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.diagnostics = dict(diagnostics or {})
        if self.diagnostics:
            details = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
            message = f"{message} ({details})"
        super().__init__(message)


class OutputError(PercolationError, OSError):
    exit_code = EXIT_IO

    def __init__(self, path: str, reason: str):
        self.path = path
        super().__init__(f"cannot write {path}: {reason}")


class ErrorRecovery:
    """Translates exceptions reaching the CLI boundary into exit codes."""

    def __init__(self):
        self.logger = logging.getLogger("error_recovery")

    def exit_code_for(self, error: BaseException) -> int:
        if isinstance(error, PercolationError):
            return error.exit_code
        if isinstance(error, ValidationError):
            return EXIT_USAGE
        if isinstance(error, OSError):
            return EXIT_IO
        return EXIT_NUMERICAL

    def handle(self, error: BaseException) -> int:
        code = self.exit_code_for(error)
        if code == EXIT_USAGE:
            self.logger.error(f"Invalid request: {error}")
        elif code == EXIT_IO:
            self.logger.error(f"I/O error: {error}")
        else:
            diagnostics = getattr(error, "diagnostics", None)
            self.logger.error(f"Numerical failure: {error}")
            if diagnostics:
                self.logger.debug(f"Failure diagnostics: {diagnostics}")
        return code


def exit_code_for(error: BaseException) -> int:
    return ErrorRecovery().exit_code_for(error)
