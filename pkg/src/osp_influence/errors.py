from dataclasses import dataclass


@dataclass(frozen=True)
class Violation:
    """One broken graph invariant, tied to the external id of the user."""

    user: str
    kind: str
    detail: str = ""

    def __str__(self) -> str:
        text = f"user {self.user!r}: {self.kind}"
        return f"{text} ({self.detail})" if self.detail else text


class OSPError(Exception):
    pass


class GraphValidationError(OSPError, ValueError):
    def __init__(self, violations: list[Violation]) -> None:
        self.violations = list(violations)
        message = "; ".join(str(v) for v in self.violations) or "invalid graph"
        super().__init__(message)


class SchemaError(GraphValidationError):
    """Graph file does not follow the expected JSON layout."""

    def __init__(self, message: str) -> None:
        self.violations = []
        Exception.__init__(self, message)


class ExistenceError(OSPError):
    def __init__(self, message: str, rho_estimate: float) -> None:
        self.rho_estimate = rho_estimate
        super().__init__(f"{message} (rho(A) estimate {rho_estimate:.12g})")


class ConvergenceError(OSPError, RuntimeError):
    def __init__(self, iterations: int, residual: float) -> None:
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"Fixed point iteration did not converge after {iterations} iterations, "
            f"last residual {residual:.1e}"
        )


class ConfigError(OSPError, ValueError):
    pass
