"""Exception hierarchy shared by the solvers and the CLI.

The CLI maps each family to an exit code: configuration problems exit 1,
invariant failures exit 2 and numerical solver failures exit 3.
"""

from __future__ import annotations


class TwoPhaseError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 3


class ConfigError(TwoPhaseError, ValueError):
    """Invalid parameters or inconsistent inputs (exit code 1)."""

    exit_code = 1


class InvariantError(TwoPhaseError):
    """A checked invariant of a computed object failed (exit code 2)."""

    exit_code = 2


class SolverError(TwoPhaseError, RuntimeError):
    """A numerical procedure did not converge or broke down (exit code 3)."""

    exit_code = 3


class OutsideSectorError(ConfigError):
    def __init__(self, lam: complex, sigma: float, lambda0: float) -> None:
        super().__init__(
            f"outside sector: lambda={lam!r} not in |arg z| < pi - {sigma:.6g}, |z| > {lambda0:.6g}"
        )


class DegenerateModeError(ConfigError):
    def __init__(self, detail: str = "") -> None:
        msg = "degenerate mode"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class StencilUnderflowError(ConfigError):
    def __init__(self, detail: str = "") -> None:
        msg = "stencil underflow"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class QuadratureError(SolverError):
    def __init__(self, detail: str = "") -> None:
        msg = "quadrature not converged"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class IncompatibleZeroModeError(ConfigError):
    def __init__(self, value: complex) -> None:
        super().__init__(f"incompatible zero mode: g2 zero mode = {value!r}")


class MapBoundError(ConfigError):
    """Raised for "M1 exceeded" and "M1 too large"."""


class NotContractingError(SolverError):
    def __init__(self, detail: str = "") -> None:
        msg = "not contracting"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class MeanZeroViolation(InvariantError):
    def __init__(self, value: float, bound: float) -> None:
        super().__init__(f"mean-zero violated: |integral| = {value:.3e} > {bound:.3e}")
