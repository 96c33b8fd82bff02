"""Fourier symbols of the two-phase transmission operators.

For a tangential frequency xi' and a resolvent parameter lam the basic
symbols are ``A_pm = sqrt(rho_pm * lam + |xi'|^2)`` (principal branch, cut on
the negative real axis) and the Lopatinskii denominator
``rho_plus * A_minus + rho_minus * A_plus``.  This module evaluates them,
checks their growth bounds with finite differences and verifies the two
exponential-kernel identities used to write interface traces.
"""

from __future__ import annotations

import cmath
import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy import integrate

from .errors import (
    ConfigError,
    DegenerateModeError,
    OutsideSectorError,
    QuadratureError,
    StencilUnderflowError,
)

__all__ = [
    "DensityPair",
    "ResolventParameter",
    "SymbolTable",
    "BoundReport",
    "ResidueResult",
    "sector_check",
    "eval_symbols",
    "verify_symbol_bounds",
    "residue_check",
    "residue_sample",
    "fd_weights",
]


@dataclass(frozen=True)
class DensityPair:
    rho_plus: float
    rho_minus: float

    def __post_init__(self) -> None:
        if not (self.rho_plus > 0 and self.rho_minus > 0):
            raise ConfigError(f"densities must be positive, got {self.rho_plus}, {self.rho_minus}")
        if not (math.isfinite(self.rho_plus) and math.isfinite(self.rho_minus)):
            raise ConfigError("densities must be finite")

    @property
    def total(self) -> float:
        return self.rho_plus + self.rho_minus

    def side(self, side: str) -> float:
        return self.rho_plus if side == "plus" else self.rho_minus

    def other(self, side: str) -> float:
        return self.rho_minus if side == "plus" else self.rho_plus


def sector_check(lam: complex, sigma: float, lambda0: float) -> bool:
    """True iff ``|arg lam| < pi - sigma`` and ``|lam| > lambda0``."""
    lam = complex(lam)
    if lam == 0:
        return False
    return abs(cmath.phase(lam)) < math.pi - sigma and abs(lam) > lambda0


@dataclass(frozen=True)
class ResolventParameter:
    """Complex resolvent parameter with the sector it is meant to live in."""

    lam: complex
    sigma: float = math.pi / 4
    lambda0: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "lam", complex(self.lam))
        if not (0.0 < self.sigma < math.pi / 2):
            raise ConfigError(f"sigma must lie in (0, pi/2), got {self.sigma}")
        if self.lambda0 < 0:
            raise ConfigError(f"lambda0 must be nonnegative, got {self.lambda0}")

    @property
    def in_sector(self) -> bool:
        return sector_check(self.lam, self.sigma, self.lambda0)

    def require_in_sector(self) -> complex:
        if not self.in_sector:
            raise OutsideSectorError(self.lam, self.sigma, self.lambda0)
        return self.lam


def _as_freq_array(freqs) -> np.ndarray:
    arr = np.asarray(freqs, dtype=float)
    if arr.ndim <= 1:
        # a flat list of scalars is a list of one-dimensional frequencies
        arr = arr.reshape(-1, 1)
    return arr


@dataclass(frozen=True)
class SymbolTable:
    freq_grid: np.ndarray
    xi_norm: np.ndarray
    a_plus: np.ndarray
    a_minus: np.ndarray
    denom: np.ndarray
    lam: complex
    rho: DensityPair
    degenerate: np.ndarray = field(repr=False)

    def a(self, side: str) -> np.ndarray:
        return self.a_plus if side == "plus" else self.a_minus


def _symbols(xi_norm: np.ndarray, lam: complex, rho: DensityPair):
    if lam == 0:
        a_plus = xi_norm.astype(complex)
        a_minus = xi_norm.astype(complex)
    else:
        a_plus = np.sqrt(rho.rho_plus * lam + xi_norm**2 + 0j)
        a_minus = np.sqrt(rho.rho_minus * lam + xi_norm**2 + 0j)
    denom = rho.rho_plus * a_minus + rho.rho_minus * a_plus
    return a_plus, a_minus, denom


def eval_symbols(freqs, lam: complex, rho: DensityPair, *, gauge_zero_mode: bool = False) -> SymbolTable:
    """Tabulate A_plus, A_minus and the denominator on a frequency grid.

    ``freqs`` has shape (..., N-1); a one-dimensional array is read as a list
    of scalar frequencies.  At ``lam == 0`` the symbols collapse exactly to
    |xi'|.  The mode (lam, xi') = (0, 0) is only allowed when the caller
    declares that it will gauge it; its entries are then set to zero.
    """
    lam = complex(lam)
    grid = _as_freq_array(freqs)
    xi_norm = np.sqrt(np.sum(grid**2, axis=-1))
    degenerate = (xi_norm == 0.0) & (lam == 0)
    if degenerate.any() and not gauge_zero_mode:
        raise DegenerateModeError("lam = 0 together with xi' = 0 and no gauge declared")
    a_plus, a_minus, denom = _symbols(xi_norm, lam, rho)
    for arr in (a_plus, a_minus, denom):
        arr.setflags(write=False)
    return SymbolTable(grid, xi_norm, a_plus, a_minus, denom, lam, rho, degenerate)


def fd_weights(offsets: Iterable[float], order: int) -> np.ndarray:
    """Finite-difference weights for the ``order``-th derivative at 0.

    Solves the moment (Vandermonde) system for the given stencil offsets,
    measured in units of the step size.
    """
    x = np.asarray(list(offsets), dtype=float)
    n = x.size
    if order >= n:
        raise ConfigError(f"need more than {order} points for derivative order {order}")
    vander = np.vander(x, n, increasing=True).T
    rhs = np.zeros(n)
    rhs[order] = math.factorial(order)
    return np.linalg.solve(vander, rhs)


def _central_offsets(order: int) -> np.ndarray:
    half = (order + 1) // 2 + 1
    return np.arange(-half, half + 1, dtype=float)


@dataclass
class BoundReport:
    """Observed ratios ``|d^alpha X^s| / (|lam|^(1/2) + |xi'|)^(s - |alpha|)``."""

    s: float
    max_order: int
    ratios: dict[str, dict[int, float]]
    richardson_discrepancy: float
    richardson_ok: bool

    def max_ratio(self, symbol: str, order: int | None = None) -> float:
        per = self.ratios[symbol]
        if order is None:
            return max(per.values())
        return per[order]


def verify_symbol_bounds(
    table: SymbolTable,
    s: float,
    max_order: int,
    *,
    step: float | None = None,
    richardson_tol: float = 1e-5,
) -> BoundReport:
    """Finite-difference check of the symbol growth bounds.

    Every mixed derivative of total order <= ``max_order`` of A_pm^s, of
    the denominator to the power s and of |xi'|^s is estimated with
    fourth-order central differences at steps h and h/2; the two estimates
    are combined by Richardson extrapolation and their spread is recorded.
    """
    if max_order < 0:
        raise ConfigError("max_order must be nonnegative")
    grid = table.freq_grid
    dim = grid.shape[-1]
    xi_norm = table.xi_norm
    if np.any(xi_norm == 0):
        raise ConfigError("symbol bounds are checked away from xi' = 0")
    lam, rho = table.lam, table.rho
    scale = abs(lam) ** 0.5 + xi_norm
    rel = 1e-2 if step is None else step
    h = rel * scale
    if max_order > 0:
        reach = (max_order + 1) // 2 + 1
        if np.any(reach * h >= 0.5 * xi_norm) or np.any(h < 1e-6 * scale):
            raise StencilUnderflowError(
                "stencil would reach the singular frequency or the step is below round-off"
            )

    def evaluate(points: np.ndarray) -> dict[str, np.ndarray]:
        norm = np.sqrt(np.sum(points**2, axis=-1))
        ap, am, den = _symbols(norm, lam, rho)
        return {
            "a_plus": ap**s,
            "a_minus": am**s,
            "denom": den**s,
            "xi_norm": norm.astype(complex) ** s,
        }

    def derivative(alpha: tuple[int, ...], step_size: np.ndarray) -> dict[str, np.ndarray]:
        per_axis = []
        for axis, k in enumerate(alpha):
            if k == 0:
                per_axis.append([(0.0, 1.0)])
            else:
                offs = _central_offsets(k)
                w = fd_weights(offs, k)
                per_axis.append(list(zip(offs, w)))
        total: dict[str, np.ndarray] = {}
        for combo in itertools.product(*per_axis):
            shift = np.array([o for o, _ in combo])
            weight = float(np.prod([wt for _, wt in combo]))
            if weight == 0.0:
                continue
            pts = grid + shift[None, :] * step_size[:, None]
            vals = evaluate(pts)
            for key, val in vals.items():
                total[key] = total.get(key, 0.0) + weight * val
        order = sum(alpha)
        return {key: val / step_size**order for key, val in total.items()}

    ratios: dict[str, dict[int, float]] = {k: {} for k in ("a_plus", "a_minus", "denom", "xi_norm")}
    worst = 0.0
    for order in range(max_order + 1):
        for alpha in itertools.product(range(order + 1), repeat=dim):
            if sum(alpha) != order:
                continue
            if order == 0:
                vals = evaluate(grid)
            else:
                coarse = derivative(alpha, h)
                fine = derivative(alpha, h / 2)
                vals = {}
                for key in coarse:
                    extrap = fine[key] + (fine[key] - coarse[key]) / 15.0
                    spread = np.abs(fine[key] - coarse[key]) / (np.abs(extrap) + scale ** (s - order))
                    worst = max(worst, float(np.max(spread)))
                    vals[key] = extrap
            for key, val in vals.items():
                ratio = float(np.max(np.abs(val) / scale ** (s - order)))
                ratios[key][order] = max(ratios[key].get(order, 0.0), ratio)
    return BoundReport(s, max_order, ratios, worst, worst <= richardson_tol)


@dataclass(frozen=True)
class ResidueResult:
    numeric: complex
    closed: complex
    err: float


def _oscillatory_integral(func, a: float, upper: float, tol: float) -> tuple[complex, float]:
    # the caller turns a large error estimate into QuadratureError
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        re, err_re = integrate.quad(
            lambda t: func(t).real, 0.0, upper, weight="sin", wvar=a, limit=4000, epsabs=tol * 1e-3, epsrel=0.0
        )
        im, err_im = integrate.quad(
            lambda t: func(t).imag, 0.0, upper, weight="sin", wvar=a, limit=4000, epsabs=tol * 1e-3, epsrel=0.0
        )
    return complex(re, im), err_re + err_im


def residue_check(
    xi_norm: float,
    a: float,
    eps: float,
    lam: complex,
    rho: float,
    *,
    identity: int = 1,
    tol: float = 1e-8,
) -> ResidueResult:
    """Compare a mollified inverse Fourier integral in xi_N with its closed form.

    identity 1: (1/2pi) int e^{-eps|xi|^2} i xi_N e^{i a xi_N} / (rho lam + |xi|^2) d xi_N
                against -(sign a / 2) e^{eps rho lam} e^{-A |a|}.
    identity 2: the same with the kernel 1/|xi|^2, against -(sign a / 2) e^{-|xi'| |a|}.

    The integrand is even in xi_N apart from the factor i xi_N e^{i a xi_N}, so
    only the sine part survives and the half-line integral is done with an
    oscillatory-weight adaptive rule.  The closed forms neglect a Gaussian
    boundary-layer term of size about erfc(|a| / (2 sqrt(eps))), so they are
    sharp only when |a| is several times sqrt(eps).
    """
    if eps <= 0:
        raise ConfigError("eps must be positive")
    lam = complex(lam)
    xi2 = float(xi_norm) ** 2
    if identity == 1:
        if lam.imag == 0 and lam.real <= 0:
            raise ConfigError("lam must avoid the cut (-inf, 0] for the first identity")
        shift = rho * lam + xi2
        big_a = cmath.sqrt(shift)
        closed = -0.5 * np.sign(a) * cmath.exp(eps * rho * lam) * cmath.exp(-big_a * abs(a))
    elif identity == 2:
        if xi_norm == 0:
            raise DegenerateModeError("second identity needs xi' != 0")
        shift = complex(xi2)
        closed = -0.5 * np.sign(a) * math.exp(-abs(xi_norm) * abs(a))
    else:
        raise ConfigError("identity must be 1 or 2")
    if a == 0:
        return ResidueResult(0j, complex(closed), abs(closed))

    def integrand(t: float) -> complex:
        return t * math.exp(-eps * (xi2 + t * t)) / (shift + t * t)

    upper = math.sqrt(80.0 / eps)
    value, est = _oscillatory_integral(integrand, abs(a), upper, tol)
    if not est < tol:
        raise QuadratureError(f"error estimate {est:.2e} exceeds {tol:.1e}")
    numeric = -np.sign(a) * value / math.pi
    return ResidueResult(complex(numeric), complex(closed), abs(numeric - closed))


RESIDUE_OFFSETS = (0.5, 1.0, 2.0)
RESIDUE_EPS = (5e-4, 1e-3, 2e-3)
RESIDUE_LAMBDAS = (1.0, 10.0, 5.0 * cmath.exp(2.0j))
RESIDUE_XI = (0.5, 1.0, 2.0)


def residue_sample(rho: float = 1.0, tol: float = 1e-8) -> dict[str, float]:
    """Worst absolute error of both identities over a 3 x 3 x 3 sample.

    The first identity runs over (a, eps, lam) at |xi'| = 1, the second over
    (a, eps, |xi'|).  Every sample keeps |a| >= 5 sqrt(eps), where the
    neglected boundary layer is far below ``tol``.
    """
    worst = {"residue1_max_abs_err": 0.0, "residue2_max_abs_err": 0.0}
    for a, eps in itertools.product(RESIDUE_OFFSETS, RESIDUE_EPS):
        for lam in RESIDUE_LAMBDAS:
            res = residue_check(1.0, a, eps, lam, rho, identity=1, tol=tol)
            worst["residue1_max_abs_err"] = max(worst["residue1_max_abs_err"], res.err)
        for xi in RESIDUE_XI:
            res = residue_check(xi, a, eps, 0.0, rho, identity=2, tol=tol)
            worst["residue2_max_abs_err"] = max(worst["residue2_max_abs_err"], res.err)
    return worst
