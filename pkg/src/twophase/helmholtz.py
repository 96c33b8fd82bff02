"""Weak two-phase elliptic problem and the Helmholtz-Weyl splitting for a flat interface.

The weak problem (rho^-1 grad u, grad phi) = (f, grad phi) is solved through
the strong lam = 0 flat problem: with v the strong solution for data (f, f),
u = rho_pm v_pm is continuous across the interface.  The splitting is then
f = Pf + Qf with Qf = rho^-1 grad u = grad v.

Weak identities are checked against test gradients of
``exp(i k.x') * hat_j(x_N)``, where ``hat_j`` runs over the piecewise-linear
hat functions of the full normal line (the one centred on the interface
spans both phases).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .fields import TwoPhaseGrid, TwoPhaseScalarField, TwoPhaseVectorField, l2_norm
from .halfspace_solver import DEFAULT_ORDER, _lagrange_matrix, solve_flat
from .spectral_core import DensityPair

__all__ = [
    "WeakSolution",
    "solve_weak",
    "decompose",
    "TestGradientBasis",
    "random_band_limited",
]

_GAUSS_NODES = 8


@dataclass
class WeakSolution:
    u: TwoPhaseScalarField
    grad_u: TwoPhaseVectorField


def solve_weak(
    f: TwoPhaseVectorField,
    rho: DensityPair,
    *,
    order: int = DEFAULT_ORDER,
    return_gradient: bool = False,
):
    """Weak solution u, gauged to zero mean on the interface plane."""
    sol = solve_flat(f, None, None, 0.0, rho, order=order, return_solution=True)
    u = sol.v.scaled(rho.rho_plus, rho.rho_minus)
    if not return_gradient:
        return u
    return WeakSolution(u, sol.gradient.scaled(rho.rho_plus, rho.rho_minus))


def decompose(
    f: TwoPhaseVectorField, rho: DensityPair, *, order: int = DEFAULT_ORDER
) -> tuple[TwoPhaseVectorField, TwoPhaseVectorField]:
    """Split f into a weakly solenoidal part and a part rho^-1 grad u."""
    sol = solve_flat(f, None, None, 0.0, rho, order=order, return_solution=True)
    q_part = sol.gradient
    return f - q_part, q_part


class TestGradientBasis:
    """Pairings (p, grad phi) against every test gradient of the Fourier x hat basis.

    Integrals in x_N use a degree-``order`` interpolant of the data built
    separately in each phase, integrated exactly against the linear pieces
    of the hats.  Tangential integrals are exact for grid modes.
    """

    __test__ = False

    def __init__(self, grid: TwoPhaseGrid, order: int = DEFAULT_ORDER) -> None:
        if grid.normal_points < order + 1:
            raise ConfigError("normal grid too small for the interpolation order")
        self.grid = grid
        self.order = order
        m = grid.normal_points
        h = grid.normal_spacing
        npts = order + 1
        panels = np.arange(m - 1)
        self.starts = np.clip(panels - (npts // 2 - 1), 0, m - npts)
        gx, gw = np.polynomial.legendre.leggauss(_GAUSS_NODES)
        t = 0.5 * h * (gx + 1.0)
        w = 0.5 * h * gw
        self.weights = {}
        for off in np.unique(self.starts - panels):
            lag = _lagrange_matrix((off + np.arange(npts)) * h, t)
            self.weights[int(off)] = (
                (w * (1.0 - t / h)) @ lag,
                (w * (t / h)) @ lag,
            )
        self.offsets = self.starts - panels
        # hats live on the full line: node index i = 0 .. 2m-2, interface at m-1,
        # outermost nodes excluded so every test function vanishes at the box edge
        self.n_hats = 2 * m - 3

    def _panel_moments(self, data: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per panel [y_k, y_k+1]: integrals of data*(1 - t/h) and data*(t/h)."""
        npts = self.order + 1
        out_a = np.zeros(data.shape[:-1] + (data.shape[-1] - 1,), complex)
        out_b = np.zeros_like(out_a)
        for off, (wa, wb) in self.weights.items():
            sel = np.nonzero(self.offsets == off)[0]
            idx = self.starts[sel][:, None] + np.arange(npts)[None, :]
            gathered = data[..., idx]
            out_a[..., sel] = gathered @ wa
            out_b[..., sel] = gathered @ wb
        return out_a, out_b

    def _side_loads(self, p_hat: np.ndarray, side: str) -> np.ndarray:
        """Hat loads on one phase; returns array (..., 2m-1) on the full node line."""
        grid = self.grid
        m = grid.normal_points
        h = grid.normal_spacing
        ntan = grid.ntan
        xi = grid.wavenumbers
        val = np.zeros(grid.side_shape, complex)
        for j in range(ntan):
            val += -1j * xi[j][..., None] * p_hat[j]
        pn = p_hat[-1]
        if side == "minus":
            # ascending x_N order, from -L up to the interface
            val = val[..., ::-1]
            pn = pn[..., ::-1]
        va, vb = self._panel_moments(val)
        na, nb = self._panel_moments(pn)
        full = np.zeros(grid.tangential_shape + (2 * m - 1,), complex)
        base = 0 if side == "minus" else m - 1
        # panel k joins full-line nodes base+k and base+k+1
        total = na + nb
        full[..., base : base + m - 1] += va - total / h
        full[..., base + 1 : base + m] += vb + total / h
        return full

    def pairings(self, p: TwoPhaseVectorField) -> np.ndarray:
        """Array (tangential modes..., hats) of (p, grad phi) with conjugation on phi."""
        grid = self.grid
        cell = grid.tangential_spacing**grid.ntan
        axes = tuple(range(1, 1 + grid.ntan))
        loads = 0
        for side in ("plus", "minus"):
            p_hat = np.fft.fftn(p.side(side), axes=axes) * cell
            loads = loads + self._side_loads(p_hat, side)
        return loads[..., 1:-1]

    def norms(self) -> np.ndarray:
        """L2 norms of the test gradients, same layout as :meth:`pairings`."""
        grid = self.grid
        h = grid.normal_spacing
        volume = grid.tangential_period**grid.ntan
        k2 = grid.xi_norm[..., None] ** 2
        sq = volume * (k2 * (2.0 * h / 3.0) + 2.0 / h)
        return np.sqrt(np.broadcast_to(sq, grid.tangential_shape + (self.n_hats,)))

    def max_relative(self, p: TwoPhaseVectorField, scale: float) -> float:
        """max |(p, grad phi)| / (scale * ||grad phi||) over the basis."""
        if scale == 0.0:
            scale = 1.0
        return float(np.max(np.abs(self.pairings(p)) / (scale * self.norms())))


def random_band_limited(
    grid: TwoPhaseGrid, rng: np.random.Generator, *, max_mode: int = 4, profiles: int = 3
) -> TwoPhaseVectorField:
    """Random vector field with tangential modes |k| <= max_mode and Gaussian-decaying normal profiles.

    Each phase and component gets its own coefficients, so the field jumps across the interface.
    """
    mask = np.ones(grid.tangential_shape, bool)
    for kj in grid.wavenumbers:
        kk = np.rint(kj * grid.tangential_period / (2.0 * np.pi)).astype(int)
        mask &= np.abs(kk) <= max_mode
    y = grid.y
    width = 1.0
    basis = np.stack([(y / width) ** n * np.exp(-((y / width) ** 2)) for n in range(profiles)])
    out = []
    axes = tuple(range(grid.ntan))
    for _side in ("plus", "minus"):
        comps = []
        for _ in range(grid.dim):
            coef = rng.standard_normal(grid.tangential_shape + (profiles,)) + 1j * rng.standard_normal(
                grid.tangential_shape + (profiles,)
            )
            coef *= mask[..., None]
            spec = coef @ basis
            comps.append(np.fft.ifftn(spec, axes=axes) * np.sqrt(mask.size))
        out.append(np.stack(comps))
    return TwoPhaseVectorField(grid, out[0], out[1])
