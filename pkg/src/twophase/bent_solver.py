"""Bent-interface transmission problems reduced to the flat solver by a change of variables.

A map y = Phi(x) = A x + amplitude * p(x) sends the flat configuration onto
the bent one.  Data are pulled back, the perturbation terms produced by the
variable coefficients are moved to the right-hand side, and the flat
problem is solved repeatedly until the iterates stop changing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, MapBoundError, NotContractingError, OutsideSectorError, SolverError
from .fields import (
    TwoPhaseGrid,
    TwoPhaseScalarField,
    TwoPhaseVectorField,
    differentiate,
    l2_norm,
)
from .halfspace_solver import DEFAULT_ORDER, solve_flat
from .spectral_core import DensityPair, ResolventParameter

__all__ = [
    "Diffeomorphism",
    "MapSamples",
    "build_map",
    "transform_data",
    "perturbation_terms",
    "BentSolution",
    "solve_bent",
    "PROFILES",
    "manufactured_bent",
]

M1_ADMISSIBLE = 0.5
M1_CONTRACTION = 0.25
NEWTON_TOL = 1e-12


def _shear(period: float):
    k = 2.0 * math.pi / period

    def value(x: Sequence[np.ndarray]) -> list[np.ndarray]:
        out = [np.zeros_like(x[0]) for _ in x]
        out[-1] = np.sin(k * x[0])
        return out

    def grad(x: Sequence[np.ndarray]) -> np.ndarray:
        n = len(x)
        out = np.zeros((n, n) + np.shape(x[0]))
        out[-1, 0] = k * np.cos(k * x[0])
        return out

    return value, grad


def _wave(period: float):
    """Shear whose strength fades away from the interface."""
    k = 2.0 * math.pi / period

    def value(x):
        out = [np.zeros_like(x[0]) for _ in x]
        out[-1] = np.sin(k * x[0]) * np.exp(-x[-1] ** 2)
        return out

    def grad(x):
        n = len(x)
        out = np.zeros((n, n) + np.shape(x[0]))
        env = np.exp(-x[-1] ** 2)
        out[-1, 0] = k * np.cos(k * x[0]) * env
        out[-1, -1] = -2.0 * x[-1] * np.sin(k * x[0]) * env
        return out

    return value, grad


PROFILES: dict[str, Callable] = {"shear": _shear, "wave": _wave}


@dataclass
class MapSamples:
    """Geometric coefficients of a map sampled on one side of a flat grid.

    Matrix fields have shape (N, N, *side_shape); ``bend_inv`` is B_-1 so that
    A_-1 + B_-1 is the inverse Jacobian matrix at Phi(x).
    """

    points: np.ndarray
    bend: np.ndarray
    bend_inv: np.ndarray
    jacobian: np.ndarray
    normal_factor: np.ndarray
    normal: np.ndarray
    c_inv: np.ndarray


@dataclass
class Diffeomorphism:
    """Phi(x) = A x + amplitude * p(x) with analytic Jacobian A + B(x)."""

    dim: int
    rotation: np.ndarray
    amplitude: float
    profile: Callable[[Sequence[np.ndarray]], list[np.ndarray]]
    profile_grad: Callable[[Sequence[np.ndarray]], np.ndarray]
    name: str = "custom"
    samples: dict[str, MapSamples] = field(default_factory=dict)
    m1: float = 0.0
    m2: float = 0.0
    c3: float = 1.0
    c4: float = 1.0
    composition_error: float = 0.0
    inverse_error: float = 0.0

    @property
    def inverse_rotation(self) -> np.ndarray:
        return self.rotation.T

    @property
    def is_identity(self) -> bool:
        return self.amplitude == 0.0 and np.array_equal(self.rotation, np.eye(self.dim))

    def forward(self, x: Sequence[np.ndarray]) -> np.ndarray:
        x = [np.asarray(c, dtype=float) for c in x]
        p = self.profile(x)
        return np.stack(
            [sum(self.rotation[i, j] * x[j] for j in range(self.dim)) + self.amplitude * p[i] for i in range(self.dim)]
        )

    def bend(self, x: Sequence[np.ndarray]) -> np.ndarray:
        return self.amplitude * self.profile_grad([np.asarray(c, dtype=float) for c in x])

    def jacobian_matrix(self, x: Sequence[np.ndarray]) -> np.ndarray:
        b = self.bend(x)
        return self.rotation.reshape(self.rotation.shape + (1,) * (b.ndim - 2)) + b

    def inverse(self, y: np.ndarray, *, tol: float = NEWTON_TOL, max_iter: int = 50) -> np.ndarray:
        """Newton solve of Phi(x) = y, pointwise; ``y`` has shape (N, ...)."""
        y = np.asarray(y, dtype=float)
        x = np.einsum("ij,j...->i...", self.inverse_rotation, y)
        for _ in range(max_iter):
            r = self.forward(list(x)) - y
            if np.max(np.abs(r)) <= tol:
                return x
            jac = self.jacobian_matrix(list(x))
            jac_t = np.moveaxis(jac, (0, 1), (-2, -1))
            step = np.linalg.solve(jac_t, np.moveaxis(r, 0, -1)[..., None])[..., 0]
            x = x - np.moveaxis(step, -1, 0)
        r = self.forward(list(x)) - y
        if np.max(np.abs(r)) > tol:
            raise SolverError(f"inverse not converged: residual {np.max(np.abs(r)):.3e}")
        return x

    def sample(self, grid: TwoPhaseGrid) -> None:
        """Fill per-side coefficient samples and the recorded bounds."""
        n = self.dim
        if grid.dim != n:
            raise ConfigError("map and grid dimensions differ")
        n0 = np.zeros(n)
        n0[-1] = -1.0
        a_inv = self.inverse_rotation
        m1 = 0.0
        comp = 0.0
        inv_err = 0.0
        jmin, jmax = np.inf, 0.0
        for side in ("plus", "minus"):
            x = grid.coordinates(side)
            y = self.forward(x)
            x_back = self.inverse(y)
            inv_err = max(inv_err, float(np.max(np.abs(x_back - np.stack(x)))))
            jac = self.jacobian_matrix(list(x_back))
            jac_t = np.moveaxis(jac, (0, 1), (-2, -1))
            inv_t = np.linalg.inv(jac_t)
            inv = np.moveaxis(inv_t, (-2, -1), (0, 1))
            a_inv_b = a_inv.reshape((n, n) + (1,) * grid.dim)
            b_inv = inv - a_inv_b
            bend = jac - self.rotation.reshape((n, n) + (1,) * grid.dim)
            prod = np.einsum("ij...,jk...->ik...", jac, inv)
            comp = max(comp, float(np.max(np.abs(prod - np.eye(n).reshape((n, n) + (1,) * grid.dim)))))
            m1 = max(m1, _max_opnorm(bend), _max_opnorm(b_inv))
            jdet = np.linalg.det(jac_t)
            tvec = np.einsum("ji...,j->i...", inv, n0)
            d = np.sqrt(np.sum(tvec**2, axis=0))
            c_inv = np.einsum("ij...,kj...->ik...", inv, inv) - np.eye(n).reshape((n, n) + (1,) * grid.dim)
            self.samples[side] = MapSamples(y, bend, b_inv, jdet, d, tvec / d, c_inv)
            jmin = min(jmin, float(np.min(jdet)), float(np.min(d)))
            jmax = max(jmax, float(np.max(jdet)), float(np.max(d)))
        self.m1 = m1
        self.composition_error = comp
        self.inverse_error = inv_err
        self.c3, self.c4 = jmin, jmax
        self.m2 = _gradient_bound(self, grid)
        if jmin <= 0.0:
            raise ConfigError("map is not orientation preserving on the grid")


def _max_opnorm(mats: np.ndarray) -> float:
    moved = np.moveaxis(mats, (0, 1), (-2, -1)).reshape(-1, mats.shape[0], mats.shape[1])
    return float(np.max(np.linalg.norm(moved, ord=2, axis=(-2, -1)))) if moved.size else 0.0


def _gradient_bound(phi: Diffeomorphism, grid: TwoPhaseGrid, r: float | None = None) -> float:
    """L_r norm of grad B (r = 2N by default), from the field stencils; recorded only."""
    r = r or 2.0 * grid.dim
    totals = {"plus": np.zeros(grid.side_shape), "minus": np.zeros(grid.side_shape)}
    n = grid.dim
    for i in range(n):
        for j in range(n):
            entry = TwoPhaseScalarField(grid, phi.samples["plus"].bend[i, j], phi.samples["minus"].bend[i, j])
            for k in range(n):
                dk = differentiate(entry, k)
                for side in totals:
                    totals[side] = totals[side] + np.abs(dk.side(side)) ** 2
    cell = grid.tangential_spacing**grid.ntan
    acc = 0.0
    for side in totals:
        acc += float(np.sum((totals[side] ** (r / 2.0)) * grid.trapezoid_weights) * cell)
    return acc ** (1.0 / r)


def build_map(
    profile: str | tuple[Callable, Callable] = "shear",
    amplitude: float = 0.1,
    rotation: np.ndarray | None = None,
    *,
    grid: TwoPhaseGrid,
) -> Diffeomorphism:
    """Construct and validate Phi on ``grid``; raises "M1 exceeded" when max(|B|, |B_-1|) > 1/2."""
    n = grid.dim
    rot = np.eye(n) if rotation is None else np.asarray(rotation, dtype=float)
    if rot.shape != (n, n) or not np.allclose(rot @ rot.T, np.eye(n), atol=1e-12) or np.linalg.det(rot) < 0:
        raise ConfigError("rotation must be orthonormal with determinant 1")
    if isinstance(profile, str):
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
        value, grad = PROFILES[profile](grid.tangential_period)
        name = profile
    else:
        value, grad = profile
        name = "custom"
    phi = Diffeomorphism(n, rot, float(amplitude), value, grad, name)
    bend_sup = max(_max_opnorm(phi.bend(grid.coordinates(s))) for s in ("plus", "minus"))
    if bend_sup > M1_ADMISSIBLE:
        raise MapBoundError(f"M1 exceeded: sup |B| = {bend_sup:.4g} > {M1_ADMISSIBLE}")
    phi.sample(grid)
    if phi.m1 > M1_ADMISSIBLE:
        raise MapBoundError(f"M1 exceeded: sup |(B, B_-1)| = {phi.m1:.4g} > {M1_ADMISSIBLE}")
    return phi


def _sample_scalar(data, phi: Diffeomorphism, grid: TwoPhaseGrid) -> TwoPhaseScalarField | None:
    if data is None:
        return None
    if isinstance(data, TwoPhaseScalarField):
        return data
    if callable(data):
        data = (data, data)
    vals = []
    for side, fn in zip(("plus", "minus"), data):
        pts = phi.samples[side].points
        vals.append(np.broadcast_to(fn(*pts), grid.side_shape).astype(complex))
    return TwoPhaseScalarField(grid, vals[0], vals[1])


def _sample_vector(data, phi: Diffeomorphism, grid: TwoPhaseGrid) -> TwoPhaseVectorField | None:
    if data is None:
        return None
    if isinstance(data, TwoPhaseVectorField):
        return data
    if callable(data[0]):
        data = (data, data)
    vals = []
    for side, fns in zip(("plus", "minus"), data):
        pts = phi.samples[side].points
        vals.append(np.stack([np.broadcast_to(fn(*pts), grid.side_shape) for fn in fns]).astype(complex))
    return TwoPhaseVectorField(grid, vals[0], vals[1])


def transform_data(f_t, g_t, h_t, phi: Diffeomorphism, grid: TwoPhaseGrid):
    """Pull bent data back to the flat configuration.

    Each datum is either a field already sampled at the mapped points Phi(x),
    a callable of the bent coordinates y (used on both sides), or a pair of
    callables (plus, minus).  Vector data take one callable per component.
    Returns (F, g, h) with F = J (A_-1 + B_-1) f, g = J g~ and h = J d h~.
    """
    if not phi.samples:
        phi.sample(grid)
    f = _sample_vector(f_t, phi, grid)
    g = _sample_scalar(g_t, phi, grid)
    h = _sample_scalar(h_t, phi, grid)
    out_f = out_g = out_h = None
    if f is not None:
        parts = []
        for side in ("plus", "minus"):
            s = phi.samples[side]
            inv = s.bend_inv + phi.inverse_rotation.reshape(phi.inverse_rotation.shape + (1,) * grid.dim)
            parts.append(s.jacobian * np.einsum("ij...,j...->i...", inv, f.side(side)))
        out_f = TwoPhaseVectorField(grid, parts[0], parts[1])
    if g is not None:
        out_g = TwoPhaseScalarField(
            grid, phi.samples["plus"].jacobian * g.plus, phi.samples["minus"].jacobian * g.minus
        )
    if h is not None:
        sp, sm = phi.samples["plus"], phi.samples["minus"]
        out_h = TwoPhaseScalarField(grid, sp.jacobian * sp.normal_factor * h.plus, sm.jacobian * sm.normal_factor * h.minus)
    return out_f, out_g, out_h


def perturbation_terms(
    v_grad: TwoPhaseVectorField,
    v: TwoPhaseScalarField | None,
    phi: Diffeomorphism,
    lam: complex = 0.0,
) -> tuple[TwoPhaseVectorField, TwoPhaseScalarField]:
    """calF(v) = (1 - J) grad v - J C_-1 grad v and calG(v) = lam (1 - J) v.

    Takes the gradient explicitly so callers can pass the semi-analytic one
    returned by the flat solver.
    """
    grid = v_grad.grid
    fparts, gparts = [], []
    for side in ("plus", "minus"):
        s = phi.samples[side]
        gv = v_grad.side(side)
        cg = np.einsum("ij...,j...->i...", s.c_inv, gv)
        fparts.append((1.0 - s.jacobian) * gv - s.jacobian * cg)
        if v is not None and lam != 0:
            gparts.append(lam * (1.0 - s.jacobian) * v.side(side))
        else:
            gparts.append(np.zeros(grid.side_shape, complex))
    return TwoPhaseVectorField(grid, fparts[0], fparts[1]), TwoPhaseScalarField(grid, gparts[0], gparts[1])


@dataclass
class BentSolution:
    """Converged flat-coordinate solution v = v~ o Phi and the iteration record.

    ``v.plus``/``v.minus`` are also the samples of v~ at the mapped points
    ``phi.samples[side].points``.
    """

    v: TwoPhaseScalarField
    gradient: TwoPhaseVectorField
    phi: Diffeomorphism
    rho: DensityPair
    history: list[tuple[int, float, float]]
    transmission_residual: float
    flux_residual: float

    @property
    def iterations(self) -> int:
        return len(self.history)

    @property
    def points(self) -> dict[str, np.ndarray]:
        return {side: self.phi.samples[side].points for side in ("plus", "minus")}

    def evaluate_at(self, y: np.ndarray, order: int = 5) -> np.ndarray:
        """v~ at bent points y (shape (N, npts)): Newton inverse, then interpolation of v."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        x = self.phi.inverse(y)
        return _interpolate(self.v, x, order)

    def report_lines(self) -> list[str]:
        return [f"{j} {inc:.17g} {ratio:.17g}" for j, inc, ratio in self.history]


def _interpolate(v: TwoPhaseScalarField, x: np.ndarray, order: int) -> np.ndarray:
    """Fourier in x', degree-``order`` Lagrange in the normal distance, per side."""
    grid = v.grid
    ntan = grid.ntan
    out = np.zeros(x.shape[1:], complex)
    flat_x = x.reshape(grid.dim, -1)
    res = out.reshape(-1)
    axes = tuple(range(ntan))
    h = grid.normal_spacing
    npts = order + 1
    for side in ("plus", "minus"):
        sel = flat_x[-1] >= 0 if side == "plus" else flat_x[-1] < 0
        if not np.any(sel):
            continue
        pts = flat_x[:, sel]
        coeffs = np.fft.fftn(v.side(side), axes=axes) / np.prod(grid.tangential_shape)
        phase = np.ones((pts.shape[1],) + grid.tangential_shape, complex)
        for j in range(ntan):
            kj = grid.wavenumbers[j]
            phase = phase * np.exp(1j * kj[None, ...] * pts[j].reshape((-1,) + (1,) * ntan))
        profiles = phase.reshape(pts.shape[1], -1) @ coeffs.reshape(-1, grid.normal_points)
        dist = np.abs(pts[-1])
        if np.any(dist > grid.normal_half_extent + 1e-12):
            raise ConfigError("point outside the computational box")
        k0 = np.clip(np.floor(dist / h).astype(int) - (npts // 2 - 1), 0, grid.normal_points - npts)
        vals = np.zeros(pts.shape[1], complex)
        for p in range(pts.shape[1]):
            nodes = (k0[p] + np.arange(npts)) * h
            lag = np.ones(npts)
            for a in range(npts):
                for b in range(npts):
                    if a != b:
                        lag[a] *= (dist[p] - nodes[b]) / (nodes[a] - nodes[b])
            vals[p] = lag @ profiles[p, k0[p] : k0[p] + npts]
        res[sel] = vals
    return out


def _flux_residual(sol, forcing_f, h_flat, grid) -> float:
    """max |d_N(v+ - v-) - (f+N - f-N) - (h+ - h-)| on the interface."""
    dn = sol.gradient.plus[-1][..., 0] - sol.gradient.minus[-1][..., 0]
    target = forcing_f.plus[-1][..., 0] - forcing_f.minus[-1][..., 0]
    if h_flat is not None:
        target = target + h_flat.plus[..., 0] - h_flat.minus[..., 0]
    return float(np.max(np.abs(dn - target)))


def solve_bent(
    f_t,
    g_t,
    h_t,
    lam: ResolventParameter | complex,
    phi: Diffeomorphism,
    rho: DensityPair,
    *,
    grid: TwoPhaseGrid,
    tol: float = 1e-10,
    max_iter: int = 100,
    lambda1: float = 1.0,
    m1_threshold: float = M1_CONTRACTION,
    order: int = DEFAULT_ORDER,
) -> BentSolution:
    """Fixed-point solve of the pulled-back bent problem.

    Each sweep calls the flat solver with F + calF(v_prev), source
    g + rho calG(v_prev) and interface datum -h (the flat solver takes the
    normal jump along +e_N, the pulled-back system along n0 = -e_N).
    """
    lam_val = complex(lam.lam) if isinstance(lam, ResolventParameter) else complex(lam)
    if lam_val != 0:
        sigma = lam.sigma if isinstance(lam, ResolventParameter) else math.pi / 4
        ResolventParameter(lam_val, sigma).require_in_sector()
        if abs(lam_val) < lambda1:
            raise OutsideSectorError(lam_val, sigma, lambda1)
    if not phi.samples:
        phi.sample(grid)
    if phi.m1 > m1_threshold:
        raise MapBoundError(f"M1 too large: {phi.m1:.4g} > contraction threshold {m1_threshold}")
    F, g, h = transform_data(f_t, g_t, h_t, phi, grid)
    if F is None:
        F = TwoPhaseVectorField.zeros(grid)
    if lam_val == 0 and (g is not None or h is not None):
        for extra in (g, h):
            if extra is not None and (np.any(extra.plus != 0) or np.any(extra.minus != 0)):
                raise ConfigError("the lam = 0 bent problem takes no g or h data")
        g = h = None
    h_flat = -h if h is not None else None
    rho_g = None

    history: list[tuple[int, float, float]] = []
    prev = None
    prev_inc = None
    streak = 0
    sol = None
    forcing = F
    for it in range(1, max_iter + 1):
        if prev is None:
            forcing, source = F, g
        else:
            cal_f, cal_g = perturbation_terms(prev.gradient, prev.v, phi, lam_val)
            forcing = F + cal_f
            rho_g = cal_g.scaled(rho.rho_plus, rho.rho_minus)
            source = rho_g if g is None else g + rho_g
            if lam_val == 0:
                source = None
        sol = solve_flat(forcing, source, h_flat, lam_val, rho, grid=grid, order=order, return_solution=True)
        if prev is None:
            inc = 1.0
            ratio = float("nan")
        else:
            norm = max(l2_norm(sol.v), 1e-300)
            inc = l2_norm(sol.v - prev.v) / norm
            ratio = inc / prev_inc if prev_inc and prev_inc > 0 else float("nan")
        history.append((it, inc, ratio))
        if prev is not None:
            streak = streak + 1 if (not math.isnan(ratio) and ratio >= 1.0) else 0
            if streak >= 3:
                raise NotContractingError(f"increment ratio >= 1 for 3 steps at iteration {it}")
        prev_inc = inc
        prev = sol
        if phi.is_identity or (it > 1 and inc < tol):
            break
    else:
        raise NotContractingError(f"no convergence in {max_iter} iterations, last increment {prev_inc:.3e}")

    cal_f, _ = perturbation_terms(sol.gradient, sol.v, phi, lam_val)
    transmission = float(np.max(np.abs(rho.rho_plus * sol.v.plus[..., 0] - rho.rho_minus * sol.v.minus[..., 0])))
    flux = _flux_residual(sol, F + cal_f, h_flat, grid)
    return BentSolution(sol.v, sol.gradient, phi, rho, history, transmission, flux)


def manufactured_bent(grid: TwoPhaseGrid, phi: Diffeomorphism, rho: DensityPair, lam: complex = 0.0):
    """Bent data generated from a known v~ with v~ o Phi = v, v_pm = rho_-+ q and
    q = cos(k x_1) (1 + x_N) exp(-x_N^2).

    rho v is continuous, so f~ = grad_y v~ = (A_-1 + B_-1)^T grad_x v,
    g~ = rho lam v~ and h~ = 0 solve the bent system exactly.  Data come back
    sampled at the mapped points.  Returns (f~, g~, v).
    """
    if not phi.samples:
        phi.sample(grid)
    k = 2.0 * math.pi / grid.tangential_period
    n = grid.dim
    vals, grads = [], []
    for side in ("plus", "minus"):
        x = grid.coordinates(side)
        amp = rho.rho_minus if side == "plus" else rho.rho_plus
        xn = x[-1]
        prof = (1.0 + xn) * np.exp(-xn**2)
        dprof = (1.0 - 2.0 * xn * (1.0 + xn)) * np.exp(-xn**2)
        val = amp * np.cos(k * x[0]) * prof
        grad = [np.zeros(grid.side_shape) for _ in range(n)]
        grad[0] = -amp * k * np.sin(k * x[0]) * prof
        grad[-1] = amp * np.cos(k * x[0]) * dprof
        grad = np.stack([np.broadcast_to(c, grid.side_shape) for c in grad])
        s = phi.samples[side]
        inv = s.bend_inv + phi.inverse_rotation.reshape(phi.inverse_rotation.shape + (1,) * grid.dim)
        vals.append(np.broadcast_to(val, grid.side_shape).astype(complex))
        grads.append(np.einsum("ji...,j...->i...", inv, grad).astype(complex))
    v = TwoPhaseScalarField(grid, vals[0], vals[1])
    f_t = TwoPhaseVectorField(grid, grads[0], grads[1])
    lam = complex(lam)
    g_t = None if lam == 0 else v.scaled(rho.rho_plus * lam, rho.rho_minus * lam)
    return f_t, g_t, v
