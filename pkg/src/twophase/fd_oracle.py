"""Second-order finite-volume reference solver for the transmission systems.

Flat and bent geometries use the nodes of a :class:`TwoPhaseGrid`: periodic
three-point differences tangentially, half cells at the interface (the
interface node carries one value per phase) and Dirichlet rows at x_N = +-L.
The bent case discretizes the pulled-back operator
``div(K grad v - F)`` with the full coefficient tensor ``K = J (I + C_-1)``.

The circular geometry uses a polar grid whose interface circle is a grid
radius, again with a doubled node.  Two independent solution paths are
provided: per-angular-mode banded solves (:class:`PolarModeSolver`), used by
the compact-interface operators, and one global sparse assembly in physical
space (:func:`assemble_transmission_system`), used as the oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, SolverError
from .fields import TwoPhaseGrid, TwoPhaseScalarField, TwoPhaseVectorField
from .halfspace_solver import manufactured_flat
from .spectral_core import DensityPair

__all__ = [
    "PolarGrid",
    "PolarField",
    "PolarModeSolver",
    "TransmissionSystem",
    "assemble_transmission_system",
    "oracle_solve",
    "symmetrized_min_eigenvalue",
    "flat_convergence",
    "circle_convergence",
    "manufactured_circle",
]

BC_KINDS = ("dirichlet-outer", "truncated-decay", "absorbing")


# ---------------------------------------------------------------- polar grid


@dataclass(frozen=True)
class PolarGrid:
    """Polar nodes r_j = j dr, j = 0..n_r, on a disk with a doubled interface node.

    Slots index the radial values: slots 0..K are the inner phase (r_0 .. r_K),
    slots K+1..n_r+1 the outer phase (r_K .. r_n_r).  The origin slot is a
    single value replicated over the angles.
    """

    outer_radius: float
    interface_radius: float
    radial_step: float
    n_theta: int

    def __post_init__(self) -> None:
        if self.radial_step <= 0 or self.outer_radius <= 0 or self.interface_radius <= 0:
            raise ConfigError("polar grid sizes must be positive")
        if self.n_theta < 4:
            raise ConfigError("need at least 4 angular nodes")
        k = self.interface_radius / self.radial_step
        n = self.outer_radius / self.radial_step
        if abs(k - round(k)) > 1e-9 or abs(n - round(n)) > 1e-9:
            raise ConfigError("interface unresolved: radii must be integer multiples of the radial step")
        if round(k) < 2 or round(k) > round(n) - 2:
            raise ConfigError("interface unresolved: interface too close to the origin or the outer circle")

    @property
    def n_r(self) -> int:
        return int(round(self.outer_radius / self.radial_step))

    @property
    def k_interface(self) -> int:
        return int(round(self.interface_radius / self.radial_step))

    @property
    def n_slots(self) -> int:
        return self.n_r + 2

    @property
    def dtheta(self) -> float:
        return 2.0 * math.pi / self.n_theta

    @property
    def theta(self) -> np.ndarray:
        return np.arange(self.n_theta) * self.dtheta

    @property
    def radial_index(self) -> np.ndarray:
        """Radial node index j of every slot."""
        s = np.arange(self.n_slots)
        return np.where(s <= self.k_interface, s, s - 1)

    @property
    def r(self) -> np.ndarray:
        return self.radial_index * self.radial_step

    @property
    def inner(self) -> np.ndarray:
        return np.arange(self.n_slots) <= self.k_interface

    def slot_of_radius(self, radius: float, side: str = "outer") -> int:
        j = radius / self.radial_step
        if abs(j - round(j)) > 1e-9:
            raise ConfigError(f"interface unresolved: radius {radius} is not a grid radius")
        j = int(round(j))
        if j < self.k_interface or (j == self.k_interface and side == "inner"):
            return j
        return j + 1

    @property
    def areas(self) -> np.ndarray:
        """Cell areas per angular wedge, shape (n_slots,)."""
        dr, dth = self.radial_step, self.dtheta
        r = self.r
        k = self.k_interface
        a = r * dr * dth
        a[0] = 0.5 * (0.5 * dr) ** 2 * dth
        a[k] = 0.5 * (r[k] ** 2 - (r[k] - 0.5 * dr) ** 2) * dth
        a[k + 1] = 0.5 * ((r[k] + 0.5 * dr) ** 2 - r[k] ** 2) * dth
        a[-1] = 0.5 * (r[-1] ** 2 - (r[-1] - 0.5 * dr) ** 2) * dth
        return a

    @property
    def angular_lengths(self) -> np.ndarray:
        """Radial extent of each cell (length of its angular faces)."""
        dr = self.radial_step
        ell = np.full(self.n_slots, dr)
        k = self.k_interface
        ell[0] = 0.0
        ell[k] = ell[k + 1] = ell[-1] = 0.5 * dr
        return ell

    @property
    def radial_faces(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(left slot, right slot, face radius) of every radial face; the interface has none."""
        left = np.array([i for i in range(self.n_slots - 1) if i != self.k_interface])
        right = left + 1
        radius = 0.5 * (self.r[left] + self.r[right])
        return left, right, radius

    def mode_numbers(self) -> np.ndarray:
        return np.fft.fftfreq(self.n_theta, 1.0 / self.n_theta)

    def angular_eigenvalues(self) -> np.ndarray:
        """4 sin^2(m dtheta / 2): minus the periodic second difference, per mode."""
        return 4.0 * np.sin(0.5 * self.mode_numbers() * self.dtheta) ** 2

    def dtn_rates(self) -> np.ndarray:
        """mu_m = (2/dtheta) |sin(m dtheta / 2)|: decay exponents of discrete exterior harmonics."""
        return (2.0 / self.dtheta) * np.abs(np.sin(0.5 * self.mode_numbers() * self.dtheta))

    def cartesian(self) -> tuple[np.ndarray, np.ndarray]:
        r = self.r[:, None]
        th = self.theta[None, :]
        return r * np.cos(th), r * np.sin(th)

    def integrate(self, values: np.ndarray, mask: np.ndarray | None = None) -> complex:
        w = self.areas[:, None] * np.ones((1, self.n_theta))
        if mask is not None:
            w = w * mask
        return complex(np.sum(w * values))


@dataclass
class PolarField:
    """Scalar values on the slots of a polar grid, shape (n_slots, n_theta)."""

    grid: PolarGrid
    values: np.ndarray

    @classmethod
    def zeros(cls, grid: PolarGrid, dtype=float) -> "PolarField":
        return cls(grid, np.zeros((grid.n_slots, grid.n_theta), dtype))

    @classmethod
    def from_functions(cls, grid: PolarGrid, inner: Callable, outer: Callable) -> "PolarField":
        x, y = grid.cartesian()
        vals = np.where(grid.inner[:, None], inner(x, y), outer(x, y))
        vals = np.array(np.broadcast_to(vals, (grid.n_slots, grid.n_theta)))
        vals[0] = vals[0, 0]
        return cls(grid, vals)

    def __add__(self, other: "PolarField") -> "PolarField":
        return PolarField(self.grid, self.values + other.values)

    def __sub__(self, other: "PolarField") -> "PolarField":
        return PolarField(self.grid, self.values - other.values)

    def __mul__(self, c) -> "PolarField":
        return PolarField(self.grid, self.values * c)

    __rmul__ = __mul__

    def __neg__(self) -> "PolarField":
        return PolarField(self.grid, -self.values)


def polar_components(grid: PolarGrid, cart: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Radial and angular components of a Cartesian vector field (2, n_slots, n_theta)."""
    th = grid.theta[None, :]
    c, s = np.cos(th), np.sin(th)
    fr = cart[0] * c + cart[1] * s
    ft = -cart[0] * s + cart[1] * c
    return fr, ft


def vector_from_functions(grid: PolarGrid, inner: tuple[Callable, Callable], outer: tuple[Callable, Callable]) -> np.ndarray:
    x, y = grid.cartesian()
    comps = []
    for fi, fo in zip(inner, outer):
        comps.append(np.array(np.broadcast_to(np.where(grid.inner[:, None], fi(x, y), fo(x, y)), x.shape), dtype=float))
    out = np.stack(comps)
    out[:, 0] = out[:, 0, :1]
    return out


def flux_divergence(grid: PolarGrid, cart: np.ndarray) -> np.ndarray:
    """Net outward flux of F through every cell, per slot and wedge (interface faces excluded).

    ``cart`` holds the Cartesian components (2, n_slots, n_theta).
    """
    fr, ft = polar_components(grid, cart)
    out = np.zeros(fr.shape, dtype=np.result_type(fr, float))
    left, right, rad = grid.radial_faces
    face = 0.5 * (fr[left] + fr[right]) * (rad * grid.dtheta)[:, None]
    np.add.at(out, left, face)
    np.add.at(out, right, -face)
    ell = grid.angular_lengths[:, None]
    ang = 0.5 * (ft + np.roll(ft, -1, axis=1)) * ell
    out += ang - np.roll(ang, 1, axis=1)
    return out


def laplacian_flux(grid: PolarGrid, values: np.ndarray) -> np.ndarray:
    """Net outward flux of grad u per cell (no outer-boundary face, interface faces excluded)."""
    out = np.zeros(values.shape, dtype=np.result_type(values, float))
    left, right, rad = grid.radial_faces
    t = (rad * grid.dtheta / grid.radial_step)[:, None]
    face = t * (values[right] - values[left])
    np.add.at(out, left, face)
    np.add.at(out, right, -face)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_th = np.where(grid.r > 0, grid.angular_lengths / (np.where(grid.r > 0, grid.r, 1.0) * grid.dtheta), 0.0)
    out += t_th[:, None] * (np.roll(values, -1, axis=1) - 2.0 * values + np.roll(values, 1, axis=1))
    return out


# ------------------------------------------------------- per-mode polar solver


class PolarModeSolver:
    """Banded per-angular-mode solver for div(grad u - F) = s with transmission conditions.

    Conditions on the interface circle: rho_in u_in - rho_out u_out = g1 and
    n.(grad u - F) jumps by g2 (inner minus outer, n pointing outward).
    Outer condition: Dirichlet at ``outer_slot`` (values beyond it are zero) or
    the exact discrete exterior Dirichlet-to-Neumann map at the last slot.
    The zero mode of a DtN problem is singular; ``gauge`` pins the last slot
    to zero after checking solvability.
    """

    def __init__(
        self,
        grid: PolarGrid,
        rho: DensityPair,
        outer: str = "dirichlet",
        outer_radius: float | None = None,
    ) -> None:
        if outer not in ("dirichlet", "dtn"):
            raise ConfigError(f"unknown outer condition {outer!r}")
        self.grid = grid
        self.rho = rho
        self.outer = outer
        if outer_radius is None:
            self.last = grid.n_slots - 1
        else:
            if outer == "dtn" and abs(outer_radius - grid.outer_radius) > 1e-12:
                raise ConfigError("the DtN condition lives on the outer grid circle")
            self.last = grid.slot_of_radius(outer_radius)
        if self.last <= grid.k_interface + 2:
            raise ConfigError("box too small: outer circle must lie well outside the interface")
        self._factors = self._build()

    def _build(self):
        g = self.grid
        n = g.n_slots
        k = g.k_interface
        dr, dth = g.radial_step, g.dtheta
        left, right, rad = g.radial_faces
        trans = np.zeros(n - 1)
        trans[left] = rad * dth / dr
        with np.errstate(divide="ignore", invalid="ignore"):
            t_th = np.where(g.r > 0, g.angular_lengths / (np.where(g.r > 0, g.r, 1.0) * dth), 0.0)
        lam = g.angular_eigenvalues()
        mu = g.dtn_rates()
        mats = []
        for m_idx in range(g.n_theta):
            ab = np.zeros((4, n), complex)  # rows: u=1, diag, l=1, l=2

            def put(row, col, val):
                ab[1 + row - col, col] += val

            for i in range(n):
                if i > self.last:
                    put(i, i, 1.0)
                    continue
                if i == self.last and self.outer == "dirichlet":
                    put(i, i, 1.0)
                    continue
                if i == 0 and m_idx != 0:
                    put(0, 0, 1.0)
                    continue
                if i == k:
                    put(k, k, self.rho.rho_plus)
                    put(k, k + 1, -self.rho.rho_minus)
                    continue
                cells = (k, k + 1) if i == k + 1 else (i,)
                for c in cells:
                    if c > 0 and c - 1 != k:
                        t = trans[c - 1]
                        if not (c - 1 == 0 and m_idx != 0):
                            put(i, c - 1, t)
                        put(i, c, -t)
                    if c < n - 1 and c != k and c + 1 <= self.last:
                        t = trans[c]
                        put(i, c + 1, t)
                        put(i, c, -t)
                    put(i, c, -t_th[c] * lam[m_idx])
                if i == self.last and self.outer == "dtn":
                    put(i, i, -mu[m_idx] * dth)
            if m_idx == 0 and self.outer == "dtn":
                for j in range(max(self.last - 2, 0), min(self.last + 2, n)):
                    ab[1 + self.last - j, j] = 0.0
                ab[1, self.last] = 1.0
            mats.append(ab)
        return mats

    def rhs(self, source: np.ndarray | None = None, flux: np.ndarray | None = None,
            g1: np.ndarray | None = None, g2: np.ndarray | None = None,
            boundary: np.ndarray | None = None) -> np.ndarray:
        """Physical-space right-hand side, shape (n_slots, n_theta)."""
        g = self.grid
        k = g.k_interface
        b = np.zeros((g.n_slots, g.n_theta), complex)
        if source is not None:
            b += g.areas[:, None] * source
        if flux is not None:
            b += flux_divergence(g, flux)
        b[k + 1] += b[k]
        if g2 is not None:
            b[k + 1] -= g2 * g.interface_radius * g.dtheta
        b[k] = 0.0 if g1 is None else g1
        if self.outer == "dirichlet" or self.last < g.n_slots - 1:
            b[self.last] = 0.0 if boundary is None else boundary
        b[self.last + 1:] = 0.0
        return b

    def solve_rhs(self, b: np.ndarray, *, compat_tol: float = 1e-9) -> np.ndarray:
        g = self.grid
        b_hat = np.fft.fft(b, axis=1)
        if self.outer == "dtn":
            total = b_hat[:, 0].sum() - b_hat[g.k_interface, 0]
            scale = np.abs(b).sum() + 1e-300
            if abs(total) > compat_tol * scale:
                raise SolverError(f"solver failed: incompatible zero mode (net flux {abs(total):.3e})")
        # origin: only its zero mode is a real unknown; the wedge rows sum to the disk balance
        b_hat[0, 1:] = 0.0
        if self.outer == "dtn":
            b_hat[self.last, 0] = 0.0
        u_hat = np.empty_like(b_hat)
        for m_idx in range(g.n_theta):
            u_hat[:, m_idx] = sla.solve_banded((2, 1), self._factors[m_idx], b_hat[:, m_idx])
        u = np.fft.ifft(u_hat, axis=1)
        return u

    def solve_mode(self, m_idx: int, b_hat: np.ndarray) -> np.ndarray:
        """Solve one angular mode for right-hand side columns ``b_hat`` (n_slots, ...)."""
        return sla.solve_banded((2, 1), self._factors[m_idx], b_hat)

    def solve(self, source=None, flux=None, g1=None, g2=None, boundary=None) -> PolarField:
        u = self.solve_rhs(self.rhs(source, flux, g1, g2, boundary))
        real = all(x is None or np.isrealobj(x) for x in (source, flux, g1, g2, boundary))
        return PolarField(self.grid, u.real if real else u)


# -------------------------------------------------------- Cartesian assembly


@dataclass
class TransmissionSystem:
    """Assembled sparse system plus what is needed to build right-hand sides."""

    geometry: str
    matrix: sp.csr_matrix
    rho: DensityPair
    lam: complex
    bc: str
    grid: TwoPhaseGrid | PolarGrid
    free: np.ndarray
    fixed: np.ndarray
    full_matrix: sp.csr_matrix
    coefficients: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape


def _cart_index(grid: TwoPhaseGrid) -> np.ndarray:
    m = grid.normal_points
    total = 2 * int(np.prod(grid.tangential_shape)) * m
    return np.arange(total).reshape((2,) + grid.tangential_shape + (m,))


def _flip(mats: np.ndarray, rank: int) -> np.ndarray:
    """Express x-coordinate tensors in the minus side's distance coordinates."""
    out = np.array(mats, dtype=complex)
    if rank == 1:
        out[-1] = -out[-1]
    else:
        out[-1, :] = -out[-1, :]
        out[:, -1] = -out[:, -1]
    return out


class _Coo:
    def __init__(self):
        self.rows, self.cols, self.vals = [], [], []

    def add(self, rows, cols, vals):
        rows, cols, vals = np.broadcast_arrays(rows, cols, vals)
        self.rows.append(rows.ravel())
        self.cols.append(cols.ravel())
        self.vals.append(vals.ravel())

    def build(self, n):
        if not self.rows:
            return sp.csr_matrix((n, n), dtype=complex)
        return sp.csr_matrix(
            (np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))), shape=(n, n), dtype=complex
        )


def _cart_coefficients(grid: TwoPhaseGrid, phi=None):
    """K (x coords) and J per side; identity coefficients for the flat geometry."""
    n = grid.dim
    shape = grid.side_shape
    out = {}
    for side in ("plus", "minus"):
        if phi is None:
            kmat = np.zeros((n, n) + shape)
            for a in range(n):
                kmat[a, a] = 1.0
            jac = np.ones(shape)
        else:
            s = phi.samples[side]
            jac = s.jacobian
            kmat = jac * (s.c_inv + np.eye(n).reshape((n, n) + (1,) * grid.dim))
        out[side] = (kmat, jac)
    return out


def _assemble_cartesian(grid: TwoPhaseGrid, rho: DensityPair, lam: complex, coeffs) -> tuple[sp.csr_matrix, dict]:
    n = grid.dim
    ntan = grid.ntan
    m = grid.normal_points
    h = grid.normal_spacing
    dx = grid.tangential_spacing
    idx = _cart_index(grid)
    total = idx.size
    coo = _Coo()
    cross = {}
    for s_i, side in enumerate(("plus", "minus")):
        kmat, jac = coeffs[side]
        kt = kmat if side == "plus" else _flip(kmat, 2).real
        node = idx[s_i]
        rho_s = rho.side(side)
        vol = np.full(m, h)
        vol[0] = 0.5 * h
        ell = vol.copy()
        has_cross = any(np.any(kt[a, b] != 0) for a in range(n) for b in range(n) if a != b)
        cross[side] = has_cross

        def roll(arr, axis, shift):
            return np.roll(arr, shift, axis=axis)

        # normal faces (j, j+1)
        kf = 0.5 * (kt[:, :, ..., :-1] + kt[:, :, ..., 1:])
        rows_a = node[..., :-1]
        rows_b = node[..., 1:]
        for rows, sign in ((rows_a, 1.0), (rows_b, -1.0)):
            coo.add(rows, node[..., 1:], sign * kf[-1, -1] / h)
            coo.add(rows, node[..., :-1], -sign * kf[-1, -1] / h)
            if has_cross:
                for a in range(ntan):
                    c = kf[-1, a] / (4.0 * dx)
                    for off, jsl in ((0, slice(None, -1)), (1, slice(1, None))):
                        nb = node[..., jsl]
                        coo.add(rows, roll(nb, a, -1), sign * c)
                        coo.add(rows, roll(nb, a, 1), -sign * c)
        # tangential faces (t, t+1) along each axis
        for a in range(ntan):
            ka = 0.5 * (kt + roll(kt, 2 + a, -1))
            area = ell / dx
            rows_a = node
            rows_b = roll(node, a, -1)
            for rows, sign in ((rows_a, 1.0), (rows_b, -1.0)):
                coo.add(rows, roll(node, a, -1), sign * area * ka[a, a] / dx)
                coo.add(rows, node, -sign * area * ka[a, a] / dx)
                if not has_cross:
                    continue
                for b in range(ntan):
                    if b == a:
                        continue
                    c = area * ka[a, b] / (4.0 * dx)
                    for base in (node, roll(node, a, -1)):
                        coo.add(rows, roll(base, b, -1), sign * c)
                        coo.add(rows, roll(base, b, 1), -sign * c)
                # normal derivative at the node: centred inside, one-sided at j = 0
                c = area * ka[a, -1]
                for base in (node, roll(node, a, -1)):
                    cj = c[..., 1:-1] / (4.0 * h)
                    coo.add(rows[..., 1:-1], base[..., 2:], sign * cj)
                    coo.add(rows[..., 1:-1], base[..., :-2], -sign * cj)
                    c0 = c[..., 0] / (4.0 * h)
                    coo.add(rows[..., 0], base[..., 0], -3.0 * sign * c0)
                    coo.add(rows[..., 0], base[..., 1], 4.0 * sign * c0)
                    coo.add(rows[..., 0], base[..., 2], -1.0 * sign * c0)
        # reaction term
        if lam != 0:
            coo.add(node, node, -vol * jac * rho_s * lam)
    a_full = coo.build(total).tolil()
    # interface: plus-side row becomes the transmission row, minus-side row the combined balance
    p0 = idx[0][..., 0].ravel()
    m0 = idx[1][..., 0].ravel()
    a_full[m0, :] = a_full[m0, :] + a_full[p0, :]
    a_full[p0, :] = 0.0
    a_full[p0, p0] = rho.rho_plus
    a_full[p0, m0] = -rho.rho_minus
    # outer Dirichlet rows
    top = np.concatenate([idx[0][..., -1].ravel(), idx[1][..., -1].ravel()])
    a_full[top, :] = 0.0
    a_full[top, top] = 1.0
    return a_full.tocsr(), {"cross": cross}


def _cart_rhs(system: TransmissionSystem, f=None, g=None, g1=None, g2=None, boundary=None) -> np.ndarray:
    grid: TwoPhaseGrid = system.grid
    n = grid.dim
    ntan = grid.ntan
    m = grid.normal_points
    h = grid.normal_spacing
    dx = grid.tangential_spacing
    idx = _cart_index(grid)
    b = np.zeros(idx.size, complex)
    coeffs = system.coefficients["cart"]
    vol = np.full(m, h)
    vol[0] = 0.5 * h
    for s_i, side in enumerate(("plus", "minus")):
        rows = np.zeros(grid.side_shape, complex)
        jac = coeffs[side][1]
        if g is not None:
            rows += -vol * g.side(side)
        if f is not None:
            ft = f.side(side) if side == "plus" else _flip(f.side(side), 1)
            # + sum of F.n * area moves to the right-hand side
            fy = 0.5 * (ft[-1][..., :-1] + ft[-1][..., 1:])
            rows[..., :-1] += fy
            rows[..., 1:] -= fy
            for a in range(ntan):
                fa = 0.5 * (ft[a] + np.roll(ft[a], -1, axis=a)) * (vol / dx)
                rows += fa
                rows -= np.roll(fa, 1, axis=a)
        del jac
        b[idx[s_i].ravel()] = rows.ravel()
    p0 = idx[0][..., 0].ravel()
    m0 = idx[1][..., 0].ravel()
    b[m0] += b[p0]
    if g2 is not None:
        b[m0] += np.asarray(g2).ravel()
    b[p0] = 0.0 if g1 is None else np.asarray(g1).ravel()
    top_p = idx[0][..., -1].ravel()
    top_m = idx[1][..., -1].ravel()
    if boundary is None:
        b[top_p] = 0.0
        b[top_m] = 0.0
    else:
        b[top_p] = np.asarray(boundary[0]).ravel()
        b[top_m] = np.asarray(boundary[1]).ravel()
    return b


# ------------------------------------------------------------- polar assembly


def _assemble_polar(grid: PolarGrid, rho: DensityPair, bc: str) -> tuple[sp.csr_matrix, dict]:
    """Global sparse polar system in physical space; unknown 0 is the origin."""
    nth = grid.n_theta
    ns = grid.n_slots
    k = grid.k_interface
    dr, dth = grid.radial_step, grid.dtheta

    def node(i, t):
        return 0 if i == 0 else 1 + (i - 1) * nth + (t % nth)

    total = 1 + (ns - 1) * nth
    coo = _Coo()
    left, right, rad = grid.radial_faces
    trans = dict(zip(left.tolist(), (rad * dth / dr).tolist()))
    t_th = np.zeros(ns)
    t_th[1:] = grid.angular_lengths[1:] / (grid.r[1:] * dth)
    th = np.arange(nth)

    def cell_terms(i, row):
        """Flux-balance entries of cell ``i`` (all wedges), added to matrix row ``row(t)``."""
        rows = np.array([row(t) for t in th])
        if i - 1 >= 0 and i - 1 != k:
            t = trans[i - 1]
            coo.add(rows, np.array([node(i - 1, tt) for tt in th]), t)
            coo.add(rows, np.array([node(i, tt) for tt in th]), -t)
        if i + 1 < ns and i != k:
            t = trans[i]
            coo.add(rows, np.array([node(i + 1, tt) for tt in th]), t)
            coo.add(rows, np.array([node(i, tt) for tt in th]), -t)
        if i > 0:
            coo.add(rows, np.array([node(i, tt + 1) for tt in th]), t_th[i])
            coo.add(rows, np.array([node(i, tt - 1) for tt in th]), t_th[i])
            coo.add(rows, np.array([node(i, tt) for tt in th]), -2.0 * t_th[i])

    # origin: sum of its wedges
    t0 = trans[0]
    coo.add(np.zeros(nth, int), np.array([node(1, t) for t in th]), t0)
    coo.add(np.zeros(1, int), np.zeros(1, int), -t0 * nth)
    for i in range(1, ns):
        if i == k:
            rows = np.array([node(k, t) for t in th])
            coo.add(rows, rows, rho.rho_plus)
            coo.add(rows, np.array([node(k + 1, t) for t in th]), -rho.rho_minus)
            continue
        if i == ns - 1 and bc != "absorbing":
            rows = np.array([node(i, t) for t in th])
            coo.add(rows, rows, 1.0)
            continue
        if i == k + 1:
            cell_terms(k, lambda t: node(k + 1, t))
            cell_terms(k + 1, lambda t: node(k + 1, t))
            continue
        cell_terms(i, lambda t: node(i, t))
    mat = coo.build(total)
    if bc == "absorbing":
        # exact discrete exterior DtN on the last ring: circulant with symbol -mu_m dtheta
        col = np.real(np.fft.ifft(-grid.dtn_rates() * dth))
        rows = np.array([node(ns - 1, t) for t in th])
        circ = sla.circulant(col)
        mat = mat + sp.csr_matrix((circ.ravel(), (np.repeat(rows, nth), np.tile(rows, nth))), shape=(total, total))
    return mat.tocsr(), {"node": node, "total": total}


def _polar_rhs(system: TransmissionSystem, source=None, flux=None, g1=None, g2=None, boundary=None) -> np.ndarray:
    grid: PolarGrid = system.grid
    ns, nth = grid.n_slots, grid.n_theta
    k = grid.k_interface
    b2 = np.zeros((ns, nth), complex)
    if source is not None:
        b2 += grid.areas[:, None] * source
    if flux is not None:
        b2 += flux_divergence(grid, flux)
    b2[k + 1] += b2[k]
    if g2 is not None:
        b2[k + 1] -= g2 * grid.interface_radius * grid.dtheta
    b2[k] = 0.0 if g1 is None else g1
    if system.bc != "absorbing":
        b2[-1] = 0.0 if boundary is None else boundary
    out = np.empty(1 + (ns - 1) * nth, complex)
    out[0] = b2[0].sum()
    out[1:] = b2[1:].ravel()
    return out


# ------------------------------------------------------------------ public API


def assemble_transmission_system(
    geometry: str,
    rho: DensityPair,
    lam: complex = 0.0,
    bc: str = "truncated-decay",
    *,
    grid: TwoPhaseGrid | PolarGrid,
    phi=None,
) -> TransmissionSystem:
    """Sparse system for ``geometry`` in {"flat", "bent", "circle"}.

    Flat and bent rows are per-cell flux balances of div(K grad v - F) - J rho lam v = -g,
    the interface rows are rho_+ v_+ - rho_- v_- = g1 and the summed balance of
    the two half cells carrying the conormal flux jump g2.  The circle is the
    lam = 0 problem on a polar grid with Dirichlet or absorbing outer rows.
    """
    if bc not in BC_KINDS:
        raise ConfigError(f"unknown boundary condition {bc!r}; choose from {BC_KINDS}")
    lam = complex(lam)
    if geometry in ("flat", "bent"):
        if not isinstance(grid, TwoPhaseGrid):
            raise ConfigError("flat and bent geometries need a TwoPhaseGrid")
        if bc == "absorbing":
            raise ConfigError("absorbing outer rows are only available for the circle")
        if grid.normal_points < 3:
            raise ConfigError("interface unresolved: need at least 3 normal points")
        if geometry == "bent":
            if phi is None:
                raise ConfigError("bent geometry needs a map")
            if not phi.samples:
                phi.sample(grid)
        coeffs = _cart_coefficients(grid, phi if geometry == "bent" else None)
        full, info = _assemble_cartesian(grid, rho, lam, coeffs)
        idx = _cart_index(grid)
        fixed = np.concatenate([idx[0][..., -1].ravel(), idx[1][..., -1].ravel()])
        free = np.setdiff1d(np.arange(idx.size), fixed)
        mat = full[free][:, free].tocsr()
        return TransmissionSystem(geometry, mat, rho, lam, bc, grid, free, fixed, full, {"cart": coeffs, **info})
    if geometry == "circle":
        if not isinstance(grid, PolarGrid):
            raise ConfigError("circle geometry needs a PolarGrid")
        if lam != 0:
            raise ConfigError("the circle oracle solves the lam = 0 problem")
        full, info = _assemble_polar(grid, rho, bc)
        total = full.shape[0]
        fixed = np.array([], int)
        free = np.arange(total)
        return TransmissionSystem(geometry, full, rho, lam, bc, grid, free, fixed, full, info)
    raise ConfigError(f"unknown geometry {geometry!r}")


def oracle_solve(
    system: TransmissionSystem,
    *,
    f=None,
    g=None,
    g1=None,
    g2=None,
    boundary=None,
    residual_tol: float = 1e-10,
    gauge: Callable[[np.ndarray], np.ndarray] | None = None,
):
    """Solve the assembled system.

    Flat/bent: ``f`` a TwoPhaseVectorField in x coordinates, ``g`` a
    TwoPhaseScalarField, ``g1``/``g2`` interface traces (``g2`` is the jump of
    e_N.(K grad v - F)), ``boundary`` a pair of traces at x_N = +L and -L.
    Circle: ``f`` Cartesian components (2, n_slots, n_theta), ``g`` a source
    array, ``boundary`` the outer-circle values for Dirichlet rows.  With
    absorbing rows the zero mode is fixed by a bordered gauge row that makes
    the area-weighted mean of the outermost ring vanish.
    """
    if system.geometry == "circle":
        b = _polar_rhs(system, g, f, g1, g2, boundary)
        mat = system.matrix
        grid: PolarGrid = system.grid
        if system.bc == "absorbing":
            n = mat.shape[0]
            node = system.coefficients["node"]
            ring = np.array([node(grid.n_slots - 1, t) for t in range(grid.n_theta)])
            col = np.zeros(n)
            col[0] = 1.0
            row = np.zeros(n)
            row[ring] = 1.0 / grid.n_theta
            mat = sp.bmat([[mat, sp.csr_matrix(col[:, None])], [sp.csr_matrix(row[None, :]), None]]).tocsr()
            b = np.concatenate([b, [0.0]])
        x = spla.spsolve(mat.tocsc(), b)
        res = np.linalg.norm(mat @ x - b) / max(np.linalg.norm(b), 1e-300)
        if not np.all(np.isfinite(x)) or res > residual_tol:
            raise SolverError(f"solver failed: relative residual {res:.3e}")
        if system.bc == "absorbing" and abs(x[-1]) > 1e-8 * max(np.max(np.abs(x[:-1])), 1.0):
            raise SolverError(f"solver failed: incompatible data (multiplier {abs(x[-1]):.3e})")
        x = x[: system.matrix.shape[0]]
        vals = np.empty((grid.n_slots, grid.n_theta), complex)
        vals[0] = x[0]
        vals[1:] = x[1:].reshape(grid.n_slots - 1, grid.n_theta)
        real = all(v is None or np.isrealobj(v) for v in (f, g, g1, g2, boundary))
        return PolarField(grid, vals.real if real else vals)

    grid: TwoPhaseGrid = system.grid
    b_full = _cart_rhs(system, f, g, g1, g2, boundary)
    x_fixed = b_full[system.fixed]
    b = b_full[system.free] - system.full_matrix[system.free][:, system.fixed] @ x_fixed
    x = spla.spsolve(system.matrix.tocsc(), b)
    res = np.linalg.norm(system.matrix @ x - b) / max(np.linalg.norm(b), 1e-300)
    if not np.all(np.isfinite(x)) or res > residual_tol:
        raise SolverError(f"solver failed: relative residual {res:.3e}")
    full = np.empty(b_full.size, complex)
    full[system.free] = x
    full[system.fixed] = x_fixed
    full = full.reshape((2,) + grid.side_shape)
    return TwoPhaseScalarField(grid, full[0], full[1])


def symmetrized_min_eigenvalue(system: TransmissionSystem) -> float:
    """Smallest eigenvalue of the flat real-lam system written for u = rho v, sign flipped to be positive.

    Substituting v_pm = u / rho_pm (one interface unknown u) and dropping the
    transmission rows gives a symmetric matrix; its negative is positive
    definite for real lam > 0.
    """
    if system.geometry != "flat":
        raise ConfigError("symmetrization is implemented for the flat geometry")
    grid: TwoPhaseGrid = system.grid
    idx = _cart_index(grid)
    rho = system.rho
    free_pos = {int(g): i for i, g in enumerate(system.free)}
    plus = idx[0][..., :-1]
    minus = idx[1][..., :-1]
    # one u column per plus node; minus nodes off the interface get their own columns
    columns = [(int(k), None) for k in plus.ravel()]
    columns += [(None, int(k)) for k in minus[..., 1:].ravel()]
    iface = dict(zip(plus[..., 0].ravel().tolist(), minus[..., 0].ravel().tolist()))
    rows_v, cols_u, vals, keep = [], [], [], []
    for c, (kp, km) in enumerate(columns):
        if kp is not None:
            rows_v.append(free_pos[kp])
            cols_u.append(c)
            vals.append(1.0 / rho.rho_plus)
            if kp in iface:
                rows_v.append(free_pos[iface[kp]])
                cols_u.append(c)
                vals.append(1.0 / rho.rho_minus)
                keep.append(free_pos[iface[kp]])
            else:
                keep.append(free_pos[kp])
        else:
            rows_v.append(free_pos[km])
            cols_u.append(c)
            vals.append(1.0 / rho.rho_minus)
            keep.append(free_pos[km])
    p = sp.csr_matrix((vals, (rows_v, cols_u)), shape=(system.matrix.shape[0], len(columns)))
    keep = np.array(keep)
    s = (system.matrix[keep] @ p).toarray()
    sym_err = np.max(np.abs(s - s.T)) / max(np.max(np.abs(s)), 1e-300)
    if sym_err > 1e-10:
        raise SolverError(f"symmetrization failed: asymmetry {sym_err:.3e}")
    return float(np.min(np.linalg.eigvalsh(-0.5 * (s + s.T).real)))


# ------------------------------------------------------------ convergence


def flat_convergence(rho: DensityPair, sizes=((16, 17), (32, 33), (64, 65)), extent: float = 2.0):
    """Max-norm errors of the flat oracle on v = rho_-+ cos(x1) exp(-+x2) and successive ratios."""
    errors = []
    for n, m in sizes:
        grid = TwoPhaseGrid(2, n, 2.0 * math.pi, extent, m)
        v, f, _ = manufactured_flat(grid, rho)
        system = assemble_transmission_system("flat", rho, 0.0, "dirichlet-outer", grid=grid)
        sol = oracle_solve(system, f=f, boundary=(v.plus[..., -1], v.minus[..., -1]))
        errors.append(float(max(np.max(np.abs(sol.plus - v.plus)), np.max(np.abs(sol.minus - v.minus)))))
    ratios = [errors[i] / errors[i + 1] for i in range(len(errors) - 1)]
    return errors, ratios


def manufactured_circle(grid: PolarGrid, rho: DensityPair, mode: int = 2, amplitude: float = 1.0):
    """v_in = a r^m cos(m t), v_out = b r^-m cos(m t) with rho_in v_in = rho_out v_out on the circle.

    Returns (exact PolarField, Cartesian f = grad v).
    """
    a = amplitude
    rs = grid.interface_radius
    b = rho.rho_plus * a * rs ** (2 * mode) / rho.rho_minus
    m = mode

    def vin(x, y):
        return a * np.real((x + 1j * y) ** m)

    def vout(x, y):
        z = x + 1j * y
        with np.errstate(divide="ignore", invalid="ignore"):
            return b * np.real(np.where(z == 0, 0.0, 1.0 / np.where(z == 0, 1.0, z) ** m))

    def gin(x, y):
        d = a * m * (x + 1j * y) ** (m - 1)
        return np.real(d), -np.imag(d)

    def gout(x, y):
        z = x + 1j * y
        zz = np.where(z == 0, 1.0, z)
        d = -b * m * zz ** (-m - 1)
        return np.real(d), -np.imag(d)

    exact = PolarField.from_functions(grid, vin, vout)
    f = vector_from_functions(
        grid, (lambda x, y: gin(x, y)[0], lambda x, y: gin(x, y)[1]), (lambda x, y: gout(x, y)[0], lambda x, y: gout(x, y)[1])
    )
    return exact, f


def circle_convergence(rho: DensityPair, steps=(0.05, 0.025, 0.0125), n_theta0: int = 32, outer: float = 2.0,
                       interface: float = 0.5, mode: int = 2):
    """Max-norm errors of the global polar oracle on the manufactured circle pair and their ratios."""
    errors = []
    for level, dr in enumerate(steps):
        grid = PolarGrid(outer, interface, dr, n_theta0 * 2**level)
        exact, f = manufactured_circle(grid, rho, mode)
        system = assemble_transmission_system("circle", rho, 0.0, "dirichlet-outer", grid=grid)
        sol = oracle_solve(system, f=f, boundary=exact.values[-1])
        errors.append(float(np.max(np.abs(sol.values - exact.values))))
    ratios = [errors[i] / errors[i + 1] for i in range(len(errors) - 1)]
    return errors, ratios
