"""Two-phase fields on a tangentially periodic grid with a doubled interface plane.

Each phase is sampled on its own half grid.  The last array axis is the
distance ``y = |x_N|`` from the interface, ascending, so index 0 on either
side is that side's one-sided trace at x_N = 0.  Tangential axes are
periodic with uniform spacing and a power-of-two number of points.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError
from .spectral_core import fd_weights

__all__ = [
    "TwoPhaseGrid",
    "TwoPhaseScalarField",
    "TwoPhaseVectorField",
    "JumpData",
    "extend",
    "extend_vector",
    "jump",
    "normal_jump",
    "differentiate",
    "gradient",
    "divergence",
    "laplacian",
    "hessian",
    "integrate",
    "inner",
    "norms",
    "l2_norm",
    "save_field",
    "load_field",
    "write_dump",
    "read_dump",
]

SIDES = ("plus", "minus")
FD_ORDER = 6


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class TwoPhaseGrid:
    dim: int
    tangential_size: int
    tangential_period: float
    normal_half_extent: float
    normal_points: int

    def __post_init__(self) -> None:
        if self.dim not in (2, 3):
            raise ConfigError(f"dim must be 2 or 3, got {self.dim}")
        if not _is_power_of_two(int(self.tangential_size)):
            raise ConfigError(f"tangential size must be a power of two, got {self.tangential_size}")
        if self.tangential_period <= 0 or self.normal_half_extent <= 0:
            raise ConfigError("period and normal extent must be positive")
        if self.normal_points < FD_ORDER + 2:
            raise ConfigError(f"need at least {FD_ORDER + 2} normal points per side")

    # geometry -----------------------------------------------------------
    @property
    def ntan(self) -> int:
        return self.dim - 1

    @property
    def tangential_spacing(self) -> float:
        return self.tangential_period / self.tangential_size

    @property
    def normal_spacing(self) -> float:
        return self.normal_half_extent / (self.normal_points - 1)

    @property
    def tangential_shape(self) -> tuple[int, ...]:
        return (self.tangential_size,) * self.ntan

    @property
    def side_shape(self) -> tuple[int, ...]:
        return self.tangential_shape + (self.normal_points,)

    @functools.cached_property
    def y(self) -> np.ndarray:
        return np.linspace(0.0, self.normal_half_extent, self.normal_points)

    @functools.cached_property
    def x_tangential(self) -> np.ndarray:
        return np.arange(self.tangential_size) * self.tangential_spacing

    def coordinates(self, side: str) -> list[np.ndarray]:
        """Broadcastable coordinate arrays (x_1, ..., x_N) for one side."""
        sign = 1.0 if side == "plus" else -1.0
        axes = [self.x_tangential] * self.ntan + [sign * self.y]
        return list(np.meshgrid(*axes, indexing="ij"))

    @functools.cached_property
    def wavenumbers(self) -> list[np.ndarray]:
        """Tangential wavenumber arrays on the FFT layout, broadcast to the tangential shape."""
        k = 2.0 * np.pi * np.fft.fftfreq(self.tangential_size, d=self.tangential_spacing)
        return list(np.meshgrid(*([k] * self.ntan), indexing="ij"))

    @functools.cached_property
    def xi_norm(self) -> np.ndarray:
        return np.sqrt(sum(k**2 for k in self.wavenumbers))

    @functools.cached_property
    def nyquist_mask(self) -> np.ndarray:
        """True on modes that sit on a Nyquist line of some tangential axis."""
        n = self.tangential_size
        mask = np.zeros(self.tangential_shape, dtype=bool)
        for axis in range(self.ntan):
            idx = [slice(None)] * self.ntan
            idx[axis] = n // 2
            mask[tuple(idx)] = True
        return mask

    @functools.cached_property
    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.normal_points, self.normal_spacing)
        w[0] = w[-1] = 0.5 * self.normal_spacing
        return w

    @functools.cached_property
    def normal_derivative_matrix(self) -> np.ndarray:
        """Dense sixth-order d/dy matrix with one-sided rows at both ends."""
        m = self.normal_points
        npts = FD_ORDER + 1
        mat = np.zeros((m, m))
        for i in range(m):
            start = min(max(i - npts // 2, 0), m - npts)
            offs = np.arange(start, start + npts) - i
            mat[i, start : start + npts] = fd_weights(offs, 1) / self.normal_spacing
        mat.setflags(write=False)
        return mat

    def header(self) -> dict[str, str]:
        return {
            "geometry": "flat",
            "dim": str(self.dim),
            "sizes": " ".join(str(s) for s in self.side_shape),
            "period": repr(float(self.tangential_period)),
            "L": repr(float(self.normal_half_extent)),
        }

    @classmethod
    def from_header(cls, header: dict[str, str]) -> "TwoPhaseGrid":
        sizes = [int(s) for s in header["sizes"].split()]
        dim = int(header["dim"])
        if len(sizes) != dim:
            raise ConfigError("dump sizes do not match its dimension")
        return cls(dim, sizes[0], float(header["period"]), float(header["L"]), sizes[-1])


def _check_shape(grid: TwoPhaseGrid, arr: np.ndarray, lead: tuple[int, ...] = ()) -> np.ndarray:
    arr = np.asarray(arr)
    expected = lead + grid.side_shape
    if arr.shape != expected:
        raise ConfigError(f"array shape {arr.shape} does not match grid shape {expected}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError("field samples must be finite")
    return arr.astype(complex, copy=False)


@dataclass
class TwoPhaseScalarField:
    grid: TwoPhaseGrid
    plus: np.ndarray
    minus: np.ndarray

    def __post_init__(self) -> None:
        self.plus = _check_shape(self.grid, self.plus)
        self.minus = _check_shape(self.grid, self.minus)

    @classmethod
    def zeros(cls, grid: TwoPhaseGrid) -> "TwoPhaseScalarField":
        return cls(grid, np.zeros(grid.side_shape, complex), np.zeros(grid.side_shape, complex))

    @classmethod
    def from_functions(cls, grid: TwoPhaseGrid, f_plus: Callable, f_minus: Callable) -> "TwoPhaseScalarField":
        vp = np.broadcast_to(f_plus(*grid.coordinates("plus")), grid.side_shape)
        vm = np.broadcast_to(f_minus(*grid.coordinates("minus")), grid.side_shape)
        return cls(grid, np.array(vp, dtype=complex), np.array(vm, dtype=complex))

    def side(self, side: str) -> np.ndarray:
        return self.plus if side == "plus" else self.minus

    def trace(self, side: str) -> np.ndarray:
        return self.side(side)[..., 0]

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "TwoPhaseScalarField":
        return TwoPhaseScalarField(self.grid, fn(self.plus), fn(self.minus))

    def scaled(self, a_plus: complex, a_minus: complex) -> "TwoPhaseScalarField":
        return TwoPhaseScalarField(self.grid, a_plus * self.plus, a_minus * self.minus)

    def __add__(self, other: "TwoPhaseScalarField") -> "TwoPhaseScalarField":
        return TwoPhaseScalarField(self.grid, self.plus + other.plus, self.minus + other.minus)

    def __sub__(self, other: "TwoPhaseScalarField") -> "TwoPhaseScalarField":
        return TwoPhaseScalarField(self.grid, self.plus - other.plus, self.minus - other.minus)

    def __mul__(self, c: complex) -> "TwoPhaseScalarField":
        return TwoPhaseScalarField(self.grid, c * self.plus, c * self.minus)

    __rmul__ = __mul__

    def __neg__(self) -> "TwoPhaseScalarField":
        return self * -1.0


@dataclass
class TwoPhaseVectorField:
    grid: TwoPhaseGrid
    plus: np.ndarray
    minus: np.ndarray

    def __post_init__(self) -> None:
        lead = (self.grid.dim,)
        self.plus = _check_shape(self.grid, self.plus, lead)
        self.minus = _check_shape(self.grid, self.minus, lead)

    @classmethod
    def zeros(cls, grid: TwoPhaseGrid) -> "TwoPhaseVectorField":
        shape = (grid.dim,) + grid.side_shape
        return cls(grid, np.zeros(shape, complex), np.zeros(shape, complex))

    @classmethod
    def from_functions(
        cls, grid: TwoPhaseGrid, f_plus: Sequence[Callable], f_minus: Sequence[Callable]
    ) -> "TwoPhaseVectorField":
        if len(f_plus) != grid.dim or len(f_minus) != grid.dim:
            raise ConfigError("need one callable per component")
        xp, xm = grid.coordinates("plus"), grid.coordinates("minus")
        vp = np.stack([np.broadcast_to(f(*xp), grid.side_shape) for f in f_plus])
        vm = np.stack([np.broadcast_to(f(*xm), grid.side_shape) for f in f_minus])
        return cls(grid, vp.astype(complex), vm.astype(complex))

    @classmethod
    def from_components(cls, comps: Sequence[TwoPhaseScalarField]) -> "TwoPhaseVectorField":
        grid = comps[0].grid
        return cls(grid, np.stack([c.plus for c in comps]), np.stack([c.minus for c in comps]))

    def side(self, side: str) -> np.ndarray:
        return self.plus if side == "plus" else self.minus

    def component(self, j: int) -> TwoPhaseScalarField:
        return TwoPhaseScalarField(self.grid, self.plus[j], self.minus[j])

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "TwoPhaseVectorField":
        return TwoPhaseVectorField(self.grid, fn(self.plus), fn(self.minus))

    def scaled(self, a_plus: complex, a_minus: complex) -> "TwoPhaseVectorField":
        return TwoPhaseVectorField(self.grid, a_plus * self.plus, a_minus * self.minus)

    def __add__(self, other: "TwoPhaseVectorField") -> "TwoPhaseVectorField":
        return TwoPhaseVectorField(self.grid, self.plus + other.plus, self.minus + other.minus)

    def __sub__(self, other: "TwoPhaseVectorField") -> "TwoPhaseVectorField":
        return TwoPhaseVectorField(self.grid, self.plus - other.plus, self.minus - other.minus)

    def __mul__(self, c: complex) -> "TwoPhaseVectorField":
        return TwoPhaseVectorField(self.grid, c * self.plus, c * self.minus)

    __rmul__ = __mul__

    def __neg__(self) -> "TwoPhaseVectorField":
        return self * -1.0


@dataclass(frozen=True)
class JumpData:
    """Interface data: g1 prescribes the rho-weighted jump, g2 the normal-derivative jump."""

    g1_trace: np.ndarray
    g2_trace: np.ndarray

    def __post_init__(self) -> None:
        g1 = np.asarray(self.g1_trace, dtype=complex)
        g2 = np.asarray(self.g2_trace, dtype=complex)
        if g1.shape != g2.shape:
            raise ConfigError("g1 and g2 traces must share the tangential shape")
        object.__setattr__(self, "g1_trace", g1)
        object.__setattr__(self, "g2_trace", g2)

    @classmethod
    def zeros(cls, grid: TwoPhaseGrid) -> "JumpData":
        return cls(np.zeros(grid.tangential_shape, complex), np.zeros(grid.tangential_shape, complex))


# extensions ----------------------------------------------------------------

def extend(values: np.ndarray, parity: str, side: str = "plus", y: np.ndarray | None = None):
    """Reflect one-sided samples across the interface.

    ``values`` holds samples along the last axis at distances y_0 = 0 < y_1 <
    ... from the interface.  Returns ``(x_N, whole_line_values)`` with x_N
    ascending over [-y_max, y_max].  The odd extension takes the value 0 on
    the interface itself (the mean of its two one-sided limits).
    """
    if parity not in ("odd", "even"):
        raise ConfigError(f"parity must be 'odd' or 'even', got {parity!r}")
    if side not in SIDES:
        raise ConfigError(f"side must be 'plus' or 'minus', got {side!r}")
    vals = np.asarray(values)
    m = vals.shape[-1]
    if y is None:
        y = np.arange(m, dtype=float)
    sign = -1.0 if parity == "odd" else 1.0
    own = vals
    mirror = sign * vals[..., 1:]
    centre = vals[..., :1] if parity == "even" else np.zeros_like(vals[..., :1])
    if side == "plus":
        # x_N < 0 carries the reflected copy
        whole = np.concatenate([mirror[..., ::-1], centre, own[..., 1:]], axis=-1)
    else:
        whole = np.concatenate([own[..., :0:-1], centre, mirror], axis=-1)
    x = np.concatenate([-y[:0:-1], [0.0], y[1:]])
    return x, whole


def extend_vector(field: TwoPhaseVectorField, side: str):
    """Reflect (f_1, ..., f_{N-1}, f_N) with odd tangential and even normal parts."""
    comps = field.side(side)
    out = []
    x = None
    for j in range(field.grid.dim):
        parity = "even" if j == field.grid.dim - 1 else "odd"
        x, whole = extend(comps[j], parity, side, field.grid.y)
        out.append(whole)
    return x, np.stack(out)


# traces and jumps ----------------------------------------------------------

def jump(field: TwoPhaseScalarField) -> np.ndarray:
    """Plus-side trace minus minus-side trace on the interface grid."""
    return field.plus[..., 0] - field.minus[..., 0]


def normal_jump(field: TwoPhaseScalarField) -> np.ndarray:
    """Jump of d/dx_N across the interface using the one-sided difference rows."""
    d = differentiate(field, field.grid.dim - 1)
    return jump(d)


# derivatives ---------------------------------------------------------------

def _tangential_derivative(values: np.ndarray, grid: TwoPhaseGrid, axis: int, order: int = 1) -> np.ndarray:
    axes = tuple(range(values.ndim - 1 - grid.ntan, values.ndim - 1))
    spec = np.fft.fftn(values, axes=axes)
    k = grid.wavenumbers[axis]
    mult = (1j * k) ** order
    if order % 2 == 1:
        mult = np.where(grid.nyquist_mask, 0.0, mult)
    spec *= mult[..., None]
    return np.fft.ifftn(spec, axes=axes)


def _normal_derivative(values: np.ndarray, grid: TwoPhaseGrid, side: str) -> np.ndarray:
    out = values @ grid.normal_derivative_matrix.T
    return out if side == "plus" else -out


def differentiate(field: TwoPhaseScalarField, direction: int) -> TwoPhaseScalarField:
    """d/dx_direction; spectral tangentially, sixth-order differences normally."""
    grid = field.grid
    if not 0 <= direction < grid.dim:
        raise ConfigError(f"direction must be in [0, {grid.dim}), got {direction}")
    if direction < grid.ntan:
        return TwoPhaseScalarField(
            grid,
            _tangential_derivative(field.plus, grid, direction),
            _tangential_derivative(field.minus, grid, direction),
        )
    return TwoPhaseScalarField(
        grid,
        _normal_derivative(field.plus, grid, "plus"),
        _normal_derivative(field.minus, grid, "minus"),
    )


def gradient(field: TwoPhaseScalarField) -> TwoPhaseVectorField:
    return TwoPhaseVectorField.from_components([differentiate(field, j) for j in range(field.grid.dim)])


def divergence(vfield: TwoPhaseVectorField) -> TwoPhaseScalarField:
    total = TwoPhaseScalarField.zeros(vfield.grid)
    for j in range(vfield.grid.dim):
        total = total + differentiate(vfield.component(j), j)
    return total


def laplacian(field: TwoPhaseScalarField) -> TwoPhaseScalarField:
    return divergence(gradient(field))


def hessian(field: TwoPhaseScalarField) -> list[list[TwoPhaseScalarField]]:
    first = [differentiate(field, i) for i in range(field.grid.dim)]
    return [[differentiate(first[i], j) for j in range(field.grid.dim)] for i in range(field.grid.dim)]


# quadrature and norms --------------------------------------------------------

def _integrate_side(values: np.ndarray, grid: TwoPhaseGrid) -> complex:
    cell = grid.tangential_spacing**grid.ntan
    return complex(np.sum(values * grid.trapezoid_weights) * cell)


def integrate(field: TwoPhaseScalarField) -> complex:
    """Trapezoid in x_N, rectangle rule over the periodic tangential cell, both phases."""
    return _integrate_side(field.plus, field.grid) + _integrate_side(field.minus, field.grid)


def inner(u: TwoPhaseScalarField | TwoPhaseVectorField, w: TwoPhaseScalarField | TwoPhaseVectorField) -> complex:
    """Discrete L2 pairing (u, w) = int u * conj(w), summed over components."""
    grid = u.grid
    prod_p = u.plus * np.conj(w.plus)
    prod_m = u.minus * np.conj(w.minus)
    if prod_p.ndim > len(grid.side_shape):
        prod_p = prod_p.sum(axis=0)
        prod_m = prod_m.sum(axis=0)
    return _integrate_side(prod_p, grid) + _integrate_side(prod_m, grid)


def _l2(arrays_plus: Iterable[np.ndarray], arrays_minus: Iterable[np.ndarray], grid: TwoPhaseGrid) -> float:
    total = 0.0
    for a in arrays_plus:
        total += _integrate_side(np.abs(a) ** 2, grid).real
    for a in arrays_minus:
        total += _integrate_side(np.abs(a) ** 2, grid).real
    return math.sqrt(max(total, 0.0))


def l2_norm(field: TwoPhaseScalarField | TwoPhaseVectorField) -> float:
    if isinstance(field, TwoPhaseVectorField):
        return _l2(list(field.plus), list(field.minus), field.grid)
    return _l2([field.plus], [field.minus], field.grid)


def norms(field: TwoPhaseScalarField, lam: complex | None = None) -> dict[str, float]:
    """L2 norms of v, grad v and the Hessian; optionally the resolvent triplet."""
    grid = field.grid
    grad = gradient(field)
    hess = hessian(field)
    out = {
        "l2": l2_norm(field),
        "h1": l2_norm(grad),
        "h2": _l2(
            [hess[i][j].plus for i in range(grid.dim) for j in range(grid.dim)],
            [hess[i][j].minus for i in range(grid.dim) for j in range(grid.dim)],
            grid,
        ),
    }
    if lam is not None:
        lam = complex(lam)
        out["resolvent_triplet"] = abs(lam) * out["l2"] + abs(lam) ** 0.5 * out["h1"] + out["h2"]
    return out


# field dumps ---------------------------------------------------------------

MAGIC = "TWOPHASE-FIELD-DUMP 1"


def write_dump(path: str | Path, header: dict[str, str], blocks: Sequence[np.ndarray]) -> None:
    """Write a text header followed by little-endian float64 (re, im) pairs.

    ``blocks`` are written in order, each in row-major layout.  Grid-aware
    callers put the grid description in ``header``; ``phase`` and
    ``components`` are filled in here if missing.
    """
    head = dict(header)
    head.setdefault("phase", "both" if len(blocks) % 2 == 0 else "plus")
    head.setdefault("components", "1")
    head["blocks"] = str(len(blocks))
    lines = [MAGIC] + [f"{k} {v}" for k, v in head.items()] + ["end"]
    payload = []
    for b in blocks:
        arr = np.ascontiguousarray(np.asarray(b, dtype=complex))
        inter = np.empty(arr.shape + (2,), dtype="<f8")
        inter[..., 0] = arr.real
        inter[..., 1] = arr.imag
        payload.append(inter.tobytes(order="C"))
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for chunk in payload:
            fh.write(chunk)


def read_dump(path: str | Path) -> tuple[dict[str, str], bytes]:
    """Return the header and the raw payload of a dump file."""
    data = Path(path).read_bytes()
    marker = b"\nend\n"
    pos = data.find(marker)
    if not data.startswith(MAGIC.encode("ascii")) or pos < 0:
        raise ConfigError(f"{path}: not a field dump")
    lines = data[:pos].decode("ascii").splitlines()[1:]
    header = {}
    for line in lines:
        key, _, value = line.partition(" ")
        header[key] = value
    return header, data[pos + len(marker) :]


def decode_blocks(payload: bytes, shape: tuple[int, ...], count: int) -> list[np.ndarray]:
    raw = np.frombuffer(payload, dtype="<f8")
    per = int(np.prod(shape)) * 2
    if raw.size != per * count:
        raise ConfigError("dump payload size does not match its header")
    out = []
    for i in range(count):
        chunk = raw[i * per : (i + 1) * per].reshape(shape + (2,))
        out.append(chunk[..., 0] + 1j * chunk[..., 1])
    return out


def save_field(path: str | Path, field: TwoPhaseScalarField | TwoPhaseVectorField) -> None:
    header = field.grid.header()
    if isinstance(field, TwoPhaseVectorField):
        header["components"] = str(field.grid.dim)
        blocks = list(field.plus) + list(field.minus)
    else:
        header["components"] = "1"
        blocks = [field.plus, field.minus]
    header["phase"] = "both"
    write_dump(path, header, blocks)


def load_field(path: str | Path) -> TwoPhaseScalarField | TwoPhaseVectorField:
    header, payload = read_dump(path)
    if header.get("geometry", "flat") != "flat":
        raise ConfigError(f"{path}: expected a flat-interface dump")
    grid = TwoPhaseGrid.from_header(header)
    comps = int(header["components"])
    blocks = decode_blocks(payload, grid.side_shape, 2 * comps)
    if comps == 1:
        return TwoPhaseScalarField(grid, blocks[0], blocks[1])
    if comps != grid.dim:
        raise ConfigError("vector dump must have one component per dimension")
    return TwoPhaseVectorField(grid, np.stack(blocks[:comps]), np.stack(blocks[comps:]))
