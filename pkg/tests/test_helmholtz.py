from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twophase.errors import ConfigError
from twophase.fields import TwoPhaseGrid, TwoPhaseScalarField, TwoPhaseVectorField, l2_norm
from twophase.helmholtz import TestGradientBasis, decompose, random_band_limited, solve_weak
from twophase.spectral_core import DensityPair

RHO = DensityPair(1.0, 3.0)


@pytest.fixture(scope="module")
def grid() -> TwoPhaseGrid:
    return TwoPhaseGrid(2, 64, 2 * math.pi, 22.0, 513)


def psi(x, y):
    return np.cos(x) * (1 + y) * np.exp(-y * y) + 0.5 * np.sin(2 * x) * np.exp(-y * y)


def psi_x(x, y):
    return -np.sin(x) * (1 + y) * np.exp(-y * y) + np.cos(2 * x) * np.exp(-y * y)


def psi_y(x, y):
    return np.cos(x) * (1 - 2 * y - 2 * y * y) * np.exp(-y * y) - y * np.sin(2 * x) * np.exp(-y * y)


def weighted_gradient(g: TwoPhaseGrid) -> TwoPhaseVectorField:
    rp, rm = RHO.rho_plus, RHO.rho_minus
    return TwoPhaseVectorField.from_functions(
        g,
        [lambda x, y: psi_x(x, y) / rp, lambda x, y: psi_y(x, y) / rp],
        [lambda x, y: psi_x(x, y) / rm, lambda x, y: psi_y(x, y) / rm],
    )


def solenoidal(g: TwoPhaseGrid) -> TwoPhaseVectorField:
    """Per-phase curl of a stream function that is continuous across the interface."""

    def comps(b):
        sy = lambda x, y: np.cos(x) * (b - 2 * y * (1 + b * y)) * np.exp(-y * y)  # noqa: E731
        sx = lambda x, y: -np.sin(x) * (1 + b * y) * np.exp(-y * y)  # noqa: E731
        return [sy, lambda x, y: -sx(x, y)]

    return TwoPhaseVectorField.from_functions(g, comps(0.5), comps(-1.0))


def test_weak_solution_of_gradient_data(grid):
    u = solve_weak(weighted_gradient(grid), RHO)
    exact = TwoPhaseScalarField.from_functions(grid, psi, psi)
    shift = np.mean(exact.plus[:, 0])
    exact = exact.map(lambda a: a - shift)
    assert l2_norm(u - exact) / l2_norm(exact) < 1e-8
    assert abs(np.mean(u.plus[:, 0])) < 1e-12
    assert np.max(np.abs(u.plus[:, 0] - u.minus[:, 0])) < 1e-10


def test_weak_zero_data(grid):
    u = solve_weak(TwoPhaseVectorField.zeros(grid), RHO)
    assert l2_norm(u) == 0


def test_pure_gradient_has_no_solenoidal_part(grid):
    f = weighted_gradient(grid)
    p, q = decompose(f, RHO)
    assert l2_norm(p) <= 1e-10 * l2_norm(f)
    assert l2_norm(q - f) <= 1e-10 * l2_norm(f)


def test_solenoidal_field_is_fixed(grid):
    f = solenoidal(grid)
    p, q = decompose(f, RHO)
    assert l2_norm(q) <= 1e-8 * l2_norm(f)
    assert l2_norm(p - f) <= 1e-8 * l2_norm(f)


def test_weak_identity_on_test_gradients(grid):
    basis = TestGradientBasis(grid)
    f = random_band_limited(grid, np.random.default_rng(7))
    sol = solve_weak(f, RHO, return_gradient=True)
    q = sol.grad_u.scaled(1 / RHO.rho_plus, 1 / RHO.rho_minus)
    assert basis.max_relative(f - q, l2_norm(f)) < 1e-8


def test_basis_detects_a_gradient(grid):
    # a pure gradient pairs nontrivially with the test gradients
    basis = TestGradientBasis(grid)
    f = weighted_gradient(grid)
    assert basis.max_relative(f, l2_norm(f)) > 1e-3


def test_basis_norms_match_quadrature():
    g = TwoPhaseGrid(2, 8, 2 * math.pi, 2.0, 9)
    basis = TestGradientBasis(g, order=5)
    norms = basis.norms()
    h = g.normal_spacing
    # |grad (e^{i k x} hat)|^2 over one period: 2 pi (k^2 * 2h/3 + 2/h)
    k = 1.0
    expected = math.sqrt(2 * math.pi * (k * k * 2 * h / 3 + 2 / h))
    assert abs(norms[1, 3] - expected) < 1e-12
    with pytest.raises(ConfigError):
        TestGradientBasis(g, order=9)


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_projection_properties(seed):
    g = TwoPhaseGrid(2, 32, 2 * math.pi, 22.0, 513)
    f = random_band_limited(g, np.random.default_rng(seed))
    p, q = decompose(f, RHO)
    nf = l2_norm(f)
    assert np.array_equal((p + q).plus, f.plus) or l2_norm(p + q - f) <= 1e-15 * nf
    p2, _ = decompose(p, RHO)
    assert l2_norm(p2 - p) <= 1e-8 * nf
    assert TestGradientBasis(g).max_relative(p, nf) <= 1e-8


def test_gradient_norm_uniformly_bounded(grid):
    rng = np.random.default_rng(11)
    ratios = []
    for _ in range(10):
        f = random_band_limited(grid, rng)
        sol = solve_weak(f, RHO, return_gradient=True)
        ratios.append(l2_norm(sol.grad_u) / l2_norm(f))
    # testing the weak identity with u itself gives |grad u| <= max(rho) |f|
    assert max(ratios) <= max(RHO.rho_plus, RHO.rho_minus)
