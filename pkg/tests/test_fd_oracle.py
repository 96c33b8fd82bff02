from __future__ import annotations

import math

import numpy as np
import pytest

from twophase.errors import ConfigError, SolverError
from twophase.fd_oracle import (
    PolarGrid,
    PolarModeSolver,
    assemble_transmission_system,
    circle_convergence,
    flat_convergence,
    manufactured_circle,
    oracle_solve,
    symmetrized_min_eigenvalue,
)
from twophase.fields import TwoPhaseGrid, TwoPhaseScalarField, TwoPhaseVectorField, l2_norm
from twophase.halfspace_solver import solve_flat, solve_whole_resolvent
from twophase.spectral_core import DensityPair

RHO = DensityPair(1.0, 3.0)


def hand_toy_matrix() -> np.ndarray:
    """Single tangential column, 8 nodes per side, h = 2/7, rho = (1, 3).

    Unknowns: plus nodes 0..6 then minus nodes 0..6 (the top nodes are Dirichlet).
    """
    t = 3.5
    a = np.zeros((14, 14))
    a[0, 0], a[0, 7] = 1.0, -3.0
    for side in (0, 7):
        for j in range(1, 7):
            a[side + j, side + j] = -2 * t
            a[side + j, side + j - 1] = t
            if j < 6:
                a[side + j, side + j + 1] = t
    # summed half-cell balance of both phases
    a[7] = 0.0
    a[7, 0], a[7, 1], a[7, 7], a[7, 8] = -t, t, -t, t
    return a


def test_toy_system_matches_hand_assembly():
    g = TwoPhaseGrid(2, 1, 1.0, 2.0, 8)
    system = assemble_transmission_system("flat", RHO, 0.0, "dirichlet-outer", grid=g)
    assert system.shape == (14, 14)
    assert np.allclose(system.matrix.toarray(), hand_toy_matrix(), atol=1e-13)


def test_interior_row_sums_vanish():
    g = TwoPhaseGrid(2, 8, 2 * math.pi, 2.0, 9)
    system = assemble_transmission_system("flat", RHO, 0.0, "dirichlet-outer", grid=g)
    full = system.full_matrix.toarray()
    sums = full.sum(axis=1).reshape(2, 8, 9)
    assert np.max(np.abs(sums[:, :, 1:-1])) < 1e-12


def test_symmetrized_system_positive_definite():
    g = TwoPhaseGrid(2, 8, 2 * math.pi, 2.0, 9)
    system = assemble_transmission_system("flat", RHO, 2.0, "dirichlet-outer", grid=g)
    assert symmetrized_min_eigenvalue(system) > 0.5


@pytest.mark.parametrize("geometry", ["flat", "circle"])
def test_homogeneous_system_only_zero_solution(geometry):
    if geometry == "flat":
        grid = TwoPhaseGrid(2, 8, 2 * math.pi, 2.0, 9)
    else:
        grid = PolarGrid(2.0, 0.5, 0.25, 8)
    system = assemble_transmission_system(geometry, RHO, 0.0, "dirichlet-outer", grid=grid)
    assert np.linalg.svd(system.matrix.toarray(), compute_uv=False).min() > 1e-3


def test_zero_data_gives_zero():
    g = TwoPhaseGrid(2, 16, 2 * math.pi, 4.0, 33)
    system = assemble_transmission_system("flat", RHO, 1.0, "truncated-decay", grid=g)
    sol = oracle_solve(system)
    assert np.all(sol.plus == 0) and np.all(sol.minus == 0)


def test_flat_convergence_order():
    errors, ratios = flat_convergence(RHO)
    assert all(3.2 <= r <= 4.8 for r in ratios), ratios
    assert errors[-1] < errors[0]


def test_circle_convergence_order():
    errors, ratios = circle_convergence(RHO)
    assert all(3.2 <= r <= 4.8 for r in ratios), ratios


def test_spectral_cross_check():
    g = TwoPhaseGrid(2, 128, 2 * math.pi, 8.0, 257)
    cp = [lambda x, y: np.cos(x) * np.exp(-y * y), lambda x, y: -2 * y * np.sin(2 * x) * np.exp(-y * y)]
    cm = [lambda x, y: 0.5 * np.sin(x) * np.exp(-y * y), lambda x, y: np.cos(3 * x) * (1 + y) * np.exp(-y * y)]
    f = TwoPhaseVectorField.from_functions(g, cp, cm)
    v = solve_flat(f, None, None, 0.0, RHO)
    system = assemble_transmission_system("flat", RHO, 0.0, "dirichlet-outer", grid=g)
    ref = oracle_solve(system, f=f, boundary=(v.plus[:, -1], v.minus[:, -1]))
    assert l2_norm(ref - v) / l2_norm(v) < 1e-3


def test_whole_space_solver_against_oracle():
    # with equal densities and an even source the transmission problem is the whole-space one
    unit = DensityPair(1.0, 1.0)
    g = TwoPhaseGrid(2, 64, 2 * math.pi, 8.0, 257)
    src = TwoPhaseScalarField.from_functions(
        g, lambda x, y: np.cos(x) * np.exp(-y * y), lambda x, y: np.cos(x) * np.exp(-y * y)
    )
    u = solve_whole_resolvent(None, src, 2.0, "plus", unit, grid=g).values
    system = assemble_transmission_system("flat", unit, 2.0, "truncated-decay", grid=g)
    ref = oracle_solve(system, g=src).plus
    assert np.linalg.norm(ref - u) / np.linalg.norm(u) < 1e-3


def test_mode_solver_matches_global_system():
    grid = PolarGrid(2.0, 0.5, 0.05, 32)
    exact, f = manufactured_circle(grid, RHO)
    system = assemble_transmission_system("circle", RHO, 0.0, "dirichlet-outer", grid=grid)
    ref = oracle_solve(system, f=f, boundary=exact.values[-1])
    mode = PolarModeSolver(grid, RHO, "dirichlet").solve(flux=f, boundary=exact.values[-1])
    assert np.max(np.abs(mode.values - ref.values)) < 1e-10 * np.max(np.abs(ref.values))


def test_absorbing_oracle_is_gauged():
    grid = PolarGrid(3.0, 0.5, 0.1, 32)
    _, f = manufactured_circle(grid, RHO)
    f[:, -2:] = 0.0
    system = assemble_transmission_system("circle", RHO, 0.0, "absorbing", grid=grid)
    sol = oracle_solve(system, f=f)
    assert abs(np.mean(sol.values[-1])) < 1e-12


def test_interface_unresolved():
    with pytest.raises(ConfigError, match="interface unresolved"):
        PolarGrid(2.0, 0.53, 0.05, 16)
    with pytest.raises(ConfigError, match="interface unresolved"):
        PolarGrid(2.0, 0.5, 0.05, 16).slot_of_radius(0.52)


def test_solver_failed_reported():
    g = TwoPhaseGrid(2, 8, 2 * math.pi, 2.0, 9)
    system = assemble_transmission_system("flat", RHO, 1.0, "truncated-decay", grid=g)
    src = TwoPhaseScalarField.from_functions(g, lambda x, y: np.cos(x) + 0 * y, lambda x, y: 0 * x * y)
    with pytest.raises(SolverError, match="solver failed"):
        oracle_solve(system, g=src, residual_tol=0.0)


def test_dtn_zero_mode_compatibility():
    grid = PolarGrid(3.0, 0.5, 0.1, 16)
    solver = PolarModeSolver(grid, RHO, "dtn")
    src = np.zeros((grid.n_slots, grid.n_theta))
    src[5] = 1.0
    with pytest.raises(SolverError, match="incompatible zero mode"):
        solver.solve(source=src)


def test_bad_configurations():
    g = TwoPhaseGrid(2, 8, 1.0, 1.0, 9)
    with pytest.raises(ConfigError):
        assemble_transmission_system("flat", RHO, bc="nope", grid=g)
    with pytest.raises(ConfigError):
        assemble_transmission_system("flat", RHO, bc="absorbing", grid=g)
    with pytest.raises(ConfigError):
        assemble_transmission_system("bent", RHO, grid=g)
    with pytest.raises(ConfigError):
        assemble_transmission_system("circle", RHO, 1.0, grid=PolarGrid(2.0, 0.5, 0.25, 8))
    with pytest.raises(ConfigError):
        assemble_transmission_system("sphere", RHO, grid=g)
