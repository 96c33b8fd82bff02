from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import integrate

from twophase.cli import compact_manufactured
from twophase.compact_interface import (
    CompactOperators,
    build_cutoff_ladder,
    default_polar_grid,
    oracle_comparison,
    ring_source_check,
    smoothstep,
    solve_compact,
)
from twophase.errors import ConfigError, MeanZeroViolation
from twophase.fd_oracle import PolarGrid
from twophase.spectral_core import DensityPair

RHO = DensityPair(1.0, 3.0)


@pytest.fixture(scope="module")
def ops() -> CompactOperators:
    grid = default_polar_grid()
    return CompactOperators(grid, RHO, build_cutoff_ladder(1.0, grid=grid))


@pytest.fixture(scope="module")
def solved(ops):
    exact, f = compact_manufactured(ops.grid, RHO)
    return exact, f, solve_compact(f, RHO, operators=ops)


def envelope_data(ops, rng, center=1.5, width=0.6):
    x, y = ops.grid.cartesian()
    c = rng.standard_normal(4)
    env = np.exp(-((np.hypot(x, y) - center) / width) ** 2)
    f = np.stack([env * (c[0] + c[1] * y), env * (c[2] + c[3] * x * y)])
    f[:, 0] = f[:, 0, :1]
    f[:, -2:] = 0.0
    return f


def test_smoothstep_ends():
    t = np.array([-1.0, 0.0, 0.5, 1.0, 2.0])
    s = smoothstep(t)
    assert s[0] == 0 and s[1] == 0 and s[3] == 1 and s[4] == 1
    assert abs(s[2] - 0.5) < 1e-15
    with pytest.raises(ConfigError):
        smoothstep(t, 0)


def test_cutoff_ladder_values():
    ladder = build_cutoff_ladder(1.0)
    assert ladder.phi(2.0) == 1.0 and ladder.phi(3.0) == 0.0
    assert ladder.psi_inf(2.0 - 1.0 / 3.0) == 1.0 and ladder.psi_inf(2.0 - 2.0 / 3.0) == 0.0
    assert ladder.psi0(3.0 + 1.0 / 3.0) == 1.0 and ladder.psi0(3.0 + 2.0 / 3.0) == 0.0
    r = np.random.default_rng(0).uniform(0, 6, 100)
    assert np.max(np.abs(ladder.phi(r) + ladder.phi_inf(r) - 1)) < 1e-15
    # psi_inf = 1 on supp phi_inf and psi_0 = 1 on supp phi
    assert np.all(ladder.psi_inf(r[ladder.phi_inf(r) > 0]) == 1)
    assert np.all(ladder.psi0(r[ladder.phi(r) > 0]) == 1)


def test_ladder_configuration_errors():
    with pytest.raises(ConfigError, match="box too small"):
        build_cutoff_ladder(1.0, grid=PolarGrid(3.5, 0.5, 0.05, 16))
    with pytest.raises(ConfigError, match="grid too coarse"):
        build_cutoff_ladder(1.0, grid=default_polar_grid(steps_per_R=10, n_theta=16))
    with pytest.raises(ConfigError):
        build_cutoff_ladder(-1.0)
    with pytest.raises(ConfigError):
        build_cutoff_ladder(1.0, margin=0.5)


def test_remainder_support_and_mean(ops):
    rng = np.random.default_rng(1)
    for _ in range(3):
        f = envelope_data(ops, rng)
        _, parts = ops.apply_S(f)
        rem = ops.remainder_R(f, parts)
        assert np.all(rem.values[~ops.support] == 0)
        assert abs(ops.integral(rem.values)) < 1e-12 * ops.norm(rem.values) + 1e-14
        fn = math.sqrt(np.sum(ops.areas[None, :, None] * f**2))
        assert rem.raw_mean < 1e-8 * fn


def test_operator_g_is_linear_with_exact_support(ops):
    rng = np.random.default_rng(2)
    g = ops.grid

    def sample():
        s = np.where(ops.support[:, None], rng.standard_normal((g.n_slots, g.n_theta)), 0.0)
        s[ops.support] -= ops.integral(s).real / np.sum(ops.areas[ops.support] * g.n_theta)
        return s

    a, b = sample(), sample()
    ga, gb, gab = ops.operator_G(a), ops.operator_G(b), ops.operator_G(2.0 * a - 0.5 * b)
    assert np.max(np.abs(gab.values - (2.0 * ga.values - 0.5 * gb.values))) < 1e-12 * np.max(np.abs(ga.values))
    assert np.all(ga.values[~ops.support] == 0)


def test_remainder_rejects_leaking_support(ops):
    vals = np.zeros((ops.grid.n_slots, ops.grid.n_theta))
    vals[0] = 1.0
    with pytest.raises(MeanZeroViolation):
        ops._close(vals, 1.0)


def test_zero_data_gives_zero(ops):
    f = np.zeros((2, ops.grid.n_slots, ops.grid.n_theta))
    sol = solve_compact(f, RHO, operators=ops)
    assert np.all(sol.v.values == 0)


def test_data_outside_inner_ball_uses_whole_space_part(ops):
    x, y = ops.grid.cartesian()
    r = np.hypot(x, y)
    env = np.exp(-((r - 4.2) / 0.3) ** 2) * (r > 3.05) * (r < 5.5)
    f = np.stack([env * np.cos(y), env * x])
    f[:, -2:] = 0.0
    s_field, parts = ops.apply_S(f)
    assert np.all(parts["S_0"].values == 0)
    assert np.array_equal(s_field.values, ops.psi_inf[:, None] * parts["S_inf"].values)


def test_ring_source_against_quadrature(ops):
    r1, r2 = ops.ladder.annulus

    def bump(t):
        return np.where((t > r1) & (t < r2), np.sin(math.pi * (t - r1) / (r2 - r1)) ** 2, 0.0)

    m1 = integrate.quad(lambda t: float(bump(np.array([t]))[0]) * t, r1, r2)[0]
    m2 = integrate.quad(lambda t: float(bump(np.array([t]))[0]) * t * t, r1, r2)[0]
    c = m1 / m2

    def source(t):
        return bump(t) * (1.0 - c * t)

    assert ring_source_check(ops, source) < 1e-3
    with pytest.raises(ConfigError):
        ring_source_check(ops, bump)


def test_compact_solution_residuals(solved):
    _, _, sol = solved
    assert all(v < 1e-3 for v in sol.residuals.values()), sol.residuals
    assert sol.sigma_min > 1e-3
    assert sol.invariants["R_support_violation"] == 0


def test_compact_manufactured_match(solved):
    exact, _, sol = solved
    err = np.max(np.abs(sol.v.values - exact.values)) / np.max(np.abs(exact.values))
    assert err < 5e-3


def test_compact_oracle_agreement(solved):
    _, f, sol = solved
    assert oracle_comparison(sol, f, RHO, 2.0) < 5e-3


def test_gauge_mean_vanishes(ops, solved):
    _, _, sol = solved
    assert abs(ops._gauge_mean(sol.v.values)) < 1e-12 * np.max(np.abs(sol.v.values))


def test_krylov_matches_dense(ops, solved):
    _, f, dense = solved
    kry = solve_compact(f, RHO, operators=ops, inversion="krylov")
    assert kry.applications > 0 and kry.sigma_min is None
    assert np.max(np.abs(kry.v.values - dense.v.values)) < 1e-8 * np.max(np.abs(dense.v.values))
    with pytest.raises(ConfigError):
        solve_compact(f, RHO, operators=ops, inversion="lu")


def test_data_must_vanish_near_outer_circle(ops):
    f = np.ones((2, ops.grid.n_slots, ops.grid.n_theta))
    with pytest.raises(ConfigError):
        ops.apply_S(f)
