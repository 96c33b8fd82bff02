"""The nine acceptance criteria at their stated tolerances.

Each test prints one ``criterion N: PASS|FAIL ...`` line, visible even without ``-s``.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from twophase.bent_solver import build_map, manufactured_bent, solve_bent
from twophase.cli import compact_manufactured
from twophase.compact_interface import (
    CompactOperators,
    build_cutoff_ladder,
    default_polar_grid,
    oracle_comparison,
    solve_compact,
)
from twophase.fd_oracle import circle_convergence, flat_convergence
from twophase.fields import TwoPhaseGrid, TwoPhaseVectorField, gradient, l2_norm
from twophase.halfspace_solver import manufactured_flat, resolvent_estimate_ratio, solve_flat
from twophase.helmholtz import TestGradientBasis, decompose, random_band_limited
from twophase.spectral_core import DensityPair, residue_sample

RHO = DensityPair(1.0, 3.0)


@pytest.fixture
def verdict(capsys):
    def emit(number: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, detail

    return emit


def flat_grid(m: int = 257, extent: float = 20.0) -> TwoPhaseGrid:
    return TwoPhaseGrid(2, 64, 2 * math.pi, extent, m)


def test_criterion_1_residues(verdict):
    start = time.perf_counter()
    errs = residue_sample(RHO.rho_plus, 1e-8)
    elapsed = time.perf_counter() - start
    worst = max(errs.values())
    verdict(1, worst < 1e-8 and elapsed < 5.0, f"max abs err {worst:.2e} in {elapsed:.2f} s")


def test_criterion_2_flat_manufactured(verdict):
    g = flat_grid()
    worst_err = worst_jump = 0.0
    for lam in (0.0, 1.0):
        v, f, src = manufactured_flat(g, RHO, lam)
        sol = solve_flat(f, src, None, lam, RHO, return_solution=True)
        worst_err = max(worst_err, l2_norm(sol.v - v) / l2_norm(v))
        jt = RHO.rho_plus * sol.v.plus[:, 0] - RHO.rho_minus * sol.v.minus[:, 0]
        jn = sol.gradient.plus[1][:, 0] - sol.gradient.minus[1][:, 0] - (f.plus[1][:, 0] - f.minus[1][:, 0])
        worst_jump = max(worst_jump, float(np.max(np.abs(jt))), float(np.max(np.abs(jn))))
    ok = worst_err < 1e-6 and worst_jump < 1e-9
    verdict(2, ok, f"rel L2 {worst_err:.2e}, jumps {worst_jump:.2e}")


def test_criterion_3_resolvent_sweep(verdict):
    g = flat_grid()
    sigma = math.pi / 4
    errs, ratios = [], []
    for mag in (1.0, 10.0, 100.0):
        for theta in (0.0, math.pi - sigma - 0.1, -(math.pi - sigma - 0.1)):
            lam = mag * complex(math.cos(theta), math.sin(theta))
            v, f, src = manufactured_flat(g, RHO, lam)
            sol = solve_flat(f, src, None, lam, RHO)
            errs.append(l2_norm(sol - v) / l2_norm(v))
            ratios.append(resolvent_estimate_ratio(sol, f, src, None, lam))
    spread = max(ratios) / float(np.median(ratios))
    ok = max(errs) < 1e-6 and spread <= 10.0
    verdict(3, ok, f"max rel L2 {max(errs):.2e}, max ratio / median {spread:.2f}")


def test_criterion_4_helmholtz(verdict):
    g = TwoPhaseGrid(2, 64, 2 * math.pi, 22.0, 513)
    basis = TestGradientBasis(g)
    rng = np.random.default_rng(2024)
    worst = {"recon": 0.0, "idem": 0.0, "orth": 0.0}
    for _ in range(50):
        f = random_band_limited(g, rng)
        p, q = decompose(f, RHO)
        nf = l2_norm(f)
        worst["recon"] = max(worst["recon"], l2_norm(f - p - q) / nf)
        p2, _ = decompose(p, RHO)
        worst["idem"] = max(worst["idem"], l2_norm(p2 - p) / nf)
        worst["orth"] = max(worst["orth"], basis.max_relative(p, nf))

    def comps(r):
        return [lambda x, y: -np.sin(x) * np.exp(-y * y) / r, lambda x, y: -2 * y * np.cos(x) * np.exp(-y * y) / r]

    grad = TwoPhaseVectorField.from_functions(g, comps(RHO.rho_plus), comps(RHO.rho_minus))
    p, _ = decompose(grad, RHO)
    pure = l2_norm(p) / l2_norm(grad)
    ok = worst["recon"] <= 1e-8 and worst["idem"] <= 1e-8 and worst["orth"] <= 1e-8 and pure <= 1e-10
    detail = ", ".join(f"{k} {v:.2e}" for k, v in worst.items()) + f", gradient |Pf| {pure:.2e}"
    verdict(4, ok, detail)


def test_criterion_5_zero_data(verdict):
    g = flat_grid()
    worst = 0.0
    gauges = []
    for lam in (0.0, 1.0):
        sol = solve_flat(TwoPhaseVectorField.zeros(g), None, None, lam, RHO, return_solution=True)
        worst = max(worst, l2_norm(gradient(sol.v)))
        gauges.append(abs(sol.gauge_constant))
    ok = worst < 1e-10 and all(c == 0 for c in gauges)
    verdict(5, ok, f"|grad v| {worst:.2e}, max |gauge| {max(gauges):.1e}")


def test_criterion_6_bent(verdict):
    g = TwoPhaseGrid(2, 64, 2 * math.pi, 8.0, 257)
    phi = build_map("shear", 0.1, grid=g)
    f_t, g_t, exact = manufactured_bent(g, phi, RHO)
    sol = solve_bent(f_t, g_t, None, 0.0, phi, RHO, grid=g)
    later = [r for it, _, r in sol.history if it >= 2 and not math.isnan(r)]
    rate = max(later)
    jumps = max(sol.transmission_residual, sol.flux_residual)
    err = l2_norm(sol.v - exact) / l2_norm(exact)
    ident = build_map("shear", 0.0, grid=g)
    v, f, _ = manufactured_flat(g, RHO)
    same = l2_norm(solve_bent(f, None, None, 0.0, ident, RHO, grid=g).v - solve_flat(f, None, None, 0.0, RHO))
    ok = rate <= 0.5 and jumps <= 1e-8 and err <= 1e-6 and same <= 1e-13 * l2_norm(v)
    verdict(6, ok, f"ratio {rate:.3f}, jumps {jumps:.2e}, rel L2 {err:.2e}, identity diff {same:.2e}")


@pytest.fixture(scope="module")
def compact_ops() -> CompactOperators:
    grid = default_polar_grid()
    return CompactOperators(grid, RHO, build_cutoff_ladder(1.0, grid=grid))


def test_criterion_7_mean_zero(verdict, compact_ops):
    ops = compact_ops
    g = ops.grid
    rng = np.random.default_rng(7)
    x, y = g.cartesian()
    env = np.exp(-((np.hypot(x, y) - 1.5) / 0.6) ** 2)
    r_worst = g_worst = leak = 0.0
    for _ in range(20):
        c = rng.standard_normal(8)
        f = np.stack([env * (c[0] + c[1] * x + c[2] * y * y + c[3] * np.sin(2 * x)),
                      env * (c[4] + c[5] * y + c[6] * x * y + c[7] * np.cos(3 * y))])
        f[:, 0] = f[:, 0, :1]
        f[:, -2:] = 0.0
        fn = math.sqrt(np.sum(ops.areas[None, :, None] * f**2))
        _, parts = ops.apply_S(f)
        rem = ops.remainder_R(f, parts)
        r_worst = max(r_worst, rem.raw_mean / fn)
        leak = max(leak, float(np.max(np.abs(rem.values[~ops.support]), initial=0.0)))
        s = np.where(ops.support[:, None], rng.standard_normal((g.n_slots, g.n_theta)), 0.0)
        s[ops.support] -= ops.integral(s).real / np.sum(ops.areas[ops.support] * g.n_theta)
        out = ops.operator_G(s)
        g_worst = max(g_worst, out.raw_mean / ops.norm(s))
        leak = max(leak, float(np.max(np.abs(out.values[~ops.support]), initial=0.0)))
    ok = r_worst < 1e-8 and g_worst < 1e-8 and leak == 0
    verdict(7, ok, f"(Rf,1) {r_worst:.2e}, (Gs,1) {g_worst:.2e}, support leak {leak:.1e}")


def test_criterion_8_compact_circle(verdict, compact_ops):
    exact, f = compact_manufactured(compact_ops.grid, RHO)
    sol = solve_compact(f, RHO, operators=compact_ops)
    res = max(sol.residuals.values())
    oracle = oracle_comparison(sol, f, RHO, 2.0 * compact_ops.ladder.base_radius)
    ok = res < 1e-3 and oracle < 5e-3 and sol.sigma_min > 1e-3
    verdict(8, ok, f"residual {res:.2e}, oracle rel L2 {oracle:.2e}, sigma_min {sol.sigma_min:.3f}")


def test_criterion_9_oracle_order(verdict):
    _, flat = flat_convergence(RHO)
    _, circle = circle_convergence(RHO)
    ratios = flat + circle
    ok = all(3.2 <= r <= 4.8 for r in ratios)
    verdict(9, ok, "ratios " + ", ".join(f"{r:.3f}" for r in ratios))
