from __future__ import annotations

import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twophase.errors import (
    ConfigError,
    DegenerateModeError,
    OutsideSectorError,
    StencilUnderflowError,
)
from twophase.spectral_core import (
    DensityPair,
    ResolventParameter,
    eval_symbols,
    fd_weights,
    residue_check,
    residue_sample,
    sector_check,
    verify_symbol_bounds,
)

SIGMA = math.pi / 4


def test_sector_check_examples():
    assert sector_check(1.0, SIGMA, 0.0)
    assert not sector_check(-2.0, SIGMA, 0.0)
    assert not sector_check(0.5, SIGMA, 1.0)
    assert not sector_check(0.0, SIGMA, 0.0)


def test_resolvent_parameter_rejects_outside_sector():
    with pytest.raises(OutsideSectorError, match="outside sector"):
        ResolventParameter(-1.0 + 1e-3j).require_in_sector()
    with pytest.raises(ConfigError):
        ResolventParameter(1.0, sigma=2.0)


def test_density_pair_must_be_positive():
    with pytest.raises(ConfigError):
        DensityPair(0.0, 1.0)


def test_eval_symbols_examples():
    t = eval_symbols([0.0], 1j, DensityPair(2.0, 2.0))
    assert abs(t.a_plus[0] - (1 + 1j)) < 1e-15
    t = eval_symbols([3.0], 0.0, DensityPair(1.0, 4.0))
    assert t.a_plus[0] == 3 and t.a_minus[0] == 3 and t.denom[0] == 15
    t = eval_symbols([1.0], 3.0, DensityPair(1.0, 1.0))
    assert t.a_plus[0] == 2 and t.denom[0] == 4


def test_degenerate_mode_needs_gauge():
    with pytest.raises(DegenerateModeError, match="degenerate mode"):
        eval_symbols([0.0, 1.0], 0.0, DensityPair(1.0, 1.0))
    t = eval_symbols([0.0, 1.0], 0.0, DensityPair(1.0, 1.0), gauge_zero_mode=True)
    assert t.degenerate.tolist() == [True, False]


lams = st.builds(
    lambda r, frac: r * cmath.exp(1j * frac * (math.pi - SIGMA)),
    st.floats(1e-3, 1e4),
    st.floats(-0.999, 0.999),
)
freqs = st.lists(st.floats(0.0, 1e3), min_size=1, max_size=8)
rhos = st.builds(DensityPair, st.floats(0.1, 10.0), st.floats(0.1, 10.0))


@settings(max_examples=200, deadline=None)
@given(lam=lams, xs=freqs, rho=rhos)
def test_symbols_have_positive_real_part_in_sector(lam, xs, rho):
    t = eval_symbols(xs, lam, rho)
    assert np.all(t.a_plus.real > 0)
    assert np.all(t.a_minus.real > 0)
    assert np.all(t.denom != 0)


@settings(max_examples=100, deadline=None)
@given(xs=st.lists(st.floats(1e-6, 1e3), min_size=1, max_size=8), rho=rhos)
def test_symbols_collapse_at_zero_lambda(xs, rho):
    t = eval_symbols(xs, 0.0, rho)
    assert np.array_equal(t.a_plus, np.asarray(xs, complex))
    assert np.array_equal(t.a_minus, np.asarray(xs, complex))


def test_fd_weights_reproduce_polynomials():
    w = fd_weights(np.arange(-3.0, 4.0), 2)
    x = np.arange(-3.0, 4.0)
    for p in range(6):
        exact = p * (p - 1) * 0.0 ** max(p - 2, 0) if p >= 2 else 0.0
        assert abs(w @ x**p - exact) < 1e-10


def test_symbol_bounds_order_zero_and_one():
    xi = np.geomspace(1e-2, 1e2, 60)
    rho = DensityPair(1.0, 1.0)
    table = eval_symbols(xi, 1.0, rho)
    rep = verify_symbol_bounds(table, 1.0, 1, step=1e-3)
    assert 0 < rep.max_ratio("a_plus", 0) <= 1.0 + 1e-14
    # |d A / d xi| = xi / sqrt(1 + xi^2) < 1
    assert rep.max_ratio("a_plus", 1) < 2.0
    assert rep.richardson_ok


def test_symbol_bounds_negative_power_grid_independent():
    rho = DensityPair(1.0, 1.0)
    observed = []
    for n in (20, 80, 320):
        table = eval_symbols(np.geomspace(1e-2, 1e2, n), 1.0, rho)
        observed.append(verify_symbol_bounds(table, -1.0, 0).max_ratio("a_plus", 0))
    # (1 + xi) / sqrt(1 + xi^2) <= sqrt(2)
    assert max(observed) <= math.sqrt(2) + 1e-12
    assert max(observed) - min(observed) < 2e-2


def test_symbol_bounds_stencil_underflow():
    table = eval_symbols([1e-3], 1.0, DensityPair(1.0, 1.0))
    with pytest.raises(StencilUnderflowError, match="stencil underflow"):
        verify_symbol_bounds(table, 1.0, 2, step=0.9)


def _trapezoid_oracle(integrand, a: float, eps: float) -> float:
    # independent route: brute-force trapezoid of the sine part on the half line
    t = np.linspace(0.0, math.sqrt(60.0 / eps), 400_001)
    vals = integrand(t) * np.sin(a * t)
    return float(np.sum((vals[1:] + vals[:-1]) * np.diff(t)) / 2.0)


def test_residue_first_identity_example():
    res = residue_check(0.0, 1.0, 0.01, 1.0, 1.0)
    closed = -0.5 * math.exp(0.01) * math.exp(-1.0)
    assert abs(res.closed - closed) < 1e-15
    assert abs(closed + 0.18578) < 1e-5
    assert res.err < 1e-8
    brute = -_trapezoid_oracle(lambda t: t * np.exp(-0.01 * t * t) / (1.0 + t * t), 1.0, 0.01) / math.pi
    assert abs(brute - res.numeric.real) < 1e-8


def test_residue_second_identity_example():
    res = residue_check(1.0, 1.0, 0.01, 0.0, 1.0, identity=2)
    assert abs(res.closed.real + math.exp(-1.0) / 2) < 1e-15
    assert abs(res.closed.real + 0.18394) < 1e-5
    assert res.err < 1e-8


def test_residue_at_zero_offset():
    for identity in (1, 2):
        res = residue_check(1.0, 0.0, 0.01, 1.0, 1.0, identity=identity)
        assert res.numeric == 0 and res.closed == 0


def test_residue_odd_in_offset():
    a = residue_check(1.0, 0.7, 0.01, 2.0 + 1.0j, 1.5)
    b = residue_check(1.0, -0.7, 0.01, 2.0 + 1.0j, 1.5)
    assert abs(a.numeric + b.numeric) < 1e-12


def test_residue_rejects_cut_and_bad_eps():
    with pytest.raises(ConfigError):
        residue_check(1.0, 1.0, 0.01, -1.0, 1.0)
    with pytest.raises(ConfigError):
        residue_check(1.0, 1.0, 0.0, 1.0, 1.0)


def test_residue_sample_below_tolerance():
    worst = residue_sample()
    assert set(worst) == {"residue1_max_abs_err", "residue2_max_abs_err"}
    assert max(worst.values()) < 1e-8
