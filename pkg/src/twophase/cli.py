"""Command-line entry point: ``twophase <subcommand> [flags]``.

Every subcommand writes ``report.txt`` (sorted key=value lines, floats with
17 significant digits) into ``--out`` and, where it makes sense, field dumps
and CSV slices.  Settings come from, in increasing precedence: built-in
defaults, the ``--config`` file, ``TWOPHASE_*`` environment variables and
explicit flags.

Config files hold ``key = value`` lines; ``[section]`` headers prefix the
keys that follow with ``section.``.  The environment variable
``TWOPHASE_TOL__RESIDUE`` sets ``tol.residue`` (double underscore for the dot).

Exit codes: 0 all asserted invariants hold, 1 invalid configuration,
2 invariant failure, 3 solver failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import math
import os
import sys
import time
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigError, InvariantError, TwoPhaseError
from .fields import TwoPhaseGrid, TwoPhaseVectorField, l2_norm, load_field, save_field, write_dump
from .spectral_core import DensityPair

ENV_PREFIX = "TWOPHASE_"

DEFAULTS: dict[str, str] = {
    "grid": "64x257",
    "extent": "20",
    "period": "6.283185307179586",
    "lambda": "0,0",
    "rho": "1,3",
    "seed": "0",
    "sigma": "0.7853981633974483",
    "data": "manufactured",
    "order": "7",
    # bent
    "bent.profile": "shear",
    "bent.amplitude": "0.1",
    "bent.extent": "8",
    # compact
    "compact.R": "1",
    "compact.interface_radius": "0.5",
    "compact.steps_per_R": "20",
    "compact.n_theta": "128",
    "compact.outer_factor": "6",
    "compact.inversion": "dense",
    "compact.samples": "20",
    # helmholtz
    "helmholtz.samples": "1",
    "helmholtz.extent": "22",
    "helmholtz.normal_points": "513",
    # oracle
    "oracle.geometry": "flat",
    # tolerances
    "tol.residue": "1e-8",
    "tol.flat": "1e-6",
    "tol.jump": "1e-9",
    "tol.helmholtz": "1e-8",
    "tol.gradient": "1e-10",
    "tol.null": "1e-10",
    "tol.bent": "1e-6",
    "tol.bent_jump": "1e-8",
    "tol.mean": "1e-8",
    "tol.compact": "1e-3",
    "tol.compact_oracle": "5e-3",
    "tol.sigma_min": "1e-3",
    "tol.order_low": "3.2",
    "tol.order_high": "4.8",
}


# ------------------------------------------------------------------- config


def read_config(path: str | Path) -> dict[str, str]:
    text = Path(path).read_text(encoding="utf-8")
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string("[__top__]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc.message.splitlines()[0]}") from None
    out = {}
    for section in parser.sections():
        prefix = "" if section == "__top__" else section + "."
        for key, value in parser.items(section):
            out[prefix + key] = value.strip()
    return out


def gather_settings(args: argparse.Namespace, environ: dict[str, str] | None = None) -> dict[str, str]:
    settings = dict(DEFAULTS)
    if args.config:
        settings.update(read_config(args.config))
    environ = os.environ if environ is None else environ
    for key, value in environ.items():
        if key.startswith(ENV_PREFIX):
            settings[key[len(ENV_PREFIX):].lower().replace("__", ".")] = value
    for flag in ("grid", "lambda", "rho", "seed"):
        value = getattr(args, flag.replace("lambda", "lam"), None)
        if value is not None:
            settings[flag] = str(value)
    return settings


class Settings:
    """Typed access to the merged settings with one-line diagnostics on bad values."""

    def __init__(self, raw: dict[str, str]) -> None:
        self.raw = raw

    def text(self, key: str) -> str:
        if key not in self.raw:
            raise ConfigError(f"missing setting {key!r}")
        return self.raw[key]

    def num(self, key: str) -> float:
        try:
            return float(self.text(key))
        except ValueError:
            raise ConfigError(f"setting {key!r} is not a number: {self.raw[key]!r}") from None

    def int(self, key: str) -> int:
        val = self.num(key)
        if val != int(val):
            raise ConfigError(f"setting {key!r} must be an integer")
        return int(val)

    def pair(self, key: str) -> tuple[float, float]:
        parts = self.text(key).split(",")
        if len(parts) != 2:
            raise ConfigError(f"setting {key!r} needs two comma-separated numbers")
        try:
            return float(parts[0]), float(parts[1])
        except ValueError:
            raise ConfigError(f"setting {key!r} is not a number pair: {self.raw[key]!r}") from None

    def grid_shape(self) -> tuple[int, int]:
        parts = self.text("grid").lower().split("x")
        if len(parts) != 2 or not all(p.isdigit() for p in parts):
            raise ConfigError(f"grid must look like NxM, got {self.raw['grid']!r}")
        return int(parts[0]), int(parts[1])

    def rho(self) -> DensityPair:
        return DensityPair(*self.pair("rho"))

    def lam(self) -> complex:
        re, im = self.pair("lambda")
        return complex(re, im)

    def flat_grid(self, extent_key: str = "extent") -> TwoPhaseGrid:
        n, m = self.grid_shape()
        return TwoPhaseGrid(2, n, self.num("period"), self.num(extent_key), m)


# ------------------------------------------------------------------- output


def fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (complex, np.complexfloating)):
        value = complex(value)
        if value.imag == 0:
            return fmt(value.real)
        return f"{value.real + 0.0:.17g}{value.imag + 0.0:+.17g}j"
    if isinstance(value, (float, np.floating)):
        return f"{float(value) + 0.0:.17g}"
    return str(value)


class Report:
    def __init__(self, out: Path) -> None:
        self.out = out
        self.values: dict[str, object] = {}
        self.failures: list[str] = []

    def __setitem__(self, key: str, value) -> None:
        self.values[key] = value

    def check(self, name: str, value: float, bound: float, *, below: bool = True) -> None:
        self.values[name] = value
        ok = value < bound if below else value > bound
        if not ok or not math.isfinite(value):
            self.failures.append(f"{name}={fmt(value)} (bound {fmt(bound)})")

    def check_range(self, name: str, value: float, low: float, high: float) -> None:
        self.values[name] = value
        if not low <= value <= high:
            self.failures.append(f"{name}={fmt(value)} (range [{fmt(low)}, {fmt(high)}])")

    def write(self) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        self.values["status"] = "fail" if self.failures else "pass"
        lines = [f"{k}={fmt(self.values[k])}" for k in sorted(self.values)]
        (self.out / "report.txt").write_text("\n".join(lines) + "\n", encoding="ascii")


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) for x in row])


def _flat_slice(path: Path, v) -> None:
    grid = v.grid
    y = grid.y
    rows = [(-yy, vm.real, vm.imag) for yy, vm in zip(y[::-1], v.minus[0][::-1])]
    rows += [(yy, vp.real, vp.imag) for yy, vp in zip(y, v.plus[0])]
    write_csv(path, ["x_N", "re_v", "im_v"], rows)


# ------------------------------------------------------------ subcommands


def cmd_verify_residues(s: Settings, rep: Report) -> None:
    from .spectral_core import residue_sample

    start = time.perf_counter()
    tol = s.num("tol.residue")
    for key, val in residue_sample(s.rho().rho_plus, tol).items():
        rep.check(key, val, tol)
    # wall time goes to stdout only, so reports stay byte-identical across runs
    print(f"verify-residues: {time.perf_counter() - start:.2f} s")


def cmd_verify_symbols(s: Settings, rep: Report) -> None:
    from .spectral_core import eval_symbols, verify_symbol_bounds

    rho = s.rho()
    lam = s.lam()
    if lam == 0:
        lam = 1.0
    xi = np.linspace(0.25, 8.0, 32)
    freqs = xi.reshape(-1, 1)
    table = eval_symbols(freqs, lam, rho)
    rep.check("min_re_a", float(min(table.a_plus.real.min(), table.a_minus.real.min())), 0.0, below=False)
    rep.check("min_abs_denom", float(np.abs(table.denom).min()), 0.0, below=False)
    zero = eval_symbols(freqs, 0.0, rho)
    rep.check("lambda0_collapse_err", float(np.max(np.abs(zero.a_plus - xi)) + np.max(np.abs(zero.a_minus - xi))), 1e-300)
    report = verify_symbol_bounds(table, 1.0, 2)
    for order in range(3):
        rep[f"a_plus_ratio_order{order}"] = report.max_ratio("a_plus", order)
        rep[f"denom_ratio_order{order}"] = report.max_ratio("denom", order)
    rep["richardson_consistent"] = report.richardson_ok


def _flat_data(s: Settings, grid: TwoPhaseGrid, rho: DensityPair, lam: complex):
    from .halfspace_solver import manufactured_flat

    kind = s.text("data")
    if kind == "manufactured":
        return manufactured_flat(grid, rho, lam)
    if kind == "zero":
        return None, None, None
    path = Path(kind)
    if not path.exists():
        raise ConfigError(f"data must be 'manufactured', 'zero' or a dump path, got {kind!r}")
    f = load_field(path)
    if not isinstance(f, TwoPhaseVectorField):
        raise ConfigError(f"{path}: expected a vector field dump")
    return None, f, None


def cmd_solve_flat(s: Settings, rep: Report) -> None:
    from .halfspace_solver import solve_flat

    rho = s.rho()
    lam = s.lam()
    grid = s.flat_grid() if s.text("data") in ("manufactured", "zero") else None
    exact, f, g = _flat_data(s, grid, rho, lam)
    grid = f.grid if f is not None else grid
    sol = solve_flat(f, g, None, lam, rho, grid=grid, order=s.int("order"), return_solution=True)
    v = sol.v
    rep["gauge_constant"] = complex(sol.gauge_constant)
    rep.check("transmission_residual", float(np.max(np.abs(rho.rho_plus * v.plus[..., 0] - rho.rho_minus * v.minus[..., 0]))),
              s.num("tol.jump"))
    dn = sol.gradient.plus[-1][..., 0] - sol.gradient.minus[-1][..., 0]
    target = 0 if f is None else f.plus[-1][..., 0] - f.minus[-1][..., 0]
    rep.check("flux_residual", float(np.max(np.abs(dn - target))), s.num("tol.jump"))
    if exact is not None:
        rep.check("rel_l2_error", l2_norm(v - exact) / l2_norm(exact), s.num("tol.flat"))
    else:
        rep["v_l2"] = l2_norm(v)
    save_field(rep.out / "v.dump", v)
    _flat_slice(rep.out / "v_slice.csv", v)


def cmd_solve_resolvent(s: Settings, rep: Report) -> None:
    from .halfspace_solver import manufactured_flat, resolvent_estimate_ratio, solve_flat

    rho = s.rho()
    sigma = s.num("sigma")
    grid = s.flat_grid()
    rows = []
    ratios = []
    worst = 0.0
    for mag in (1.0, 10.0, 100.0):
        for theta in (0.0, math.pi - sigma - 0.1, -(math.pi - sigma - 0.1)):
            lam = mag * complex(math.cos(theta), math.sin(theta))
            v, f, g = manufactured_flat(grid, rho, lam)
            sol = solve_flat(f, g, None, lam, rho, grid=grid, order=s.int("order"))
            err = l2_norm(sol - v) / l2_norm(v)
            ratio = resolvent_estimate_ratio(sol, f, g, None, lam)
            worst = max(worst, err)
            ratios.append(ratio)
            rows.append((mag, theta, err, ratio))
    med = float(np.median(ratios))
    rep.check("max_rel_l2_error", worst, s.num("tol.flat"))
    rep["ratio_median"] = med
    rep.check("ratio_max_over_median", max(ratios) / med, 10.0)
    write_csv(rep.out / "resolvent_sweep.csv", ["abs_lambda", "theta", "rel_l2_error", "estimate_ratio"], rows)


def cmd_solve_bent(s: Settings, rep: Report) -> None:
    from .bent_solver import build_map, manufactured_bent, solve_bent

    rho = s.rho()
    lam = s.lam()
    n, m = s.grid_shape()
    grid = TwoPhaseGrid(2, n, s.num("period"), s.num("bent.extent"), m)
    phi = build_map(s.text("bent.profile"), s.num("bent.amplitude"), grid=grid)
    f_t, g_t, exact = manufactured_bent(grid, phi, rho, lam)
    sol = solve_bent(f_t, g_t, None, lam, phi, rho, grid=grid, order=s.int("order"))
    rep["m1"] = phi.m1
    rep["m2"] = phi.m2
    rep["iterations"] = sol.iterations
    later = [r for it, _, r in sol.history if it >= 2 and not math.isnan(r)]
    rep.check("max_increment_ratio", max(later) if later else 0.0, 0.5)
    rep.check("transmission_residual", sol.transmission_residual, s.num("tol.bent_jump"))
    rep.check("flux_residual", sol.flux_residual, s.num("tol.bent_jump"))
    rep.check("rel_l2_error", l2_norm(sol.v - exact) / l2_norm(exact), s.num("tol.bent"))
    write_csv(rep.out / "iterations.csv", ["iteration", "relative_increment", "increment_ratio"], sol.history)
    save_field(rep.out / "v.dump", sol.v)


def _compact_setup(s: Settings):
    from .compact_interface import CompactOperators, build_cutoff_ladder, default_polar_grid

    R = s.num("compact.R")
    grid = default_polar_grid(R, s.num("compact.interface_radius"), s.int("compact.steps_per_R"),
                              s.int("compact.n_theta"), s.num("compact.outer_factor"))
    ladder = build_cutoff_ladder(R, grid=grid)
    return CompactOperators(grid, s.rho(), ladder)


def compact_manufactured(grid, rho: DensityPair):
    """v* = q / rho_pm with q = (x^2 - y^2 + x/2) exp(-|x|^2) and f = grad v*."""
    from .fd_oracle import PolarField, vector_from_functions

    def q(x, y):
        return (x * x - y * y + 0.5 * x) * np.exp(-(x * x + y * y))

    def qx(x, y):
        return (2 * x + 0.5 - 2 * x * (x * x - y * y + 0.5 * x)) * np.exp(-(x * x + y * y))

    def qy(x, y):
        return (-2 * y - 2 * y * (x * x - y * y + 0.5 * x)) * np.exp(-(x * x + y * y))

    rp, rm = rho.rho_plus, rho.rho_minus
    f = vector_from_functions(
        grid, (lambda x, y: qx(x, y) / rp, lambda x, y: qy(x, y) / rp), (lambda x, y: qx(x, y) / rm, lambda x, y: qy(x, y) / rm)
    )
    f[:, -2:] = 0.0
    exact = PolarField.from_functions(grid, lambda x, y: q(x, y) / rp, lambda x, y: q(x, y) / rm)
    return exact, f


def cmd_solve_compact(s: Settings, rep: Report) -> None:
    from .compact_interface import oracle_comparison, solve_compact

    ops = _compact_setup(s)
    rho = s.rho()
    exact, f = compact_manufactured(ops.grid, rho)
    sol = solve_compact(f, rho, inversion=s.text("compact.inversion"), operators=ops)
    tol = s.num("tol.compact")
    for key, val in sol.residuals.items():
        rep.check(f"residual_{key}", val, tol)
    for key, val in sol.invariants.items():
        rep[key] = val
    if sol.sigma_min is not None:
        rep.check("sigma_min", sol.sigma_min, s.num("tol.sigma_min"), below=False)
    rep["krylov_applications"] = sol.applications
    rep.check("manufactured_rel_max_error", float(np.max(np.abs(sol.v.values - exact.values)) / np.max(np.abs(exact.values))), tol)
    R = ops.ladder.base_radius
    rep.check("oracle_rel_l2_B2R", oracle_comparison(sol, f, rho, 2.0 * R), s.num("tol.compact_oracle"))
    g = ops.grid
    write_dump(rep.out / "v.dump", {"geometry": "polar", "outer_radius": fmt(g.outer_radius),
                                    "interface_radius": fmt(g.interface_radius), "radial_step": fmt(g.radial_step),
                                    "n_theta": str(g.n_theta), "phase": "slots"}, [sol.v.values])
    write_csv(rep.out / "v_ray.csv", ["r", "side", "v"],
              [(r, "inner" if inner else "outer", val) for r, inner, val in zip(g.r, g.inner, sol.v.values[:, 0].real)])


def cmd_helmholtz(s: Settings, rep: Report) -> None:
    from .helmholtz import TestGradientBasis, decompose, random_band_limited

    rho = s.rho()
    kind = s.text("data")
    samples = []
    if kind in ("manufactured", "random"):
        n, _ = s.grid_shape()
        grid = TwoPhaseGrid(2, n, s.num("period"), s.num("helmholtz.extent"), s.int("helmholtz.normal_points"))
        rng = np.random.default_rng(s.int("seed"))
        samples = [random_band_limited(grid, rng) for _ in range(s.int("helmholtz.samples"))]
    else:
        path = Path(kind)
        if not path.exists():
            raise ConfigError(f"helmholtz data must be 'random' or a vector dump path, got {kind!r}")
        f = load_field(path)
        if not isinstance(f, TwoPhaseVectorField):
            raise ConfigError(f"{path}: expected a vector field dump")
        samples = [f]
    basis = TestGradientBasis(samples[0].grid)
    worst = {"recon": 0.0, "idem": 0.0, "orth": 0.0}
    p_rel = 0.0
    for f in samples:
        p, q = decompose(f, rho)
        nf = l2_norm(f)
        worst["recon"] = max(worst["recon"], l2_norm(f - p - q) / nf)
        p2, _ = decompose(p, rho)
        worst["idem"] = max(worst["idem"], l2_norm(p2 - p) / nf)
        worst["orth"] = max(worst["orth"], basis.max_relative(p, nf))
        p_rel = max(p_rel, l2_norm(p) / nf)
    tol = s.num("tol.helmholtz")
    rep.check("reconstruction_rel", worst["recon"], tol)
    rep.check("idempotence_rel", worst["idem"], tol)
    rep.check("orthogonality_rel", worst["orth"], tol)
    rep["p_norm"] = p_rel
    if kind not in ("manufactured", "random"):
        save_field(rep.out / "p.dump", p)
        save_field(rep.out / "q.dump", q)


def cmd_oracle(s: Settings, rep: Report) -> None:
    from .fd_oracle import circle_convergence, flat_convergence

    rho = s.rho()
    geometry = s.text("oracle.geometry")
    lo, hi = s.num("tol.order_low"), s.num("tol.order_high")
    todo = ("flat", "circle") if geometry == "both" else (geometry,)
    for geo in todo:
        if geo == "flat":
            errors, ratios = flat_convergence(rho)
        elif geo == "circle":
            errors, ratios = circle_convergence(rho)
        else:
            raise ConfigError(f"oracle.geometry must be flat, circle or both, got {geo!r}")
        for i, e in enumerate(errors):
            rep[f"{geo}_error_level{i}"] = e
        for i, r in enumerate(ratios):
            rep.check_range(f"{geo}_ratio{i}", r, lo, hi)
        write_csv(rep.out / f"{geo}_convergence.csv", ["level", "max_error"], list(enumerate(errors)))


def cmd_invariants(s: Settings, rep: Report) -> None:
    ops = _compact_setup(s)
    g = ops.grid
    rng = np.random.default_rng(s.int("seed"))
    count = s.int("compact.samples")
    r_worst = g_worst = 0.0
    support = 0.0
    x, y = g.cartesian()
    for _ in range(count):
        c = rng.standard_normal(8)
        env = np.exp(-((np.hypot(x, y) - 1.5) / 0.6) ** 2)
        f = np.stack([env * (c[0] + c[1] * x + c[2] * y * y + c[3] * np.sin(2 * x)),
                      env * (c[4] + c[5] * y + c[6] * x * y + c[7] * np.cos(3 * y))])
        f[:, 0] = f[:, 0, :1]
        f[:, -2:] = 0.0
        fn = float(np.sqrt(np.sum(ops.areas[None, :, None] * f**2)))
        _, parts = ops.apply_S(f)
        rem = ops.remainder_R(f, parts)
        r_worst = max(r_worst, rem.raw_mean / fn)
        support = max(support, float(np.max(np.abs(rem.values[~ops.support]), initial=0.0)))
        src = np.where(ops.support[:, None], rng.standard_normal((g.n_slots, g.n_theta)), 0.0)
        src[ops.support] -= ops.integral(src).real / np.sum(ops.areas[ops.support] * g.n_theta)
        out = ops.operator_G(src)
        g_worst = max(g_worst, out.raw_mean / ops.norm(src))
        support = max(support, float(np.max(np.abs(out.values[~ops.support]), initial=0.0)))
    tol = s.num("tol.mean")
    rep.check("R_mean_rel_max", r_worst, tol)
    rep.check("G_mean_rel_max", g_worst, tol)
    rep.check("support_violation", support, 1e-300)
    rep["samples"] = count


COMMANDS: dict[str, Callable[[Settings, Report], None]] = {
    "solve-flat": cmd_solve_flat,
    "solve-resolvent": cmd_solve_resolvent,
    "solve-bent": cmd_solve_bent,
    "solve-compact": cmd_solve_compact,
    "helmholtz": cmd_helmholtz,
    "oracle": cmd_oracle,
    "verify-symbols": cmd_verify_symbols,
    "verify-residues": cmd_verify_residues,
    "invariants": cmd_invariants,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twophase", description="Two-phase transmission solvers and checks.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="key=value settings file")
    parser.add_argument("--out", default="twophase-out", help="output directory")
    parser.add_argument("--grid", help="NxM: tangential x normal points")
    parser.add_argument("--lambda", dest="lam", help="RE,IM")
    parser.add_argument("--rho", help="R+,R-")
    parser.add_argument("--seed", type=int)
    return parser


def main(argv: list[str] | None = None, environ: dict[str, str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    rep = Report(Path(args.out))
    try:
        rep.out.mkdir(parents=True, exist_ok=True)
        settings = Settings(gather_settings(args, environ))
        COMMANDS[args.command](settings, rep)
    except TwoPhaseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    rep.write()
    if rep.failures:
        print("invariant failure: " + "; ".join(rep.failures), file=sys.stderr)
        return InvariantError.exit_code
    print(f"{args.command}: pass ({rep.out / 'report.txt'})")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
