"""Command-line front end.

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 failed check.
Logging goes to stderr at the level named by ``THINTUBE_LOG``
(``quiet``, ``info`` or ``debug``; default ``info``).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .errors import IrregularCurveError, NumericalError, ThinTubeError
from .forward import FarFieldGrid, QuadratureRule, far_field
from .geometry import (NAMED_CURVES, CurveSpline, curve_diameter, curve_distance,
                       named_spline)
from .inverse import (ResidualModel, SolverConfig, add_noise, check_jacobian,
                      reconstruct, taylor_order)
from .io import (EXAMPLE_MATERIALS, RunConfig, export_convergence_series, fmt,
                 read_config, read_curve, read_far_field, write_curve,
                 write_far_field, write_iteration_log)
from .polarization import disk_tensor, numeric_cross_section_tensor

log = logging.getLogger("thintube")

EXIT_INPUT, EXIT_NUMERICAL, EXIT_CHECK = 2, 3, 4
LOG_LEVELS = {"quiet": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
DERIVATIVE_TOLERANCE = 1e-5
CONVERGENCE_M = (3, 5, 9, 17, 33)
REFERENCE_M = 65


class InputError(ThinTubeError, ValueError):
    """A command-line argument does not name a usable file or curve."""


def _config(arg: Optional[str], default: Optional[RunConfig] = None) -> RunConfig:
    """A config file, a built-in example name, or the default settings."""
    if arg is None:
        return default or RunConfig()
    if Path(arg).is_file():
        return read_config(arg)
    if arg in EXAMPLE_MATERIALS:
        return RunConfig.example(arg)
    raise InputError(f"{arg!r} is neither a config file nor one of {sorted(EXAMPLE_MATERIALS)}")


def _curve(arg: Optional[str], cfg: RunConfig) -> CurveSpline:
    name = arg or cfg.curve
    if Path(name).is_file():
        return read_curve(name)
    if name in NAMED_CURVES:
        return named_spline(name, cfg.n)
    raise InputError(f"{name!r} is neither a curve file nor one of {sorted(NAMED_CURVES)}")


def _require(args, *names):
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n) is None]
    if missing:
        raise InputError(f"{args.command} requires {', '.join(missing)}")


def cmd_forward(args) -> int:
    _require(args, "out")
    cfg = _config(args.config)
    spline = _curve(args.curve, cfg)
    material, wave = cfg.build_material(), cfg.build_wave()
    grid = FarFieldGrid(cfg.N)
    quad = QuadratureRule.for_spline(spline, cfg.data_M)
    E = far_field(spline, material, wave, grid, quad, workers=args.workers)
    write_far_field(args.out, grid.with_samples(E), wave, material)
    log.info("wrote %d far-field samples (k = %.6g) to %s", grid.size, wave.k, args.out)
    return 0


def cmd_noise(args) -> int:
    _require(args, "data", "level", "out")
    data = read_far_field(args.data)
    noisy = add_noise(data.grid, args.level, seed=args.seed)
    write_far_field(args.out, noisy, data.wave, data.material)
    log.info("added %g relative noise (seed %s) to %s", args.level, args.seed, args.out)
    return 0


def _check_consistent(cfg: RunConfig, data) -> None:
    material, wave = cfg.build_material(), cfg.build_wave()
    pairs = [("k", wave.k, data.wave.k), ("eps_r", material.eps_r, data.material.eps_r),
             ("mu_r", material.mu_r, data.material.mu_r), ("rho", material.rho, data.material.rho)]
    for name, a, b in pairs:
        if abs(a - b) > 1e-9 * max(abs(a), abs(b)):
            raise InputError(f"{name} differs between config ({a}) and data file ({b})")
    if not (np.allclose(wave.theta, data.wave.theta, atol=1e-12)
            and np.allclose(wave.A, data.wave.A, atol=1e-12)):
        raise InputError("incident wave differs between config and data file")
    if cfg.N != data.grid.N:
        raise InputError(f"config grid N = {cfg.N} but data file has N = {data.grid.N}")


def cmd_reconstruct(args) -> int:
    _require(args, "data", "out")
    cfg = _config(args.config)
    data = read_far_field(args.data)
    _check_consistent(cfg, data)
    initial = cfg.initial_spline()
    quad = QuadratureRule.for_spline(initial, cfg.M)
    solver = SolverConfig(cfg.alpha1, cfg.alpha2, cfg.s_max, cfg.line_search_steps,
                          cfg.max_iterations, improvement=cfg.improvement)
    result = reconstruct(initial, data.material, data.wave, data.grid, quad, solver,
                         workers=args.workers)
    prefix = args.out
    write_iteration_log(f"{prefix}.log.jsonl", result.records)
    write_curve(f"{prefix}.curve", result.spline)
    last = result.records[-1] if result.records else None
    log.info("%d iterations, %d accepted steps, last event %s",
             len(result.records), result.accepted_steps, last.event if last else "none")
    if cfg.curve in NAMED_CURVES:
        target = NAMED_CURVES[cfg.curve][0]
        diam = curve_diameter(target(np.linspace(0.0, 1.0, 200)))
        log.info("relative distance to %s: %.4g", cfg.curve, curve_distance(result.spline, target) / diam)
    return 0


def _random_instance(cfg: RunConfig, rng: np.random.Generator):
    """A perturbed copy of the config curve, and far-field data from another one."""
    base = _curve(None, cfg) if cfg.curve in NAMED_CURVES else named_spline("helix", cfg.n)
    pts = base.coefficients.reshape(-1, 3)
    scale = 0.05 * curve_diameter(pts)

    def perturbed():
        p = pts + scale * rng.standard_normal(pts.shape)
        if base.closed:
            p[-1] = p[0]
        return base.with_points(p)

    return perturbed(), perturbed()


def cmd_check_derivatives(args) -> int:
    cfg = _config(args.config, RunConfig(N=4, M=5, n=8, curve="helix", initial="helix"))
    rng = np.random.default_rng(args.seed)
    material, wave = cfg.build_material(), cfg.build_wave()
    spline, truth = _random_instance(cfg, rng)
    grid = FarFieldGrid(cfg.N)
    quad = QuadratureRule.for_spline(spline, cfg.M)
    data = grid.with_samples(far_field(truth, material, wave, grid, quad))
    model = ResidualModel(spline, material, wave, data, quad, workers=args.workers)
    a1, a2 = rng.uniform(0.1, 1.0, size=2)
    errors = check_jacobian(model, spline.coefficients, a1, a2)
    h = rng.standard_normal((spline.n, 3))
    if spline.closed:
        h[-1] = h[0]
    order = taylor_order(spline, material, wave, grid, quad, h)
    ok = max(errors.values()) < DERIVATIVE_TOLERANCE and order >= 1.9
    for name, err in errors.items():
        print(f"jacobian {name:<10} max relative column error {err:.3e}")
    print(f"frechet taylor order {order:.3f}")
    print("PASS" if ok else "FAIL")
    return 0 if ok else EXIT_CHECK


def cmd_polarization(args) -> int:
    if args.mode == "disk":
        m = disk_tensor(args.gamma0, args.gamma1)
    else:
        m = numeric_cross_section_tensor(gamma0=args.gamma0, gamma1=args.gamma1,
                                         resolution=args.resolution)
    for row in m:
        print(" ".join(fmt(v) for v in row))
    return 0


def cmd_convergence(args) -> int:
    _require(args, "out")
    cfg = _config(args.config)
    spline = _curve(args.curve, cfg)
    material, wave = cfg.build_material(), cfg.build_wave()
    grid = FarFieldGrid(cfg.N)

    def sample(M):
        return far_field(spline, material, wave, grid, QuadratureRule.for_spline(spline, M),
                         workers=args.workers)

    reference = sample(REFERENCE_M)
    runs = [(M, sample(M)) for M in CONVERGENCE_M]
    series = export_convergence_series(args.out, grid, runs, reference,
                                       label=f"RelDiff vs Simpson nodes M (reference M = {REFERENCE_M})")
    print(f"slope {series.slope:.3f}" if series.slope is not None else "slope undefined")
    return 0


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thintube", allow_abbrev=False,
        description="Far fields of thin tubular scatterers and reconstruction of their center curves.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, func, help, *flags):
        p = sub.add_parser(name, help=help, description=help, allow_abbrev=False)
        if "config" in flags:
            p.add_argument("--config", help="JSON run configuration, or a built-in example name "
                           f"({', '.join(sorted(EXAMPLE_MATERIALS))})")
        if "curve" in flags:
            p.add_argument("--curve", help="curve file or built-in curve name; defaults to the config curve")
        if "data" in flags:
            p.add_argument("--data", help="far-field file")
        if "out" in flags:
            p.add_argument("--out", help="output path (prefix for reconstruct)")
        if "seed" in flags:
            p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
        if "level" in flags:
            p.add_argument("--level", type=float, help="relative noise level, e.g. 0.3")
        if "workers" in flags:
            p.add_argument("--workers", type=_positive_int, default=1,
                           help="threads for far-field assembly; results do not depend on it")
        p.set_defaults(func=func)
        return p

    add("forward", cmd_forward, "synthesize far-field data for a curve",
        "config", "curve", "out", "workers")
    add("noise", cmd_noise, "add calibrated uniform complex noise to far-field data",
        "data", "level", "seed", "out")
    add("reconstruct", cmd_reconstruct, "reconstruct the center curve from far-field data",
        "config", "data", "out", "workers")
    add("check-derivatives", cmd_check_derivatives,
        "compare analytic derivatives with finite differences on a random instance",
        "config", "seed", "workers")
    p = add("polarization", cmd_polarization, "print the 2x2 cross-section tensor of the unit disk")
    p.add_argument("gamma0", type=float, help="exterior material parameter")
    p.add_argument("gamma1", type=float, help="interior material parameter")
    p.add_argument("mode", choices=("disk", "numeric"), help="closed form or finite-difference solve")
    p.add_argument("--resolution", type=_positive_int, default=400,
                   help="grid cells per side for numeric mode (default 400)")
    add("convergence", cmd_convergence,
        "export the far-field RelDiff series under Simpson refinement",
        "config", "curve", "out", "workers")
    return parser


def _setup_logging() -> None:
    level = os.environ.get("THINTUBE_LOG", "info").strip().lower()
    if level not in LOG_LEVELS:
        raise InputError(f"THINTUBE_LOG must be one of {sorted(LOG_LEVELS)}, got {level!r}")
    root = logging.getLogger("thintube")
    root.handlers.clear()
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root.addHandler(handler)
    root.setLevel(LOG_LEVELS[level])
    root.propagate = False


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _setup_logging()
        return args.func(args)
    except (IrregularCurveError, NumericalError, FloatingPointError) as exc:
        print(f"thintube {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ThinTubeError, ValueError, OSError) as exc:
        print(f"thintube {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
