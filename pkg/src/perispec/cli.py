"""Command-line entry point.

Exit codes: 0 success, 2 estimation stopped at max_iterations without
converging, 3 input or argument error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import _fft
from .errors import (
    ConvergenceError,
    DenseCapExceededError,
    EmbeddingFailureError,
    InvalidArgumentError,
    NotPositiveDefiniteError,
    NumericalBreakdownError,
)
from .estimator import run_estimation
from .imputation import Imputer, conditional_sd, simulate_many, stream
from .io import RunConfig, coerce_config, mean_handling, read_config_file, read_grid, read_mask, write_grid
from .lattice import LatticeSpec, build_embedding, embed_mask
from .spectral import MaternParams, check_spectrum
from .study import METHODS, MaternSimulator, SimulationDesign, make_missingness, parse_tau, run_simulation_study, insb_row

log = logging.getLogger("perispec")

EXIT_OK = 0
EXIT_NOT_CONVERGED = 2
EXIT_INPUT = 3
EXIT_NUMERICAL = 4

# RunConfig fields settable by flag; "m" is accepted as an alias of neighbors
CONFIG_FLAGS = {
    "embed_fac": float,
    "burn_iters": int,
    "kern_parm": float,
    "par_spec_fun": str,
    "precond_method": str,
    "neighbors": int,
    "epsilon": float,
    "L": int,
    "seed": int,
    "max_iterations": int,
    "mean": str,
    "pcg_tol": float,
    "pcg_max_iter": int,
}


def _add_config_flags(p, only=None):
    p.add_argument("--config", help="key=value file; flags given on the command line take precedence")
    for name, kind in CONFIG_FLAGS.items():
        if only is not None and name not in only:
            continue
        names = [f"--{name}"]
        if name == "neighbors":
            names.append("--m")
        p.add_argument(*names, dest=name, type=kind, default=None)


def _run_config(args) -> RunConfig:
    raw = read_config_file(args.config) if getattr(args, "config", None) else {}
    for name in CONFIG_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            raw[name] = str(value)
    return coerce_config(raw)


def _load_input(args):
    """Observed values and mask on the observation lattice."""
    values, observed = read_grid(args.input)
    if getattr(args, "observed", None):
        mask = read_mask(args.observed)
        if mask.shape != values.shape:
            raise InvalidArgumentError("mask file and input differ in shape")
        if np.any(mask & ~observed):
            raise InvalidArgumentError("mask marks NA cells as observed")
        observed = mask
        values = np.where(mask, values, np.nan)
    if values.ndim < 1 or not observed.any():
        raise InvalidArgumentError("no observed cells")
    return values, observed


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _restore(field_z, spec: LatticeSpec, model):
    on_y = field_z[spec.obs_slices]
    return on_y + model.evaluate(on_y.shape)


def _fmt(v) -> str:
    return repr(float(v))


def cmd_estimate(args) -> int:
    rc = _run_config(args)
    values, observed = _load_input(args)
    centered, model = mean_handling(values, observed, rc.mean)
    spec = build_embedding(values.shape, rc.embed_fac)
    mask = embed_mask(observed, spec)
    cfg = rc.to_estimator(args.threads)
    log.info("y=%s z=%s n=%d missing=%d", spec.y, spec.z, mask.n, mask.n_missing)
    res = run_estimation(centered[observed], mask, cfg)
    out = _out_dir(args)
    write_grid(out / "spectrum.txt", res.spectrum)
    condexp = _restore(res.condexp, spec, model)
    condsim = _restore(res.condsim, spec, model)
    write_grid(out / "condexp.txt", condexp)
    write_grid(out / "condsim.txt", condsim)
    lines = ["iteration,statistic,theta"]
    for k, (stat, theta) in enumerate(zip(res.trace, res.theta_trace), 1):
        lines.append(f"{k},{_fmt(stat)},{'' if np.isnan(theta) else _fmt(theta)}")
    (out / "convergence.csv").write_text("\n".join(lines) + "\n")
    if args.figures:
        from . import plotting

        plotting.plot_log_spectrum(res.spectrum, out / "spectrum.png")
        if values.ndim == 2:
            plotting.plot_fields({"data": values, "conditional expectation": condexp, "conditional simulation": condsim}, out / "fields.png")
        plotting.plot_convergence(res.trace, rc.epsilon, rc.burn_iters, out / "convergence.png")
    log.info("%s after %d iterations", "converged" if res.converged else "stopped", res.iterations)
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def _imputation_setup(args):
    rc = _run_config(args)
    values, observed = _load_input(args)
    f, ok = read_grid(args.spectrum)
    if not ok.all():
        raise InvalidArgumentError("spectrum file may not contain NA")
    if f.ndim != values.ndim:
        raise InvalidArgumentError("spectrum and input differ in dimension")
    check_spectrum(f)
    spec = LatticeSpec.from_dims(values.shape, f.shape)
    mask = embed_mask(observed, spec)
    centered, model = mean_handling(values, observed, rc.mean)
    cfg = rc.to_estimator(args.threads)
    imputer = Imputer(f, mask, cfg.precond, cfg.pcg)
    return rc, centered[observed], spec, mask, model, imputer


def cmd_condexp(args) -> int:
    _, data, spec, _, model, imputer = _imputation_setup(args)
    res = imputer.conditional_expectation(data)
    out = _out_dir(args)
    field = _restore(res.field, spec, model)
    write_grid(out / "condexp.txt", field)
    if args.figures and field.ndim == 2:
        from . import plotting

        plotting.plot_fields({"conditional expectation": field}, out / "condexp.png")
    return EXIT_OK


def cmd_condsim(args) -> int:
    rc, data, spec, _, model, imputer = _imputation_setup(args)
    sims = simulate_many(imputer, data, rc.L, rc.seed, key=(0,), threads=args.threads)
    out = _out_dir(args)
    panels = {}
    for ell, res in enumerate(sims, 1):
        field = _restore(res.field, spec, model)
        write_grid(out / f"condsim_{ell:03d}.txt", field)
        if ell <= 3:
            panels[f"simulation {ell}"] = field
    if args.figures and spec.d == 2:
        from . import plotting

        plotting.plot_fields(panels, out / "condsim.png")
    return EXIT_OK


def cmd_condsd(args) -> int:
    rc, data, spec, mask, _, imputer = _imputation_setup(args)
    cfg = rc.to_estimator(args.threads)
    sd = conditional_sd(data, mask, imputer.op.eigenvalues, args.n_sims, cfg.precond, cfg.pcg, rc.seed, args.threads)
    grid = np.zeros(spec.z)
    grid.reshape(-1)[mask.mis_idx] = sd
    write_grid(_out_dir(args) / "condsd.txt", grid[spec.obs_slices])
    return EXIT_OK


def cmd_study(args) -> int:
    rows = []
    for setting in args.settings:
        for tau_text in args.taus:
            tau = parse_tau(tau_text)
            log.info("setting %d tau %s", setting, tau)
            values = insb_row(setting, tau, args.iters, tuple(args.grid), args.seed)
            rows.append((setting, tau_text, values))
    header = ["setting", "tau"] + [f"iter{k}" for k in range(args.iters + 1)]
    lines = [",".join(header)]
    for setting, tau, values in rows:
        lines.append(",".join([str(setting), str(tau)] + [f"{v:.6g}" for v in values]))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.figures:
        from . import plotting

        plotting.plot_insb_rows([(f"setting {s}, tau {t}", v) for s, t, v in rows], args.figures)
    return EXIT_OK


def cmd_simulate(args) -> int:
    params = MaternParams(nu=args.nu, range=args.range, variance=args.variance)
    sim = MaternSimulator(params, tuple(args.grid))
    out = _out_dir(args)
    for j in range(args.count):
        rng = stream(args.seed, 1, j)
        field = sim.sample(rng)
        obs = make_missingness(args.setting, field.shape, rng)
        write_grid(out / f"field_{j + 1:03d}.txt", field, obs)
        write_grid(out / f"truth_{j + 1:03d}.txt", field)
    return EXIT_OK


def cmd_simstudy(args) -> int:
    params = MaternParams(nu=args.nu, range=args.range, variance=args.variance)
    design = SimulationDesign(
        y=tuple(args.grid),
        params=params,
        setting=args.setting,
        replicates=args.replicates,
        deltas=tuple(args.deltas),
        tau=args.tau,
        burn_in=args.burn_in,
        epsilon=args.epsilon,
        max_iterations=args.max_iterations,
        seed=args.seed,
        threads=args.threads,
    )
    results = run_simulation_study(design, args.methods)
    header = ["method", "best_delta", "rimse", "converged"] + [f"rimse_{d:g}" for d in design.deltas]
    lines = [",".join(header)]
    for name, r in results.items():
        cells = [name, f"{r.best_delta:g}", f"{r.rimse:.6g}", str(r.converged)]
        cells += [f"{r.rimse_by_delta[d]:.6g}" for d in design.deltas]
        lines.append(",".join(cells))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.figures:
        from . import plotting

        plotting.plot_relative_bias({n: r.bias for n, r in results.items()}, args.figures)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    """Argument errors exit with the input-error code rather than argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="perispec", description="Spectral density estimation for gridded data with missing values.")
    parser.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads for FFTs and simulations")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="estimate the spectrum of a grid with missing values")
    p.add_argument("--input", required=True, help="grid file with NA at missing cells")
    p.add_argument("--observed", help="optional separate mask grid (1/TRUE = observed)")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--figures", action="store_true", help="also write PNG figures into the output directory")
    _add_config_flags(p)
    p.set_defaults(func=cmd_estimate)

    for name, func, help_ in (
        ("condexp", cmd_condexp, "conditional expectation under a given spectrum"),
        ("condsim", cmd_condsim, "L conditional simulations under a given spectrum"),
        ("condsd", cmd_condsd, "Monte Carlo conditional standard deviation"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--input", required=True)
        p.add_argument("--observed")
        p.add_argument("--spectrum", required=True, help="spectrum grid on the embedding lattice")
        p.add_argument("--out-dir", default=".")
        if name == "condsd":
            p.add_argument("--n-sims", type=int, default=30)
        else:
            p.add_argument("--figures", action="store_true")
        _add_config_flags(p, only={"precond_method", "neighbors", "L", "seed", "mean", "pcg_tol", "pcg_max_iter"})
        p.set_defaults(func=func)

    p = sub.add_parser("study", help="dense bias study (INSB by iteration)")
    p.add_argument("--settings", type=int, nargs="+", default=[3])
    p.add_argument("--taus", nargs="+", default=["32/32", "34/32", "36/32", "38/32", "40/32"])
    p.add_argument("--iters", type=int, default=6)
    p.add_argument("--grid", type=int, nargs="+", default=[32, 32])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV path (default: standard output)")
    p.add_argument("--figures", help="PNG path for the INSB plot")
    p.set_defaults(func=cmd_study)

    def matern_flags(q):
        q.add_argument("--grid", type=int, nargs="+", default=[40, 40])
        q.add_argument("--nu", type=float, default=0.5)
        q.add_argument("--range", type=float, default=8.0)
        q.add_argument("--variance", type=float, default=2.0)
        q.add_argument("--setting", type=int, choices=(1, 2, 3), default=1)
        q.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("simulate", help="simulate Matern fields with missing cells")
    matern_flags(p)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("simstudy", help="compare estimators on simulated fields (RIMSE table)")
    matern_flags(p)
    p.add_argument("--replicates", type=int, default=20)
    p.add_argument("--deltas", type=float, nargs="+", default=list(SimulationDesign.deltas))
    p.add_argument("--tau", type=float, default=1.2)
    p.add_argument("--burn-in", type=int, default=100)
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--max-iterations", type=int, default=1000)
    p.add_argument("--methods", nargs="+", choices=METHODS, default=list(METHODS))
    p.add_argument("--out", help="CSV path (default: standard output)")
    p.add_argument("--figures", help="PNG path for the relative bias maps")
    p.set_defaults(func=cmd_simstudy)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    _fft.set_workers(args.threads)
    try:
        return args.func(args)
    except (InvalidArgumentError, DenseCapExceededError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except (ConvergenceError, NotPositiveDefiniteError, NumericalBreakdownError, EmbeddingFailureError, ArithmeticError, np.linalg.LinAlgError) as exc:
        log.error("%s", exc)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
