"""Command-line interface: ``wfcoupled <command> model.json [options]``.

Exit status is 0 on success, 1 when the model or a verification fails and
2 on usage errors.  All random output is determined by ``--seed``.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import harness
from ._random import derived_rng
from .chain import chain_params_from_diffusion, simulate_chain
from .diffusion import DEFAULT_DT, simulate_sde
from .errors import WFError
from .model import FrequencyState, load_model, model_edges, random_interior_state, to_dot
from .stationary import (
    StationaryDensity,
    flow_residual,
    log_density_unnormalized,
)
from .trajectory import Trajectory

FLOW_TOL = 1e-8


class UsageError(Exception):
    pass


def parse_state(model, text: str | None) -> np.ndarray:
    """``"0.2,0.8;0.7,0.3"`` (one group per locus) or a flat augmented/reduced list."""
    if text is None:
        return FrequencyState.uniform(model).augmented
    try:
        if ";" in text:
            groups = [np.array([float(v) for v in g.split(",")]) for g in text.split(";")]
            return FrequencyState(tuple(groups)).augmented
        vals = np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise UsageError(f"cannot parse state {text!r}: {exc}") from None
    if vals.size == model.dim:
        return FrequencyState.from_augmented(model, vals).augmented
    if vals.size == model.reduced_dim:
        return FrequencyState.from_reduced(model, vals).augmented
    raise UsageError(f"state has {vals.size} values; expected {model.dim} or {model.reduced_dim}")


def _write(text: str, out):
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_validate(model, args):
    edges = model_edges(model)
    edge_txt = " ".join(f"{i + 1}-{r + 1}" for i, r in edges) or "none"
    print(f"valid: L={model.num_loci} M={list(model.sizes)} edges={edge_txt}")
    return 0


def cmd_simulate_chain(model, args):
    params = chain_params_from_diffusion(model, args.n)
    x0, _ = harness.snap_to_lattice(model, parse_state(model, args.init), args.n)
    traj = simulate_chain(params, x0, args.generations, args.thin, rng=derived_rng(args.seed))
    _write(traj.to_csv(), args.out)
    return 0


def cmd_simulate_sde(model, args):
    x0 = parse_state(model, args.init)
    traj = simulate_sde(model, x0, args.t_end, args.dt, args.thin, rng=derived_rng(args.seed))
    _write(traj.to_csv(), args.out)
    print(f"clamped steps: {traj.clamp_count}", file=sys.stderr)
    return 0


def _read_points(model, args) -> np.ndarray:
    if args.grid:
        pts = np.loadtxt(args.grid, delimiter=",", ndmin=2)
    elif args.points:
        pts = [parse_state(model, p) for p in args.points.split("|")]
    else:
        raise UsageError("give --grid FILE or --points")
    return np.array([parse_state(model, ",".join(repr(float(v)) for v in row)) for row in pts])


def cmd_density_eval(model, args):
    pts = _read_points(model, args)
    vals = log_density_unnormalized(model, pts)
    cols = [f"x{i + 1}_{k + 1}" for i, m in enumerate(model.sizes) for k in range(m)]
    if args.normalized:
        dens = StationaryDensity(model, args.method, args.samples, args.seed)
        vals = vals - dens.log_z
    lines = [",".join(cols + ["log_density"])]
    for x, v in zip(pts, vals):
        lines.append(",".join(f"{c:.17g}" for c in x) + f",{v:.17g}")
    _write("\n".join(lines) + "\n", args.out)
    return 0


def cmd_normalize(model, args):
    dens = StationaryDensity(model, args.method, args.samples, args.seed)
    log_z = dens.log_z
    line = f"Z={np.exp(log_z):.17g} log_Z={log_z:.17g} method={dens.used_method}"
    if dens.used_method == "mc":
        line += f" se={dens.standard_error:.6g}"
    elif dens.used_method == "quadrature":
        line += f" doubling_change={dens.standard_error:.3g}"
    print(line)
    return 0


def cmd_flow_check(model, args):
    rng = derived_rng(args.seed)
    worst = 0.0
    for _ in range(args.points):
        x = random_interior_state(model, rng, min_coord=1e-3)
        worst = max(worst, float(np.max(np.abs(flow_residual(model, x)))))
    ok = worst <= FLOW_TOL
    print(f"max relative flow residual {worst:.3e} over {args.points} points: {'ok' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_moments(model, args):
    Ns = [int(float(v)) for v in args.ns.split(",")]
    if args.x:
        x = parse_state(model, args.x)
    else:
        x = harness.random_lattice_point(model, derived_rng(args.seed))
    rep = harness.moment_report(model, x, Ns)
    _write(rep.to_csv(), args.out)
    return 0


def cmd_stationarity(model, args):
    if args.trajectory:
        traj = Trajectory.from_csv(args.trajectory, model.sizes)
        states = traj.states[args.burn:]
    else:
        x0 = parse_state(model, args.init)
        traj = simulate_sde(model, x0, args.t_end, args.dt, args.thin, rng=derived_rng(args.seed))
        states = traj.states[1 + args.burn:]
    rep = harness.stationarity_test(model, states, args.bins)
    _write(json.dumps(rep.to_dict(), indent=2) + "\n", args.out)
    return 0


def cmd_graph_export(model, args):
    _write(to_dot(model_edges(model), model.num_loci), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wfcoupled", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("model", help="model JSON file")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", "-o", default=None, help="output file (default stdout)")
        sp.set_defaults(func=func)
        return sp

    add("validate", cmd_validate, "check a model file")

    sp = add("simulate-chain", cmd_simulate_chain, "finite-N Wright-Fisher chain")
    sp.add_argument("--n", type=int, required=True, help="population size N")
    sp.add_argument("--generations", type=int, required=True)
    sp.add_argument("--thin", type=int, default=1)
    sp.add_argument("--init", default=None, help='e.g. "0.2,0.8;0.7,0.3" (default uniform)')

    sp = add("simulate-sde", cmd_simulate_sde, "Euler-Maruyama diffusion path")
    sp.add_argument("--t-end", type=float, required=True)
    sp.add_argument("--dt", type=float, default=DEFAULT_DT)
    sp.add_argument("--thin", type=int, default=1)
    sp.add_argument("--init", default=None)

    sp = add("density-eval", cmd_density_eval, "log stationary density at points")
    sp.add_argument("--grid", default=None, help="CSV of states, one per row")
    sp.add_argument("--points", default=None, help='states separated by "|"')
    sp.add_argument("--normalized", action="store_true", help="subtract log Z")
    sp.add_argument("--method", default="auto", choices=["auto", "closed", "quadrature", "mc"])
    sp.add_argument("--samples", type=int, default=10**6)

    sp = add("normalize", cmd_normalize, "normalizing constant Z")
    sp.add_argument("--method", default="auto", choices=["auto", "closed", "quadrature", "mc"])
    sp.add_argument("--samples", type=int, default=10**6)

    sp = add("flow-check", cmd_flow_check, "zero probability flow at random interior points")
    sp.add_argument("--points", type=int, default=20)

    sp = add("moments", cmd_moments, "exact one-generation moments over a grid of N")
    sp.add_argument("--x", default=None, help="state (default: random point on the 1/100 lattice)")
    sp.add_argument("--ns", default="100,1000,10000,100000")

    sp = add("stationarity", cmd_stationarity, "binned comparison with the stationary law")
    sp.add_argument("--trajectory", default=None, help="trajectory CSV (default: simulate the SDE)")
    sp.add_argument("--t-end", type=float, default=2e4)
    sp.add_argument("--dt", type=float, default=DEFAULT_DT)
    sp.add_argument("--thin", type=int, default=200)
    sp.add_argument("--burn", type=int, default=0, help="records to drop from the start")
    sp.add_argument("--bins", type=int, default=30)
    sp.add_argument("--init", default=None)

    add("graph-export", cmd_graph_export, "interaction graph as DOT")
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    try:
        model = load_model(args.model)
        return args.func(model, args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (WFError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
