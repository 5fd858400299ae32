"""Command-line entry point: one spec file plus flags per run, JSON and CSV reports."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .certify import cw_lower, cw_upper, minimax_measure
from .discretize import assemble, build_grid
from .errors import EigenflowError
from .exhaust import lambda_sequence
from .hjb import eigenfunction_at_lambda, outer_shell_max, perturb_potential, policy_iteration
from .mc import PathConfig, feynman_kac_verify, risk_sensitive_estimate
from .model import load_problem
from .perron import DEFAULT_TOL

log = logging.getLogger("eigenflow")


# ------------------------------------------------------------------- formatting

def fmt(x: float) -> str:
    """17 significant digits: enough to round-trip any double."""
    return f"{x:.17g}"


def _to_json(obj, indent: int = 0) -> str:
    """JSON with every float written to 17 significant digits."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_to_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.number)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(_to_json(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _to_json(v, indent + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, np.ndarray):
        return _to_json(obj.tolist(), indent)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "NaN"
        if math.isinf(x):
            return "Infinity" if x > 0 else "-Infinity"
        return fmt(x)
    if obj is None:
        return "null"
    return json.dumps(str(obj))


def _write_csv(path: Path, header: list, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def _floats(text: str) -> list:
    return [float(t) for t in text.replace(";", ",").split(",") if t.strip()]


def _points(text: str, d: int) -> list:
    """``"2;-2"`` (d = 1) or ``"1,0;0,1"`` (d = 2): points separated by ';'."""
    pts = []
    for chunk in text.split(";") if ";" in text or d > 1 else text.split(","):
        vals = [float(t) for t in chunk.split(",") if t.strip()]
        if len(vals) != d:
            raise ValueError(f"point {chunk!r} does not have {d} coordinates")
        pts.append(vals)
    return pts


# --------------------------------------------------------------------- commands

def _grid(args, spec, R=None, h=None):
    R = args.R if R is None else R
    if R is None:
        raise ValueError("--R is required")
    h = (args.h if args.h is not None else R / 400) if h is None else h
    return build_grid(spec.dim, R, h, args.shape)


def cmd_eig_dirichlet(args, problem, out):
    spec = problem.spec
    grid = _grid(args, spec)
    opr = assemble(spec, grid)
    if args.dump_operator:
        path = out / "operator.json"
        path.write_text(opr.dumps())
        args._outputs.append(str(path))
    res = policy_iteration(opr, tol=args.tol, max_sweeps=args.sweeps)
    rows = [list(p) + [v] for p, v in zip(grid.points.tolist(), res.psi)]
    header = [f"x{i}" for i in range(spec.dim)] + ["psi"]
    report = {"lambda": res.lam, "residual": res.residual, "sweeps": res.sweeps,
              "fixed_point_residual": res.fixed_point_residual, "cycling": res.cycling,
              "R": grid.R, "h": grid.h, "N": grid.N}
    return report, (header, rows), True


def cmd_exhaust(args, problem, out):
    radii = _floats(args.radii)
    h = args.h if args.h is not None else (lambda R: R / 400)
    res = lambda_sequence(problem.spec, radii, h, tol=args.tol, shape=args.shape,
                          max_sweeps=args.sweeps, threads=args.threads)
    rows = [[r.R, r.h, r.N, r.lam, r.residual, r.sweeps] for r in res.rows]
    return res.to_dict(), (["R", "h", "N", "lambda", "residual", "sweeps"], rows), res.ok


def _load_psi(text: str):
    p = Path(text)
    if p.suffix in (".csv", ".txt", ".npy") and p.exists():
        if p.suffix == ".npy":
            return np.load(p)
        data = np.genfromtxt(p, delimiter=",", names=True)
        return np.asarray(data["psi"], dtype=float)
    return text


def cmd_certify(args, problem, out):
    if not args.psi:
        raise ValueError("--psi is required")
    grid = _grid(args, problem.spec)
    opr = assemble(problem.spec, grid)
    psi = _load_psi(args.psi)
    cert = cw_lower(opr, psi) if args.kind == "lower" else cw_upper(opr, psi, mode=args.mode)
    rows = [list(p) + [q] for p, q in zip(grid.points.tolist(), cert.quotient)]
    header = [f"x{i}" for i in range(problem.spec.dim)] + ["quotient"]
    return cert.to_dict(), (header, rows), True


def cmd_minimax(args, problem, out):
    grid = _grid(args, problem.spec)
    opr = assemble(problem.spec, grid).with_sense("max")
    res = minimax_measure(opr, mu_steps=args.sweeps * 10, tol=args.minimax_tol,
                          raise_on_failure=False)
    ref = policy_iteration(opr, tol=args.tol, max_sweeps=args.sweeps)
    report = {**res.to_dict(), "lambda_policy_iteration": ref.lam, "N": grid.N}
    rows = [list(p) + [m, w] for p, m, w in zip(grid.points.tolist(), res.mu, res.w)]
    header = [f"x{i}" for i in range(problem.spec.dim)] + ["mu", "w"]
    return report, (header, rows), res.converged


def cmd_eigencurve(args, problem, out):
    if not args.lam:
        raise ValueError("--lambda is required")
    spec = problem.spec
    radii = _floats(args.radii) if args.radii else [args.R / 2, args.R]
    h = args.h if args.h is not None else radii[-1] / 400
    grids = [build_grid(spec.dim, R, h, args.shape) for R in radii]
    results, rows, ok = [], [], True
    for lam in _floats(args.lam):
        try:
            r = eigenfunction_at_lambda(spec, lam, grids, tol=args.tol)
            entry = {"lambda": lam, "residual": r.residual, "positive": r.positive,
                     "phi_min": float(r.phi.min()), "lambda_dirichlet": r.lam_dirichlet}
            rows.append([lam, r.residual, int(r.positive), float(r.phi.min()), r.lam_dirichlet])
            ok &= r.positive
        except EigenflowError as exc:
            entry = {"lambda": lam, "error": f"{type(exc).__name__}: {exc}"}
            rows.append([lam, float("nan"), 0, float("nan"), float("nan")])
            ok = False
        results.append(entry)
    header = ["lambda", "residual", "positive", "phi_min", "lambda_dirichlet"]
    return {"radii": radii, "h": h, "results": results}, (header, rows), ok


def cmd_perturb(args, problem, out):
    if not args.m:
        raise ValueError("--m is required")
    spec = problem.spec
    radii = _floats(args.radii)
    h = args.h if args.h is not None else (lambda R: R / 400)
    tail = args.tail
    if tail is None:
        tail_grid = build_grid(spec.dim, radii[-1], args.h or radii[-1] / 400, args.shape)
        tail = outer_shell_max(spec, tail_grid)
    base = lambda_sequence(spec, radii, h, tol=args.tol, shape=args.shape,
                           max_sweeps=args.sweeps, threads=args.threads)
    rows, table, ok = [], [], base.ok
    for m in _floats(args.m):
        pert = perturb_potential(spec, m, args.delta, tail=tail)
        res = lambda_sequence(pert, radii, h, tol=args.tol, shape=args.shape,
                              max_sweeps=args.sweeps, threads=args.threads)
        ok &= res.ok
        table.append({"m": m, "lambda_star_est": res.lam_est, "model": res.model,
                      "lambdas": res.lambdas.tolist()})
        rows.append([m, res.lam_est, res.lam_est - base.lam_est])
    report = {"unperturbed": base.to_dict(), "delta": args.delta, "tail": tail, "table": table}
    return report, (["m", "lambda_star_est", "difference"], rows), ok


def cmd_mc_verify(args, problem, out):
    if not args.points:
        raise ValueError("--points is required")
    spec = problem.spec
    grid = _grid(args, spec)
    opr = assemble(spec, grid)
    res = policy_iteration(opr, tol=args.tol, max_sweeps=args.sweeps)
    cfg = PathConfig(dt=args.dt, t_max=args.t_max, seed=args.seed, n_paths=args.paths,
                     threads=args.threads)
    verdicts, rows, ok = [], [], True
    for x in _points(args.points, spec.dim):
        v = feynman_kac_verify(spec, (grid, res.policy), res.lam, res.psi, grid, x, args.r, cfg)
        verdicts.append(v.to_dict())
        rows.append(list(x) + [v.target, v.estimate.mean, v.estimate.stderr, v.allowance,
                               int(v.passed)])
        ok &= v.passed
    header = [f"x{i}" for i in range(spec.dim)] + ["target", "estimate", "stderr", "allowance",
                                                   "passed"]
    return {"lambda": res.lam, "r": args.r, "verdicts": verdicts}, (header, rows), ok


def cmd_risk(args, problem, out):
    spec = problem.spec
    policy = int(args.policy) if args.policy.lstrip("-").isdigit() else args.policy.split(";")
    x0 = _points(args.x0, spec.dim)[0]
    cfg = PathConfig(dt=args.dt, t_max=args.T, seed=args.seed, n_paths=args.paths,
                     threads=args.threads)
    est = risk_sensitive_estimate(spec, policy, x0, args.T, cfg)
    report = {**est.to_dict(), "T": args.T, "x0": x0, "policy": args.policy}
    return report, (["T", "estimate", "stderr"], [[args.T, est.mean, est.stderr]]), True


COMMANDS = {
    "eig-dirichlet": cmd_eig_dirichlet,
    "exhaust": cmd_exhaust,
    "certify": cmd_certify,
    "minimax": cmd_minimax,
    "eigencurve": cmd_eigencurve,
    "perturb": cmd_perturb,
    "mc-verify": cmd_mc_verify,
    "risk": cmd_risk,
}


def build_parser() -> argparse.ArgumentParser:
    env_seed = int(os.environ.get("EIGENFLOW_SEED", "0"))
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--spec", required=True, help="JSON problem file")
    common.add_argument("--R", type=float, help="domain radius")
    common.add_argument("--h", type=float, help="mesh width (default R/400)")
    common.add_argument("--radii", help="comma-separated radii")
    common.add_argument("--shape", choices=("box", "ball"), default="box")
    common.add_argument("--tol", type=float, default=DEFAULT_TOL)
    common.add_argument("--sweeps", type=int, default=200, help="max policy-iteration sweeps")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--seed", type=int, default=env_seed)
    common.add_argument("--out-dir", default=".")
    common.add_argument("--dump-operator", action="store_true")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="eigenflow", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("eig-dirichlet", parents=[common], help="Dirichlet principal eigenpair")
    sub.add_parser("exhaust", parents=[common], help="eigenvalues on growing domains")
    c = sub.add_parser("certify", parents=[common], help="Collatz-Wielandt certificate")
    c.add_argument("--psi", help="test function: expression, or a .csv/.npy grid function")
    c.add_argument("--kind", choices=("lower", "upper"), default="upper")
    c.add_argument("--mode", choices=("analytic", "ghost"), default=None)
    mm = sub.add_parser("minimax", parents=[common], help="measure-side minimax value")
    mm.add_argument("--minimax-tol", type=float, default=1e-5)
    e = sub.add_parser("eigencurve", parents=[common], help="positive eigenfunctions above lambda*")
    e.add_argument("--lambda", dest="lam", help="comma-separated lambda values")
    pt = sub.add_parser("perturb", parents=[common], help="cut-off potential perturbation")
    pt.add_argument("--m", help="comma-separated cut-off radii")
    pt.add_argument("--delta", type=float, default=0.1)
    pt.add_argument("--tail", type=float, default=None)
    for name, helptext in (("mc-verify", "Feynman-Kac check of the ground state"),
                           ("risk", "risk-sensitive growth rate")):
        q = sub.add_parser(name, parents=[common], help=helptext)
        q.add_argument("--paths", type=int, default=10_000)
        q.add_argument("--dt", type=float, default=1e-3)
        if name == "mc-verify":
            q.add_argument("--points", help="points separated by ';', coordinates by ','")
            q.add_argument("--r", type=float, default=1.0, help="radius of the target ball")
            q.add_argument("--t-max", type=float, default=50.0)
        else:
            q.add_argument("--policy", default="0", help="control index or ';'-separated expressions")
            q.add_argument("--x0", default="0")
            q.add_argument("--T", type=float, default=10.0)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args._outputs = []
    start = time.perf_counter()
    try:
        spec_bytes = Path(args.spec).read_bytes()
        problem = load_problem(args.spec)
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report, (header, rows), ok = COMMANDS[args.command](args, problem, out)
    except (EigenflowError, ValueError, OSError, KeyError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        last = getattr(exc, "last", None)
        if last is not None and hasattr(last, "to_dict"):
            err["last_iterate"] = last.to_dict()
        print(_to_json(err), file=sys.stderr)
        return 2
    stem = args.command.replace("-", "_")
    json_path, csv_path = out / f"{stem}.json", out / f"{stem}.csv"
    _write_csv(csv_path, header, rows)
    flags = {k: v for k, v in vars(args).items() if not k.startswith("_")}
    manifest = {
        "spec": str(args.spec),
        "spec_sha256": hashlib.sha256(spec_bytes).hexdigest(),
        "command": args.command,
        "argv": list(argv) if argv is not None else sys.argv[1:],
        "flags": flags,
        "version": __version__,
        "wall_time_s": time.perf_counter() - start,
        "outputs": [str(json_path), str(csv_path)] + args._outputs,
    }
    json_path.write_text(_to_json({"manifest": manifest, "ok": ok, "result": report}) + "\n")
    print(_to_json({"ok": ok, "result": report if len(rows) <= 50 else
                    {k: v for k, v in report.items() if not isinstance(v, list)},
                    "outputs": manifest["outputs"]}))
    return 0 if ok else 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
