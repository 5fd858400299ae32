"""Measure-side minimax value against policy iteration on a 2D controlled spec."""

import argparse
from pathlib import Path

from eigenflow import assemble, build_grid, load_problem, minimax_measure, policy_iteration

SPECS = Path(__file__).resolve().parent.parent / "specs"


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--spec", default=str(SPECS / "hjb2d.json"))
    p.add_argument("--R", type=float, default=1.0)
    p.add_argument("--h", type=float, default=0.25)
    p.add_argument("--method", choices=("logit", "mirror"), default="logit")
    p.add_argument("--tol", type=float, default=1e-4, help="target gap")
    args = p.parse_args()

    spec = load_problem(args.spec).spec
    opr = assemble(spec, build_grid(spec.dim, args.R, args.h), sense="max")
    lam = policy_iteration(opr).lam
    res = minimax_measure(opr, tol=args.tol, method=args.method,
                          raise_on_failure=False)
    print(f"N={opr.N} nodes, K={opr.K} controls")
    print(f"policy iteration: {lam:.10f}")
    print(f"minimax value:    {res.value:.10f}  (upper {res.upper:.10f}, gap {res.gap:.2e}, "
          f"{res.steps} steps, converged {res.converged})")


if __name__ == "__main__":
    main()
