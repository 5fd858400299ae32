"""Eigenvalues of the cut-off potentials c_m for growing m on a confining controlled spec."""

import argparse
from pathlib import Path

from eigenflow import lambda_sequence, load_problem, perturb_potential

SPECS = Path(__file__).resolve().parent.parent / "specs"


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--spec", default=str(SPECS / "ou_controlled.json"))
    p.add_argument("--radii", default="8,10,12")
    p.add_argument("--h", type=float, default=0.02)
    p.add_argument("--delta", type=float, default=0.1)
    args = p.parse_args()

    spec = load_problem(args.spec).spec
    radii = [float(r) for r in args.radii.split(",")]
    base = lambda_sequence(spec, radii, args.h)
    print(f"unperturbed lambda* estimate {base.lam_est:.10f}")
    for m in (1, 2, 3, 4, 6, 8):
        est = lambda_sequence(perturb_potential(spec, m, args.delta, tail=0.0), radii, args.h).lam_est
        print(f"m={m}:  {est:.10f}   difference {est - base.lam_est:.3e}")


if __name__ == "__main__":
    main()
