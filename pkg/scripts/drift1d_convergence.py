"""Eigenvalues of f'' - f': mesh refinement at fixed R, then growing R."""

import argparse

import numpy as np

from eigenflow import assemble, build_grid, drift_laplacian_spec, lambda_sequence, policy_iteration


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--R", type=float, default=5.0)
    p.add_argument("--radii", default="5,10,20,40")
    p.add_argument("--h", type=float, default=0.01)
    args = p.parse_args()

    spec = drift_laplacian_spec()
    exact = -(0.25 + np.pi**2 / (4 * args.R**2))
    print(f"R={args.R:g}, continuum value {exact:.8f}")
    print(f"{'h':>10} {'lambda':>14} {'error':>11}")
    for h in args.R / np.array([50, 100, 200, 400, 800, 1600]):
        lam = policy_iteration(assemble(spec, build_grid(1, args.R, h))).lam
        print(f"{h:10.5f} {lam:14.8f} {lam - exact:11.3e}")

    radii = [float(r) for r in args.radii.split(",")]
    res = lambda_sequence(spec, radii, args.h)
    print(f"\nh={args.h:g}")
    for row in res.rows:
        print(f"R={row.R:6g}  lambda={row.lam:.8f}")
    print(f"extrapolated ({res.model}): {res.lam_est:.6f}   monotone: {res.monotone}")


if __name__ == "__main__":
    main()
