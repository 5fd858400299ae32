"""Random problem generators shared by the property tests."""

import itertools

import numpy as np
import scipy.sparse as sp

from eigenflow.discretize import assemble, build_grid
from eigenflow.model import ControlSet, OperatorSpec, isotropic_spec


def random_metzler(rng, n, density=0.6):
    """Irreducible Metzler matrix: random nonnegative off-diagonals plus a cycle."""
    A = rng.uniform(0, 2, (n, n)) * (rng.random((n, n)) < density)
    for i in range(n):
        A[i, (i + 1) % n] = rng.uniform(0.1, 2)
    np.fill_diagonal(A, rng.uniform(-5, 5, n))
    return A


def random_spec_1d(rng, K=None, sense="min", confining=False):
    K = int(rng.integers(1, 4)) if K is None else K
    ctrl = rng.uniform(-1, 1, (K, 2))
    a0, a1, b0, b1, c0, c1, c2, w = rng.uniform(-1, 1, 8)
    drift = f"{b0} + {b1}*x0 + u0" if not confining else f"-{1 + abs(b1)}*x0 + 0.5*u0"
    return OperatorSpec(
        dim=1,
        a=[[f"1 + {0.3 * a0}*cos({2 * a1}*x0)"]],
        b=[drift],
        c=f"{c0} + {c1}*sin({3 * w}*x0) + {c2}*u1*x0",
        sense=sense,
        controls=ControlSet(ctrl),
    )


def small_grid_1d(n_nodes, R=1.0):
    """1D box grid with exactly ``n_nodes`` interior nodes."""
    return build_grid(1, R, 2 * R / (n_nodes + 1))


def enumerate_policies(opr):
    """Frozen-policy Perron eigenvalues over all K^N policies (batched dense oracle)."""
    dense = np.stack([M.toarray() for M in opr.matrices])            # (K, N, N)
    pols = np.array(list(itertools.product(range(opr.K), repeat=opr.N)))
    mats = dense[pols, np.arange(opr.N)]                              # (P, N, N)
    return np.linalg.eigvals(mats).real.max(axis=1)


def random_controlled_operator(rng, n_nodes, sense="min", K=None):
    spec = random_spec_1d(rng, K=K, sense=sense)
    return assemble(spec, small_grid_1d(n_nodes))


def to_sparse(A):
    return sp.csr_matrix(A)


__all__ = ["random_metzler", "random_spec_1d", "small_grid_1d", "enumerate_policies",
           "random_controlled_operator", "to_sparse", "isotropic_spec"]
