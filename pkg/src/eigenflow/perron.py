"""Perron eigenpair of a single Metzler matrix and matrix-level Collatz-Wielandt bounds."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .discretize import metzler_shift
from .errors import NoConvergence, NonPositiveTestVector, SingularShift

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10_000
_MAX_SHIFT_RETRIES = 3


@dataclass
class EigenPair:
    lam: float
    psi: np.ndarray
    residual: float
    iterations: int
    lower: float = -np.inf   # Collatz-Wielandt bracket of the final iterate
    upper: float = np.inf

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "residual": self.residual, "iterations": self.iterations,
                "cw_lower": self.lower, "cw_upper": self.upper}


def effective_tol(M, tol: float) -> float:
    """Requested tolerance, floored at the round-off level of ``M @ v``."""
    norm = float(abs(M).sum(axis=1).max())
    return max(tol, 1024 * np.finfo(float).eps * norm)


def _factor(M: sp.csc_matrix, sigma: float):
    n = M.shape[0]
    for attempt in range(_MAX_SHIFT_RETRIES + 1):
        try:
            lu = splu((sigma * sp.identity(n, format="csc") - M).tocsc())
            return lu, sigma
        except RuntimeError:
            if attempt == _MAX_SHIFT_RETRIES:
                break
            log.debug("singular shift %g, retrying", sigma)
            sigma = sigma + max(1.0, abs(sigma))
    raise SingularShift(f"(sigma I - M) singular after {_MAX_SHIFT_RETRIES} shift retries")


def principal_eigenpair(M, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                        shift: float | None = None, anchor: int = 0,
                        v0: np.ndarray | None = None) -> EigenPair:
    """Perron eigenpair of an irreducible Metzler matrix by shifted inverse iteration.

    The shift always stays strictly above the current Collatz-Wielandt upper
    bound, so ``(sigma I - M)^{-1}`` is entrywise nonnegative and every iterate
    is positive.  It starts at a Gershgorin-type bound and tightens towards the
    eigenvalue as the bracket closes.
    """
    M = sp.csr_matrix(M, dtype=float)
    n = M.shape[0]
    if n == 1:
        lam = float(M[0, 0])
        return EigenPair(lam, np.ones(1), 0.0, 0, lam, lam)
    tol_eff = effective_tol(M, tol)
    Mc = M.tocsc()
    sigma = max(shift if shift is not None else -np.inf, metzler_shift(M))
    lu, sigma = _factor(Mc, sigma)
    v = np.ones(n) if v0 is None else np.abs(np.asarray(v0, dtype=float))
    if not np.all(v > 0):
        v = np.ones(n)
    v = v / v[anchor]
    lam_prev = np.nan
    lam = np.nan
    res = np.inf
    lower, upper = -np.inf, np.inf
    stalled = 0
    # Once the iterate spans more decades than double precision resolves, solve in
    # the diagonal gauge D = diag(v): (sigma - D^-1 M D) y = 1, w = D y.  Each
    # component of w is then accurate relative to itself rather than to max(w).
    balanced = False
    for it in range(1, max_iter + 1):
        if balanced:
            D = sp.diags(v)
            scaled = (sp.diags(1.0 / v) @ Mc @ D).tocsc()
            lu_b, sigma = _factor(scaled, sigma)
            w = v * lu_b.solve(np.ones(n))
        else:
            w = lu.solve(v)
        if not np.all(np.isfinite(w)):
            raise NoConvergence("non-finite iterate", last=EigenPair(lam, v, res, it, lower, upper))
        if np.any(w <= 0):
            if w.min() < -1e-8 * np.abs(w).max():
                # the shift fell below the eigenvalue
                sigma = max(sigma, upper) + max(1.0, upper - lower if np.isfinite(lower) else 1.0)
                lu, sigma = _factor(Mc, sigma)
                continue
            # round-off in a far tail: floor it and switch to the balanced gauge
            w = np.where(w > 0, w, w.max() * 1e-150)
            balanced = True
        elif not balanced and w.max() > 1e10 * w.min():
            balanced = True
        v = w / w[anchor]
        Mv = M @ v
        q = Mv / v
        lower, upper = float(q.min()), float(q.max())
        lam = float(v @ Mv) / float(v @ v)
        res = float(np.abs(Mv - lam * v).max() / np.abs(v).max())
        if abs(lam - lam_prev) <= tol_eff and res <= tol_eff:
            return EigenPair(lam, v, res, it, lower, upper)
        # round-off plateau: eigenvalue settled, residual no longer improving
        stalled = stalled + 1 if abs(lam - lam_prev) <= tol_eff and res <= 100 * tol_eff else 0
        if stalled >= 5:
            log.warning("inverse iteration stalled at residual %.3g (tol %.3g)", res, tol_eff)
            return EigenPair(lam, v, res, it, lower, upper)
        lam_prev = lam
        target = upper + max(upper - lower, 1e-8 * (1.0 + abs(upper)))
        if target < sigma:
            sigma = target
            if not balanced:
                lu, sigma = _factor(Mc, sigma)
    raise NoConvergence(f"inverse iteration did not converge in {max_iter} iterations",
                        last=EigenPair(lam, v, res, max_iter, lower, upper))


def matrix_cw_bounds(M, v: np.ndarray) -> tuple[float, float]:
    """``(min_i (Mv)_i / v_i, max_i (Mv)_i / v_i)``; brackets the Perron eigenvalue."""
    v = np.asarray(v, dtype=float)
    if not np.all(v > 0):
        raise NonPositiveTestVector("test vector must be strictly positive")
    q = (M @ v) / v
    return float(q.min()), float(q.max())


def dense_perron(M) -> tuple[float, np.ndarray]:
    """Dense oracle: eigenvalue of maximal real part and its eigenvector scaled positive."""
    A = M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)
    w, V = np.linalg.eig(A)
    i = int(np.argmax(w.real))
    vec = V[:, i].real
    vec = vec / vec[np.argmax(np.abs(vec))]
    return float(w[i].real), vec
