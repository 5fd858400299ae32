"""Semilinear (HJB) eigenproblems by policy iteration, eigenfunctions above the
principal eigenvalue, and the cut-off perturbation of the potential."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .discretize import DiscreteOperator, Grid, assemble
from .errors import CyclingDetected, LinearSolveFailure, NoConvergence, NotSupercritical
from .expr import Bin, Call, Expr, Num, Var
from .model import OperatorSpec
from .perron import DEFAULT_TOL, EigenPair, principal_eigenpair

log = logging.getLogger(__name__)

_EPS = np.finfo(float).eps


@dataclass
class SemilinearEigenResult:
    eigenpair: EigenPair
    policy: np.ndarray
    history: list = field(default_factory=list)
    sweeps: int = 0
    cycling: bool = False
    fixed_point_residual: float = np.nan

    @property
    def lam(self) -> float:
        return self.eigenpair.lam

    @property
    def psi(self) -> np.ndarray:
        return self.eigenpair.psi

    @property
    def residual(self) -> float:
        return self.eigenpair.residual


def _improvement_threshold(opr: DiscreteOperator, psi: np.ndarray) -> np.ndarray:
    # round-off scale of (M_k psi)_i
    scale = np.max(np.stack([A @ np.abs(psi) for A in opr.abs_matrices]), axis=0)
    return 64 * _EPS * scale


def improve_policy(opr: DiscreteOperator, psi: np.ndarray, policy: np.ndarray) -> np.ndarray:
    """Switch control only where another one is better beyond round-off."""
    Y = opr.stack(psi)
    cur = Y[policy, np.arange(opr.N)]
    thresh = _improvement_threshold(opr, psi)
    if opr.sense == "min":
        cand = np.argmin(Y, axis=0)
        better = Y[cand, np.arange(opr.N)] < cur - thresh
    else:
        cand = np.argmax(Y, axis=0)
        better = Y[cand, np.arange(opr.N)] > cur + thresh
    return np.where(better, cand, policy)


def fixed_point_residual(opr: DiscreteOperator, lam: float, psi: np.ndarray) -> float:
    """``max_i |(G psi)_i - lam psi_i| / psi_i``."""
    return float(np.max(np.abs(opr.apply(psi) - lam * psi) / psi))


def policy_iteration(opr: DiscreteOperator, tol: float = DEFAULT_TOL, max_sweeps: int = 200,
                     policy0: np.ndarray | None = None) -> SemilinearEigenResult:
    """Howard iteration: Perron solve for the frozen policy, then re-select the policy."""
    anchor = opr.grid.anchor
    if opr.K == 1:
        ep = principal_eigenpair(opr.matrices[0], tol=tol, shift=opr.shift, anchor=anchor)
        policy = np.zeros(opr.N, dtype=np.int64)
        return SemilinearEigenResult(ep, policy, [ep.lam], 1, False,
                                     fixed_point_residual(opr, ep.lam, ep.psi))
    policy = opr.select_policy(np.ones(opr.N)) if policy0 is None else np.asarray(policy0)
    sign = 1.0 if opr.sense == "min" else -1.0
    history: list[float] = []
    seen = {policy.tobytes()}
    best = None
    psi = None
    stall = 0
    for sweep in range(1, max_sweeps + 1):
        ep = principal_eigenpair(opr.frozen(policy), tol=tol, shift=opr.shift, anchor=anchor, v0=psi)
        psi = ep.psi
        if history and sign * (ep.lam - history[-1]) > -tol:
            stall += 1
        else:
            stall = 0
        history.append(ep.lam)
        if best is None or sign * (ep.lam - best[0].lam) < 0:
            best = (ep, policy.copy())
        new = improve_policy(opr, psi, policy)
        if np.array_equal(new, policy) or stall >= 2:
            return SemilinearEigenResult(ep, policy, history, sweep, False,
                                         fixed_point_residual(opr, ep.lam, psi))
        key = new.tobytes()
        if key in seen:
            warnings.warn(f"policy iteration revisited a policy after {sweep} sweeps; "
                          "keeping the best iterate", CyclingDetected, stacklevel=2)
            bep, bpol = best
            return SemilinearEigenResult(bep, bpol, history, sweep, True,
                                         fixed_point_residual(opr, bep.lam, bep.psi))
        seen.add(key)
        policy = new
    raise NoConvergence(f"policy iteration did not stabilise in {max_sweeps} sweeps",
                        last=SemilinearEigenResult(ep, policy, history, max_sweeps))


def solve(spec: OperatorSpec, grid: Grid, tol: float = DEFAULT_TOL,
          max_sweeps: int = 200) -> SemilinearEigenResult:
    return policy_iteration(assemble(spec, grid), tol=tol, max_sweeps=max_sweeps)


# ------------------------------------------------------------ eigenfunctions at lambda

def solve_source_problem(opr: DiscreteOperator, lam: float, f: np.ndarray,
                         policy0: np.ndarray, max_sweeps: int = 200):
    """Policy iteration for ``G phi - lam phi = -f`` with zero Dirichlet data.

    ``policy0`` must have frozen principal eigenvalue below ``lam``; each later
    policy then does too, and the iterates are monotone.
    """
    policy = np.asarray(policy0)
    eye = sp.identity(opr.N, format="csr")
    phi = None
    for sweep in range(1, max_sweeps + 1):
        A = (lam * eye - opr.frozen(policy)).tocsc()
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error")
                phi = spsolve(A, f)
        except Exception as exc:  # MatrixRankWarning or factorisation failure
            raise LinearSolveFailure(f"frozen-policy solve failed: {exc}") from exc
        if not np.all(np.isfinite(phi)):
            raise LinearSolveFailure("non-finite solution of the frozen-policy system")
        new = improve_policy(opr, phi, policy)
        if np.array_equal(new, policy):
            return phi, policy, sweep
        policy = new
    raise NoConvergence("source-problem policy iteration did not stabilise", last=phi)


def annulus_bump(r: np.ndarray, r_in: float, r_out: float) -> np.ndarray:
    """``cos^2`` bump on ``r_in < r < r_out``, peak 1 at the mid-radius, zero elsewhere."""
    width = r_out - r_in
    mid = 0.5 * (r_in + r_out)
    inside = (r > r_in) & (r < r_out)
    return np.where(inside, np.cos(np.pi * (r - mid) / width) ** 2, 0.0)


@dataclass
class PairSolution:
    r_inner: float
    r_outer: float
    phi_min: float
    residual: float
    sweeps: int


@dataclass
class EigencurveResult:
    lam: float
    phi: np.ndarray
    grid: Grid
    residual: float          # ||G phi - lam phi||_inf / ||phi||_inf on |x| <= inner radius
    lam_dirichlet: float     # principal eigenvalue on the largest grid
    pairs: list

    @property
    def positive(self) -> bool:
        return bool(np.all(self.phi > 0))


def eigenfunction_at_lambda(spec: OperatorSpec, lam: float, grids: Sequence[Grid],
                            tol: float = DEFAULT_TOL) -> EigencurveResult:
    """Positive solution of ``G phi = lam phi`` above the principal eigenvalue.

    For consecutive grids (B_n, B_{n+1}) the source problem
    ``G phi_n - lam phi_n = -f_n`` is solved on B_{n+1} with ``f_n`` a bump on
    the annulus between them; ``phi_n`` is scaled to 1 at the origin.  The
    solution on the largest grid is returned.
    """
    grids = sorted(grids, key=lambda g: g.R)
    if len(grids) < 2:
        raise ValueError("need at least two nested grids")
    largest = assemble(spec, grids[-1])
    base = policy_iteration(largest, tol=tol)
    if lam <= base.lam:
        raise NotSupercritical(f"lambda={lam} is not above the principal eigenvalue "
                               f"{base.lam} of the largest domain")
    pairs = []
    phi = None
    for inner, outer in zip(grids[:-1], grids[1:]):
        opr = largest if outer is grids[-1] else assemble(spec, outer)
        eig = base if opr is largest else policy_iteration(opr, tol=tol)
        f = annulus_bump(outer.radius, inner.R, outer.R)
        if not f.any():
            raise ValueError(f"no grid nodes in the annulus {inner.R} < |x| < {outer.R}")
        phi, _, sweeps = solve_source_problem(opr, lam, f, eig.policy)
        phi = phi / phi[outer.anchor]
        away = outer.radius <= inner.R
        res = float(np.max(np.abs(opr.apply(phi) - lam * phi)[away]) / np.max(np.abs(phi)))
        pairs.append(PairSolution(inner.R, outer.R, float(phi.min()), res, sweeps))
    return EigencurveResult(lam, phi, grids[-1], pairs[-1].residual, base.lam, pairs)


# ------------------------------------------------------------ perturbed potential

def _radius_node(d: int):
    total = None
    for i in range(d):
        sq = Bin("^", Var("x", i), Num(2.0))
        total = sq if total is None else Bin("+", total, sq)
    return Call("sqrt", (total,))


def cutoff_expr(d: int, m: float) -> Expr:
    """``zeta_m``: 1 on B_m, ``cos^2(pi (|x| - m) / 2)`` on the shell, 0 outside B_{m+1}."""
    t = Call("min", (Call("max", (Bin("-", _radius_node(d), Num(float(m))), Num(0.0))), Num(1.0)))
    arg = Bin("/", Bin("*", Num(np.pi), t), Num(2.0))
    return Expr(Bin("^", Call("cos", (arg,)), Num(2.0)))


def outer_shell_max(spec: OperatorSpec, grid: Grid) -> float:
    """Max over controls of c on the outermost interior shell of ``grid``."""
    pts = grid.points[grid.outer_shell]
    return float(max(spec.potential(pts, k).max() for k in range(spec.n_controls)))


def perturb_potential(spec: OperatorSpec, m: float, delta: float, tail: float | None = None,
                      grid: Grid | None = None) -> OperatorSpec:
    """Replace c by ``zeta_m c + (1 - zeta_m)(delta + tail)``.

    ``tail`` stands for the limsup at infinity of ``max_u c``; if omitted it is
    estimated on the outer shell of ``grid``.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if m < 1:
        raise ValueError("m must be >= 1")
    if tail is None:
        if grid is None:
            raise ValueError("need either tail or a grid to estimate it")
        tail = outer_shell_max(spec, grid)
        log.info("estimated tail limsup of c as %g on the outer shell R=%g", tail, grid.R)
    zeta = cutoff_expr(spec.dim, m)
    c_m = zeta * spec.c + (1.0 - zeta) * (delta + tail)
    return spec.replace(c=c_m)
