"""Collatz-Wielandt certificates, the measure-side minimax value, and
maximum-principle checkers.

All statements here are about the *discretised* operator.  They connect to
the continuum eigenvalue only through grid-convergence studies.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.sparse.linalg import spsolve

from .discretize import DiscreteOperator
from .errors import NoConvergence, NonPositiveTestFunction
from .expr import Expr, parse_expr
from .hjb import policy_iteration

log = logging.getLogger(__name__)

DISCLAIMER = ("certificate bounds the principal eigenvalue of the discretised operator; "
              "its relation to the continuum value rests on grid convergence")

TAG_VANISHING = "vanishing-boundary"
TAG_INTERIOR = "interior-positive"


@dataclass
class Certificate:
    kind: str                  # "lower" or "upper"
    bound: float
    tag: str
    psi_source: str
    quotient: np.ndarray = field(repr=False)
    mode: str = "discrete"
    disclaimer: str = DISCLAIMER

    @property
    def quotient_min(self) -> float:
        return float(self.quotient.min())

    @property
    def quotient_max(self) -> float:
        return float(self.quotient.max())

    @property
    def argmin_node(self) -> int:
        return int(np.argmin(self.quotient))

    @property
    def argmax_node(self) -> int:
        return int(np.argmax(self.quotient))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "bound": self.bound, "tag": self.tag,
                "psi_source": self.psi_source, "quotient_min": self.quotient_min,
                "quotient_max": self.quotient_max, "argmin_node": self.argmin_node,
                "argmax_node": self.argmax_node, "mode": self.mode,
                "disclaimer": self.disclaimer}


def _grid_values(opr: DiscreteOperator, psi) -> tuple[np.ndarray, str]:
    if isinstance(psi, (str, Expr)):
        e = parse_expr(psi)
        return e.evaluate(opr.grid.points), str(e)
    return np.asarray(psi, dtype=float), "grid-function"


def _check_positive(values: np.ndarray) -> None:
    if not np.all(values > 0):
        i = int(np.argmin(values))
        raise NonPositiveTestFunction(f"test function not positive at node {i} (value {values[i]:.6g})")


def cw_lower(opr: DiscreteOperator, psi) -> Certificate:
    """``min_i (G psi)_i / psi_i``: a lower bound for the Dirichlet eigenvalue.

    ``psi`` lives on interior nodes and is zero on the boundary by elimination.
    An expression is sampled on interior nodes.
    """
    values, source = _grid_values(opr, psi)
    _check_positive(values)
    q = opr.apply(values) / values
    return Certificate("lower", float(q.min()), TAG_VANISHING, source, q)


def cw_upper(opr: DiscreteOperator, psi, mode: str | None = None) -> Certificate:
    """``max_i (G psi)_i / psi_i``: an upper bound for the Dirichlet eigenvalue.

    For a grid function the stencil sees zero boundary data.  For an expression
    ``psi`` need not vanish on the boundary:

    * ``mode="analytic"`` (default) applies the continuous operator to ``psi``
      exactly, by forward-mode differentiation, at the interior nodes;
    * ``mode="ghost"`` applies the discrete stencil with ``psi`` evaluated at
      the boundary and ghost nodes.
    """
    if isinstance(psi, (str, Expr)):
        e = parse_expr(psi)
        mode = mode or "analytic"
        pts = opr.grid.points
        values = e.evaluate(pts)
        _check_positive(values)
        if mode == "analytic":
            Gpsi = opr.spec.replace(sense=opr.sense).analytic_operator(e, pts)
        elif mode == "ghost":
            lat_vals = e.evaluate(opr.grid.lattice_points)
            Gpsi = opr.apply_with_boundary(lat_vals)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        q = Gpsi / values
        return Certificate("upper", float(q.max()), TAG_INTERIOR, str(e), q, mode)
    values = np.asarray(psi, dtype=float)
    _check_positive(values)
    q = opr.apply(values) / values
    return Certificate("upper", float(q.max()), TAG_VANISHING, "grid-function", q)


# --------------------------------------------------------------------------- minimax

@dataclass
class MinimaxResult:
    value: float        # inf_w of the mu-weighted quotient at the final measure
    upper: float        # max_i quotient at the final w: an upper bound for the eigenvalue
    gap: float
    mu: np.ndarray = field(repr=False)
    w: np.ndarray = field(repr=False)
    steps: int = 0
    converged: bool = False

    def to_dict(self) -> dict:
        return {"value": self.value, "upper": self.upper, "gap": self.gap, "steps": self.steps,
                "converged": self.converged}


class _LogQuotient:
    """Per-control quotients ``(H_k e^w)_i / e^{w_i}`` and their weighted sum in log coordinates.

    Dense storage: the minimax evaluator is meant for small grids.
    """

    def __init__(self, matrices, sense: str):
        self.sense = sense
        dense = np.stack([M.toarray() if sp.issparse(M) else np.array(M, dtype=float)
                          for M in matrices])
        idx = np.arange(dense.shape[1])
        self.diag = dense[:, idx, idx].copy()
        dense[:, idx, idx] = 0.0
        self.off = dense
        self.rows = idx

    def ratios(self, w: np.ndarray) -> np.ndarray:
        """``e^{w_j - w_i}``, clipped to stay finite."""
        return np.exp(np.clip(w[None, :] - w[:, None], -700.0, 700.0))

    def control_quotients(self, w: np.ndarray) -> np.ndarray:
        return self.diag + (self.off * self.ratios(w)[None]).sum(axis=2)

    def quotients(self, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-node quotient of the nonlinear operator and the selected control."""
        Q = self.control_quotients(w)
        k = np.argmax(Q, axis=0) if self.sense == "max" else np.argmin(Q, axis=0)
        return Q[k, self.rows], k

    def value_grad(self, w: np.ndarray, nu: np.ndarray, hessian: bool = False):
        """``sum_{k,i} nu_ki Q_ki(w)`` with gradient (and Hessian) in ``w``."""
        T = self.off * self.ratios(w)[None]   # a^k_ij e^{w_j - w_i}
        Q = self.diag + T.sum(axis=2)
        grad = np.einsum("ki,kij->j", nu, T) - (nu * T.sum(axis=2)).sum(axis=0)
        f = float((nu * Q).sum())
        if not hessian:
            return f, grad, Q
        # each term is exp of a linear form in w_j - w_i: a weighted graph Laplacian
        W = np.einsum("ki,kij->ij", nu, T)
        W = W + W.T
        H = np.diag(W.sum(axis=1)) - W
        return f, grad, Q, H


def _inner_minimize(obj: _LogQuotient, nu: np.ndarray, w: np.ndarray, max_iter: int = 200):
    """Minimise ``sum_{k,i} nu_ki Q_ki(w)`` over ``w``.

    Damped Newton on the active-control (generalised) Hessian; Armijo backtracking
    with factor 0.5 and slope 1e-4; plain gradient steps if the Newton direction
    is not a descent direction.
    """
    n = w.size
    ones = np.full((n, n), 1.0 / n)
    f, g, Q, H = obj.value_grad(w, nu, hessian=True)
    for _ in range(max_iter):
        scale = np.trace(H) / n + 1e-300
        try:
            d = -np.linalg.solve(H + scale * ones, g)   # constants are the null space
        except np.linalg.LinAlgError:
            d = -g
        slope = float(g @ d)
        if slope >= 0:
            d, slope = -g, -float(g @ g)
        if -slope <= 1e-15 * (abs(f) + 1.0):
            break
        t = 1.0
        while True:
            w_new = w + t * d
            f_new = obj.value_grad(w_new, nu)[0]
            if (np.isfinite(f_new) and f_new <= f + 1e-4 * t * slope) or t < 1e-12:
                break
            t *= 0.5
        if t < 1e-12:
            break
        w = w_new - w_new.mean()
        f, g, Q, H = obj.value_grad(w, nu, hessian=True)
    return w, f, Q


def _mirror_ascent(obj: _LogQuotient, nu: np.ndarray, w: np.ndarray, steps: int, tol: float):
    w, val, Q = _inner_minimize(obj, nu, w)
    eta = 1.0 / max(1e-12, float(np.ptp(Q)))
    upper = float(obj.quotients(w)[0].max())
    step = 0
    for step in range(1, steps + 1):
        if upper - val <= tol:
            break
        logits = np.log(nu) + eta * (Q - Q.max())
        cand = np.exp(logits - logits.max())
        cand /= cand.sum()
        w_c, val_c, Q_c = _inner_minimize(obj, cand, w)
        if val_c >= val - 1e-15 * (1 + abs(val)):
            nu, w, val, Q = cand, w_c, val_c, Q_c
            eta *= 1.5
            upper = min(upper, float(obj.quotients(w)[0].max()))
        else:
            eta *= 0.5
    return nu, w, val, upper, step


def _logit_ascent(obj: _LogQuotient, nu: np.ndarray, w: np.ndarray, steps: int):
    shape = nu.shape
    state = {"w": w, "best": (-np.inf, nu, w)}

    def negative(theta):
        t = theta.reshape(shape)
        p = np.exp(t - t.max())
        p /= p.sum()
        # warm start, guarded by a cold start: a previous near-zero weight can
        # have let the warm start drift far out
        w_in, val, Q = _inner_minimize(obj, p, state["w"])
        cold = _inner_minimize(obj, p, np.zeros_like(state["w"]))
        if not cold[1] >= val:
            w_in, val, Q = cold
        if not np.isfinite(val):
            return 1e300, np.zeros(theta.size)
        state["w"] = w_in
        if val > state["best"][0]:
            state["best"] = (val, p, w_in)
        # Danskin: d val / d nu = Q; chain rule through the softmax
        return -val, -(p * (Q - (p * Q).sum())).ravel()

    res = minimize(negative, np.log(nu).ravel(), jac=True, method="L-BFGS-B",
                   options={"maxiter": steps, "ftol": 1e-15, "gtol": 1e-13})
    val, nu, w = state["best"]
    return nu, w, val, float(obj.quotients(w)[0].max()), int(res.nit)


def minimax_measure(opr, mu_steps: int = 2000, tol: float = 1e-5,
                    method: str = "logit", raise_on_failure: bool = True) -> MinimaxResult:
    """``sup_mu inf_psi sum_i mu_i (H psi)_i / psi_i`` for the max-sense operator.

    With ``psi = e^w`` each quotient is a sum of exponentials of linear forms in
    ``w``, hence convex.  The max over controls is linear in per-node control
    weights, so the supremum runs over joint weights ``nu`` on (control, node)
    pairs and the inner problem is smooth.  The inner infimum is taken by damped
    Newton.  The outer supremum works in softmax coordinates, so weights stay
    positive: ``method="logit"`` runs L-BFGS on the logits, ``method="mirror"``
    takes multiplicative ascent steps.  ``max_i`` of the quotients at the final
    ``w`` bounds the eigenvalue from above; its distance to the value is the gap.

    ``opr`` may also be a Metzler matrix or a list of them (one per control).
    """
    if isinstance(opr, DiscreteOperator):
        if opr.sense != "max":
            raise ValueError("minimax_measure requires a max-sense operator")
        matrices = opr.matrices
    else:
        matrices = list(opr) if isinstance(opr, (list, tuple)) else [opr]
    obj = _LogQuotient(matrices, "max")
    K, n = obj.off.shape[:2]
    nu = np.full((K, n), 1.0 / (K * n))
    w = np.zeros(n)
    if method == "logit":
        nu, w, val, upper, step = _logit_ascent(obj, nu, w, mu_steps)
    elif method == "mirror":
        nu, w, val, upper, step = _mirror_ascent(obj, nu, w, mu_steps, tol)
    else:
        raise ValueError(f"unknown method {method!r}")
    gap = upper - val
    res = MinimaxResult(float(val), upper, float(gap), nu.sum(axis=0), w, step, gap <= tol)
    if not res.converged and raise_on_failure:
        raise NoConvergence(f"minimax gap {gap:.3g} above tol {tol:.3g} after {step} steps",
                            last=res)
    return res


# -------------------------------------------------------------- maximum principles

@dataclass
class Verdict:
    applicable: bool
    holds: bool
    reason: str
    kappa: float = np.nan
    max_deviation: float = np.nan
    counterexample_node: int | None = None
    branch: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def ground_state_check(opr: DiscreteOperator, phi: np.ndarray, lam: float, Phi: np.ndarray,
                       tol: float = 1e-6) -> Verdict:
    """A supersolution at the principal eigenvalue, positive somewhere, must be a
    positive multiple of the ground state.  ``tol`` is relative to ``||phi||``."""
    phi = np.asarray(phi, dtype=float)
    Phi = np.asarray(Phi, dtype=float)
    if not np.all(Phi > 0):
        raise NonPositiveTestFunction("ground state must be positive")
    scale = float(np.abs(phi).max())
    if scale == 0 or phi.max() <= tol * scale:
        return Verdict(False, False, "phi is not positive anywhere")
    defect = opr.apply(phi) - lam * phi
    slack = tol * scale * max(1.0, abs(lam))
    if defect.min() < -slack:
        i = int(np.argmin(defect))
        return Verdict(False, False, f"G phi >= lam phi fails at node {i} "
                                     f"(defect {defect[i]:.3g})", counterexample_node=i)
    ratio = phi / Phi
    kappa = float(ratio[opr.grid.anchor])
    dev = np.abs(ratio - kappa) / abs(kappa) if kappa != 0 else np.full_like(ratio, np.inf)
    i = int(np.argmax(dev))
    if dev[i] < tol:
        return Verdict(True, True, "proportional to the ground state", kappa, float(dev[i]))
    log.error("ground-state check failed at node %d; this indicates a solver defect", i)
    return Verdict(True, False, "not proportional to the ground state", kappa, float(dev[i]), i)


def negativity_check(opr: DiscreteOperator, phi: np.ndarray, lam: float,
                     tol: float = 1e-8) -> Verdict:
    """With a negative principal eigenvalue, ``G phi >= 0`` forces ``phi < 0`` or ``phi = 0``.

    ``G phi`` is evaluated with the selector of ``phi`` itself.  ``tol`` is absolute.
    """
    phi = np.asarray(phi, dtype=float)
    if lam >= -tol:
        return Verdict(False, False, "principal eigenvalue is not negative")
    Gphi = opr.apply(phi)
    if Gphi.min() < -tol:
        i = int(np.argmin(Gphi))
        return Verdict(False, False, f"G phi >= 0 fails at node {i}", counterexample_node=i)
    if phi.max() > tol:
        i = int(np.argmax(phi))
        return Verdict(True, False, "phi positive at a node", counterexample_node=i)
    if phi.max() > -tol:
        if np.abs(phi).max() <= tol:
            return Verdict(True, True, "phi vanishes identically", branch="zero")
        i = int(np.argmax(phi))
        return Verdict(True, False, "phi touches zero without vanishing", counterexample_node=i)
    return Verdict(True, True, "phi strictly negative", branch="negative")


@dataclass
class GapEvidence:
    lam: float
    lam_min: float
    lam_max: float
    starts: int
    nontrivial_found: int
    final_norms: list

    @property
    def holds(self) -> bool:
        return self.nontrivial_found == 0


def gap_check(opr: DiscreteOperator, lam: float, n_starts: int = 20, seed: int = 0,
              max_newton: int = 50) -> GapEvidence:
    """Search for nonzero solutions of ``G phi = lam phi`` with ``lam`` strictly between
    the min- and max-sense principal eigenvalues, by semismooth Newton from random
    starts.  Statistical evidence only."""
    gmin = opr.with_sense("min")
    lam_min = policy_iteration(gmin).lam
    lam_max = policy_iteration(opr.with_sense("max")).lam
    if not lam_min < lam < lam_max:
        raise ValueError(f"lambda={lam} not strictly between {lam_min} and {lam_max}")
    rng = np.random.default_rng(seed)
    eye = sp.identity(opr.N, format="csc")
    norms = []
    found = 0
    for _ in range(n_starts):
        phi = rng.standard_normal(opr.N)
        scale0 = np.abs(phi).max()
        for _ in range(max_newton):
            F = gmin.apply(phi) - lam * phi
            if np.abs(F).max() <= 1e-12 * scale0:
                break
            J = (gmin.frozen(gmin.select_policy(phi)) - lam * eye).tocsc()
            phi = phi - spsolve(J, F)
        nrm = float(np.abs(phi).max() / scale0)
        norms.append(nrm)
        if nrm > 1e-8:
            found += 1
    return GapEvidence(lam, lam_min, lam_max, n_starts, found, norms)
