"""Problem specifications: coefficient fields, control sets, Lyapunov data."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import qmc

from .errors import DegenerateDiffusion, SpecError, UnboundedBelowPotential, UnknownIdentifier
from .expr import Expr, parse_expr

log = logging.getLogger(__name__)

DEFAULT_C_FLOOR = -1e8


@dataclass(frozen=True)
class ControlSet:
    """Finite sample of the compact control set.  ``dim == 0`` is the uncontrolled case."""

    points: np.ndarray  # shape (K, m)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1) if pts.size else np.zeros((1, 0))
        if pts.shape[0] < 1:
            raise SpecError("control set must contain at least one point")
        if len({tuple(p) for p in pts}) != len(pts):
            raise SpecError("control points must be distinct")
        object.__setattr__(self, "points", pts)

    @classmethod
    def uncontrolled(cls) -> "ControlSet":
        return cls(np.zeros((1, 0)))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class OperatorSpec:
    """Continuous problem ``a:D^2 f + opt_u [b(x,u).Df + c(x,u) f]``.

    ``sense == "min"`` gives the concave operator G, ``"max"`` the extremal operator H.
    """

    dim: int
    a: tuple  # d x d tuple of Expr, functions of x only
    b: tuple  # d tuple of Expr in (x, u)
    c: Expr
    sense: str = "min"
    controls: ControlSet = field(default_factory=ControlSet.uncontrolled)

    def __post_init__(self):
        d = self.dim
        if d not in (1, 2, 3):
            raise SpecError(f"dimension must be 1, 2 or 3, got {d}")
        a = tuple(tuple(parse_expr(e) for e in row) for row in self.a)
        b = tuple(parse_expr(e) for e in self.b)
        c = parse_expr(self.c)
        if len(a) != d or any(len(row) != d for row in a):
            raise SpecError("diffusion matrix must be d x d")
        if len(b) != d:
            raise SpecError("drift must have d components")
        if self.sense not in ("min", "max"):
            raise SpecError(f"sense must be 'min' or 'max', got {self.sense!r}")
        m = self.controls.dim
        for e in [*sum(a, ()), *b, c]:
            if e.max_index("x") >= d:
                raise UnknownIdentifier(f"x{e.max_index('x')}")
            if e.max_index("u") >= m:
                raise UnknownIdentifier(f"u{e.max_index('u')}")
        for e in sum(a, ()):
            if e.depends_on("u"):
                raise SpecError("diffusion may not depend on the control")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def n_controls(self) -> int:
        return len(self.controls)

    def replace(self, **kw) -> "OperatorSpec":
        fields = dict(dim=self.dim, a=self.a, b=self.b, c=self.c, sense=self.sense,
                      controls=self.controls)
        fields.update(kw)
        return OperatorSpec(**fields)

    def with_potential_shift(self, c0: float) -> "OperatorSpec":
        return self.replace(c=self.c + c0)

    # -- pointwise coefficient evaluation -------------------------------------------
    def diffusion(self, x: np.ndarray) -> np.ndarray:
        """Symmetrised a(x), shape (n, d, d)."""
        x = np.atleast_2d(x)
        n, d = x.shape[0], self.dim
        A = np.empty((n, d, d))
        for i in range(d):
            for j in range(d):
                A[:, i, j] = self.a[i][j].evaluate(x)
        return 0.5 * (A + A.transpose(0, 2, 1))

    def drift(self, x: np.ndarray, k: int | None = None, u=None) -> np.ndarray:
        """b(x, u_k), shape (n, d).  ``u`` may be given per point instead of ``k``."""
        x = np.atleast_2d(x)
        if u is None:
            u = self.controls.points[k or 0]
        return np.stack([e.evaluate(x, u) for e in self.b], axis=1)

    def potential(self, x: np.ndarray, k: int | None = None, u=None) -> np.ndarray:
        x = np.atleast_2d(x)
        if u is None:
            u = self.controls.points[k or 0]
        return self.c.evaluate(x, u)

    def analytic_apply(self, psi: Expr, x: np.ndarray) -> np.ndarray:
        """Per-control values of ``L_u psi + c(.,u) psi`` at points x, shape (K, n)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        jet = psi.jet(x)
        A = self.diffusion(x)
        second = np.einsum("nij,nij->n", A, jet.H)
        out = np.empty((self.n_controls, x.shape[0]))
        for k in range(self.n_controls):
            out[k] = second + np.einsum("ni,ni->n", self.drift(x, k), jet.g) \
                + self.potential(x, k) * jet.v
        return out

    def analytic_operator(self, psi: Expr, x: np.ndarray) -> np.ndarray:
        vals = self.analytic_apply(psi, x)
        return vals.min(axis=0) if self.sense == "min" else vals.max(axis=0)

    # -- serialization ----------------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "dimension": self.dim,
            "a": [[str(e) for e in row] for row in self.a],
            "b": [str(e) for e in self.b],
            "c": str(self.c),
            "sense": self.sense,
            "controls": self.controls.points.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "OperatorSpec":
        d = int(data["dimension"])
        controls = data.get("controls")
        if not controls or controls == [[]]:
            cs = ControlSet.uncontrolled()
        else:
            cs = ControlSet(np.array([np.atleast_1d(np.asarray(p, dtype=float)) for p in controls]))
        a = data.get("a", [[1.0 if i == j else 0.0 for j in range(d)] for i in range(d)])
        if d == 1 and not isinstance(a, list):
            a = [[a]]
        b = data.get("b", [0.0] * d)
        if not isinstance(b, list):
            b = [b]
        return cls(dim=d, a=a, b=b, c=data.get("c", 0.0), sense=data.get("sense", "min"),
                   controls=cs)


@dataclass(frozen=True)
class LyapunovSpec:
    """Drift-condition data: ``sup_u L_u V <= kappa1 1_K - rate * V`` with K = closed ball r_K.

    ``variant == "gamma"`` uses the constant rate ``gamma``; ``"ell"`` uses the field ``ell``.
    """

    V: Expr
    kappa1: float
    rK: float
    variant: str = "gamma"
    gamma: float | None = None
    ell: Expr | None = None

    def __post_init__(self):
        object.__setattr__(self, "V", parse_expr(self.V))
        if self.ell is not None:
            object.__setattr__(self, "ell", parse_expr(self.ell))
        if self.variant not in ("ell", "gamma"):
            raise SpecError(f"unknown Lyapunov variant {self.variant!r}")
        if self.variant == "gamma" and self.gamma is None:
            raise SpecError("variant 'gamma' requires gamma")
        if self.variant == "ell" and self.ell is None:
            raise SpecError("variant 'ell' requires ell")

    @classmethod
    def from_dict(cls, data: dict) -> "LyapunovSpec":
        variant = data.get("variant", "gamma" if "gamma" in data else "ell")
        return cls(V=data["V"], kappa1=float(data.get("kappa1", 0.0)), rK=float(data.get("rK", 0.0)),
                   variant=variant, gamma=data.get("gamma"), ell=data.get("ell"))

    def to_dict(self) -> dict:
        out = {"V": str(self.V), "kappa1": self.kappa1, "rK": self.rK, "variant": self.variant}
        if self.gamma is not None:
            out["gamma"] = self.gamma
        if self.ell is not None:
            out["ell"] = str(self.ell)
        return out


@dataclass(frozen=True)
class Problem:
    spec: OperatorSpec
    lyapunov: LyapunovSpec | None = None


def load_problem(path) -> Problem:
    """Read a JSON problem file."""
    data = json.loads(Path(path).read_text())
    spec = OperatorSpec.from_dict(data)
    lyap = LyapunovSpec.from_dict(data["lyapunov"]) if data.get("lyapunov") else None
    return Problem(spec, lyap)


def load_spec(path) -> OperatorSpec:
    return load_problem(path).spec


# ---------------------------------------------------------------------------- domains

@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.atleast_1d(np.asarray(self.lo, dtype=float)))
        object.__setattr__(self, "hi", np.atleast_1d(np.asarray(self.hi, dtype=float)))
        if self.lo.shape != self.hi.shape or np.any(self.hi < self.lo):
            raise SpecError("invalid box")

    @classmethod
    def symmetric(cls, R: float, d: int) -> "Box":
        return cls(-R * np.ones(d), R * np.ones(d))

    @property
    def dim(self) -> int:
        return self.lo.size

    def samples(self, n: int) -> np.ndarray:
        """Nested deterministic sample: the centre, then an unscrambled Halton sequence.

        The first ``n`` points for ``n' > n`` contain the first ``n`` points.
        """
        centre = 0.5 * (self.lo + self.hi)
        if n <= 1:
            return centre[None, :]
        halton = qmc.Halton(d=self.dim, scramble=False).random(n - 1)
        return np.vstack([centre, self.lo + halton * (self.hi - self.lo)])


@dataclass
class ValidationReport:
    n_samples: int
    min_diffusion_eig: float
    min_potential: float
    max_drift_norm: float
    c_floor: float
    passed: bool
    assertions: tuple = (
        "(A1) local Lipschitz continuity: user assertion, not verified",
        "(A2) affine growth: user assertion, not verified",
        "c bounded below: verified on the sampled domain only",
    )

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "min_diffusion_eig": self.min_diffusion_eig,
            "min_potential": self.min_potential,
            "max_drift_norm": self.max_drift_norm,
            "c_floor": self.c_floor,
            "passed": self.passed,
            "assertions": list(self.assertions),
        }


def validate_spec(spec: OperatorSpec, domain: Box, n_samples: int = 256,
                  c_floor: float = DEFAULT_C_FLOOR) -> ValidationReport:
    """Sample-based checks of nondegeneracy, finiteness and a lower bound on c."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if domain.dim != spec.dim:
        raise SpecError("domain dimension does not match spec")
    pts = domain.samples(n_samples)
    A = spec.diffusion(pts)
    if not np.all(np.isfinite(A)):
        bad = np.argwhere(~np.isfinite(A).all(axis=(1, 2)))[0, 0]
        raise SpecError(f"diffusion not finite at x={pts[bad].tolist()}")
    eigs = np.linalg.eigvalsh(A).min(axis=1)
    worst = int(np.argmin(eigs))
    if eigs[worst] <= 0:
        raise DegenerateDiffusion(pts[worst], float(eigs[worst]))
    min_c = np.inf
    max_b = 0.0
    for k in range(spec.n_controls):
        b = spec.drift(pts, k)
        c = spec.potential(pts, k)
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
            raise SpecError(f"drift or potential not finite for control {k}")
        i = int(np.argmin(c))
        if c[i] < c_floor:
            raise UnboundedBelowPotential(pts[i], float(c[i]), c_floor)
        min_c = min(min_c, float(c[i]))
        max_b = max(max_b, float(np.linalg.norm(b, axis=1).max()))
    log.info("validated spec on %d samples; c floor %g, min c %g", n_samples, c_floor, min_c)
    return ValidationReport(n_samples, float(eigs[worst]), min_c, max_b, c_floor, True)


def drift_laplacian_spec(sense: str = "min") -> OperatorSpec:
    """``phi'' - phi'`` on the line."""
    return OperatorSpec(dim=1, a=[["1"]], b=["-1"], c="0", sense=sense)


def laplacian_spec(d: int = 1) -> OperatorSpec:
    a = [["1" if i == j else "0" for j in range(d)] for i in range(d)]
    return OperatorSpec(dim=d, a=a, b=["0"] * d, c="0")


def isotropic_spec(d: int, drift: Sequence, c="0", controls=None, sense: str = "min") -> OperatorSpec:
    a = [["1" if i == j else "0" for j in range(d)] for i in range(d)]
    cs = ControlSet.uncontrolled() if controls is None else ControlSet(np.asarray(controls, dtype=float))
    return OperatorSpec(dim=d, a=a, b=list(drift), c=c, sense=sense, controls=cs)
