"""Monte Carlo checks: Euler-Maruyama paths of the controlled diffusion, exit-time
Feynman-Kac functionals and the risk-sensitive growth rate."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import logsumexp

from .discretize import Grid
from .errors import ExcessTruncation
from .expr import Expr, parse_expr
from .model import OperatorSpec

log = logging.getLogger(__name__)

GENERATOR = "numpy Philox4x64, SeedSequence([seed, batch])"

OUTER, INNER, TRUNCATED = 1, 2, 0


@dataclass(frozen=True)
class PathConfig:
    dt: float = 1e-3
    t_max: float = 50.0
    seed: int = 0
    n_paths: int = 10_000
    exit_radius: float = np.inf        # stop on leaving this ball (or box)
    hit_radius: float = 0.0            # stop on entering this ball; 0 disables
    shape: str = "ball"                # shape of the outer region
    batch_size: int = 100_000
    threads: int = 1
    bridge: bool = True                # Brownian-bridge test for crossings between steps

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.shape not in ("ball", "box"):
            raise ValueError("shape must be 'ball' or 'box'")

    def replace(self, **kw) -> "PathConfig":
        return PathConfig(**{**self.__dict__, **kw})


@dataclass
class PathSummary:
    tau: np.ndarray            # stopping time, t_max for truncated paths
    exit_point: np.ndarray     # (n, d); projected onto the boundary that stopped the path
    integral: np.ndarray       # int_0^tau c(X_s, v(X_s)) ds, left-endpoint rule
    kind: np.ndarray           # OUTER, INNER or TRUNCATED

    @property
    def truncated(self) -> int:
        return int(np.sum(self.kind == TRUNCATED))

    @property
    def n(self) -> int:
        return self.tau.size


@dataclass
class MCEstimate:
    mean: float
    stderr: float
    n_paths: int
    truncated: int
    dt: float
    seed: int
    generator: str = GENERATOR

    def to_dict(self) -> dict:
        return {"estimate": self.mean, "stderr": self.stderr, "n_paths": self.n_paths,
                "truncated": self.truncated, "dt": self.dt, "seed": self.seed,
                "generator": self.generator}


def _rng(seed: int, batch: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, batch])))


def policy_function(spec: OperatorSpec, policy) -> Callable[[np.ndarray], np.ndarray]:
    """Feedback control ``x -> u(x)`` of shape (n, m).

    ``policy`` may be a control index, a callable, a list of expressions (one
    per control component) or a ``(grid, indices)`` pair read by nearest node.
    """
    pts = spec.controls.points
    if policy is None or isinstance(policy, (int, np.integer)):
        u = pts[int(policy or 0)]
        return lambda x: np.broadcast_to(u, (x.shape[0], u.size))
    if callable(policy) and not isinstance(policy, Expr):
        return lambda x: np.atleast_2d(np.asarray(policy(x), dtype=float)).reshape(x.shape[0], -1)
    if isinstance(policy, tuple) and len(policy) == 2 and isinstance(policy[0], Grid):
        grid, idx = policy
        tree = cKDTree(grid.points)
        idx = np.asarray(idx, dtype=int)
        return lambda x: pts[idx[tree.query(x)[1]]]
    exprs = [parse_expr(e) for e in (policy if isinstance(policy, (list, tuple)) else [policy])]
    return lambda x: np.stack([np.broadcast_to(e.evaluate(x), (x.shape[0],)) for e in exprs], axis=1)


def _sigma_function(spec: OperatorSpec):
    """``x -> sigma(x)`` with ``sigma sigma^T = 2a``, by Cholesky; cached if a is constant."""
    if all(e.is_constant for row in spec.a for e in row):
        S = np.linalg.cholesky(2.0 * spec.diffusion(np.zeros((1, spec.dim)))[0])
        return lambda x: np.broadcast_to(S, (x.shape[0], spec.dim, spec.dim)), S
    return lambda x: np.linalg.cholesky(2.0 * spec.diffusion(x)), None


def _coefficient(spec: OperatorSpec, exprs, ufun):
    """Vectorised ``(x) -> values`` for a list of expressions in (x, u); constants short-cut."""
    if all(e.is_constant for e in exprs):
        vals = np.array([e.evaluate(np.zeros(spec.dim)) for e in exprs])
        return lambda x: vals
    uses_u = any(e.max_index("u") >= 0 for e in exprs)

    def f(x):
        u = ufun(x) if uses_u else None
        return np.stack([np.broadcast_to(e.evaluate(x, u), (x.shape[0],)) for e in exprs], axis=1)
    return f


def _radius(x: np.ndarray) -> np.ndarray:
    return np.abs(x[:, 0]) if x.shape[1] == 1 else np.sqrt(np.einsum("ni,ni->n", x, x))


def _outer_distance(x: np.ndarray, cfg: PathConfig) -> np.ndarray:
    if cfg.shape == "box":
        return cfg.exit_radius - np.abs(x).max(axis=1)
    return cfg.exit_radius - _radius(x)


def _normal(x: np.ndarray, cfg: PathConfig, inner: bool) -> np.ndarray:
    if inner or cfg.shape == "ball":
        r = _radius(x)[:, None]
        return np.divide(x, r, out=np.full_like(x, 1.0 / np.sqrt(x.shape[1])), where=r > 0)
    n = np.zeros_like(x)
    n[np.arange(x.shape[0]), np.argmax(np.abs(x), axis=1)] = 1.0
    return n


def _normal_variance(x: np.ndarray, S: np.ndarray, cfg: PathConfig, inner: bool):
    """``n^T (2a) n`` along the boundary normal; ``S`` is constant (d, d) or per path."""
    if S.ndim == 2 and x.shape[1] == 1:
        return float(S[0, 0] ** 2)
    nrm = _normal(x, cfg, inner)
    v = nrm @ S if S.ndim == 2 else np.einsum("ni,nij->nj", nrm, S)
    return np.einsum("ni,ni->n", v, v)


def _project(x: np.ndarray, radius: float, cfg: PathConfig, inner: bool) -> np.ndarray:
    if inner or cfg.shape == "ball":
        r = _radius(x)[:, None]
        return np.divide(x * radius, r, out=x.copy(), where=r > 0)
    return np.clip(x, -radius, radius)


def _bridge_cross(d0, d1, var, step, rng) -> np.ndarray:
    """Crossing between two inside points, with probability ``exp(-2 d0 d1 / (var dt))``.

    Uniforms are drawn only where that probability exceeds ``e^-40``.
    """
    expo = 2.0 * np.maximum(d0, 0.0) * np.maximum(d1, 0.0) / (var * step)
    out = np.zeros(d0.size, dtype=bool)
    near = np.flatnonzero(expo < 40.0)
    if near.size:
        out[near] = rng.random(near.size) < np.exp(-expo[near])
    return out


def _simulate_batch(spec, ufun, sigma_fn, S_const, x0, n, cfg: PathConfig, rng) -> PathSummary:
    d = spec.dim
    drift = _coefficient(spec, spec.b, ufun)
    const_drift = all(e.is_constant for e in spec.b)
    zero_drift = const_drift and not np.any(drift(None))
    pot = _coefficient(spec, [spec.c], ufun)
    const_pot = spec.c.is_constant
    tau = np.full(n, cfg.t_max)
    exit_point = np.tile(np.asarray(x0, dtype=float), (n, 1))
    integral = np.zeros(n)
    kind = np.zeros(n, dtype=np.int8)
    # compacted state of the paths still running
    ids = np.arange(n)
    x = exit_point.copy()
    acc = np.zeros(n)
    t = 0.0
    outer = cfg.exit_radius < np.inf
    inner = cfg.hit_radius > 0
    while ids.size and t < cfg.t_max - 1e-12 * cfg.dt:
        step = min(cfg.dt, cfg.t_max - t)
        m = ids.size
        if S_const is not None:
            if d == 1:
                xn = x + rng.standard_normal((m, 1)) * (S_const[0, 0] * np.sqrt(step))
            else:
                xn = x + rng.standard_normal((m, d)) @ (np.sqrt(step) * S_const.T)
        else:
            S = sigma_fn(x)
            xn = x + np.einsum("nij,nj->ni", S, rng.standard_normal((m, d)) * np.sqrt(step))
        if not zero_drift:
            xn += drift(x) * step
        Sx = S_const if S_const is not None else S

        stop = np.zeros(m, dtype=np.int8)
        if outer:
            d0, d1 = _outer_distance(x, cfg), _outer_distance(xn, cfg)
            hit = d1 <= 0
            if cfg.bridge:
                hit |= _bridge_cross(d0, d1, _normal_variance(x, Sx, cfg, False), step, rng)
            stop[hit] = OUTER
            od0, od1 = d0, d1
        if inner:
            d0 = _radius(x) - cfg.hit_radius
            d1 = _radius(xn) - cfg.hit_radius
            hit = (d1 <= 0) & (stop == 0)
            if cfg.bridge:
                hit |= (stop == 0) & _bridge_cross(d0, d1, _normal_variance(x, Sx, cfg, True), step, rng)
            stop[hit] = INNER
            id0, id1 = d0, d1

        done = np.flatnonzero(stop)
        if not const_pot:
            cval = pot(x)[:, 0]
            acc += cval * step
        if done.size:
            # fraction of the step before stopping: linear for sharp crossings, 1/2 for bridge ones
            frac = np.full(done.size, 0.5)
            for code, on, dd in ((OUTER, outer, (od0, od1) if outer else None),
                                 (INNER, inner, (id0, id1) if inner else None)):
                if not on:
                    continue
                sel = stop[done] == code
                a0, a1 = dd[0][done], dd[1][done]
                sharp = sel & (a1 <= 0)
                frac[sharp] = a0[sharp] / np.maximum(a0[sharp] - a1[sharp], 1e-300)
            if not const_pot:
                acc[done] -= cval[done] * step * (1.0 - frac)
            idx = ids[done]
            xe = x[done] + frac[:, None] * (xn[done] - x[done])
            sd = stop[done]
            for code, radius, is_inner in ((OUTER, cfg.exit_radius, False), (INNER, cfg.hit_radius, True)):
                sel = sd == code
                if sel.any():
                    xe[sel] = _project(xe[sel], radius, cfg, is_inner)
            tau[idx] = t + frac * step
            exit_point[idx] = xe
            integral[idx] = acc[done]
            kind[idx] = sd
            keep = stop == 0
            ids, x, acc = ids[keep], xn[keep], acc[keep]
        else:
            x = xn
        t += step
    exit_point[ids] = x
    integral[ids] = acc
    if const_pot:
        integral = float(pot(None)[0]) * tau
    return PathSummary(tau, exit_point, integral, kind)


def simulate_exit(spec: OperatorSpec, policy, x0, cfg: PathConfig) -> PathSummary:
    """Euler-Maruyama paths from ``x0`` until they leave the outer region, enter
    the inner ball, or reach ``t_max``.

    Crossings are detected at the first step past the boundary and, with
    ``cfg.bridge``, also between steps by the Brownian-bridge crossing
    probability ``exp(-2 d0 d1 / (s^2 dt))`` for the local normal variance
    ``s^2``.  Paths are split into batches with independent seeded streams, so
    results do not depend on ``cfg.threads``.
    """
    x0 = np.asarray(x0, dtype=float).reshape(spec.dim)
    if cfg.exit_radius < np.inf and _outer_distance(x0[None], cfg)[0] <= 0:
        raise ValueError("x0 is outside the outer region")
    if cfg.hit_radius > 0 and np.linalg.norm(x0) <= cfg.hit_radius:
        raise ValueError("x0 is inside the inner ball")
    ufun = policy_function(spec, policy)
    sigma_fn, S_const = _sigma_function(spec)
    sizes = [cfg.batch_size] * (cfg.n_paths // cfg.batch_size)
    if cfg.n_paths % cfg.batch_size:
        sizes.append(cfg.n_paths % cfg.batch_size)

    def run(i):
        return _simulate_batch(spec, ufun, sigma_fn, S_const, x0, sizes[i], cfg, _rng(cfg.seed, i))

    if cfg.threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(i) for i in range(len(sizes))]
    return PathSummary(np.concatenate([p.tau for p in parts]),
                       np.concatenate([p.exit_point for p in parts]),
                       np.concatenate([p.integral for p in parts]),
                       np.concatenate([p.kind for p in parts]))


def _estimate(values: np.ndarray, summary: PathSummary, cfg: PathConfig) -> MCEstimate:
    n = values.size
    se = float(values.std(ddof=1) / np.sqrt(n)) if n > 1 else np.nan
    return MCEstimate(float(values.mean()), se, n, summary.truncated, cfg.dt, cfg.seed)


def expected_exit_time(spec: OperatorSpec, policy, x0, cfg: PathConfig) -> MCEstimate:
    """``E_x0[tau]``; truncated paths count with ``t_max`` and are reported."""
    s = simulate_exit(spec, policy, x0, cfg)
    return _estimate(s.tau, s, cfg)


@dataclass
class FKVerdict:
    x: list
    target: float              # grid value Phi(x)
    estimate: MCEstimate       # at dt / 4
    coarse: MCEstimate         # at dt
    allowance: float           # |fine - coarse|: time-step bias allowance
    passed: bool

    def to_dict(self) -> dict:
        return {"x": self.x, "target": self.target, "estimate": self.estimate.to_dict(),
                "coarse": self.coarse.to_dict(), "allowance": self.allowance,
                "passed": self.passed}


def _fk_estimate(spec, policy, lam, phi_at, x, r, cfg):
    s = simulate_exit(spec, policy, x, cfg.replace(hit_radius=r))
    frac = s.truncated / s.n
    if frac > 0.01:
        raise ExcessTruncation(f"{100 * frac:.2g}% of paths reached t_max", fraction=frac)
    logw = s.integral - lam * s.tau
    val = np.where(s.kind == INNER, phi_at(s.exit_point), 0.0)
    m = logw.max()
    est = _estimate(np.exp(logw - m) * val, s, cfg)
    scale = np.exp(m)
    est.mean *= scale
    est.stderr *= scale
    return est


def feynman_kac_verify(spec: OperatorSpec, policy, lam: float, Phi: np.ndarray, grid: Grid,
                       x, r: float, cfg: PathConfig) -> FKVerdict:
    """Compare ``Phi(x)`` with ``E_x[exp(int_0^tau (c - lam) ds) Phi(X_tau)]``, where
    ``tau`` is the first hitting time of the ball ``B_r`` before leaving the grid
    domain (where ``Phi`` vanishes).  ``Phi`` is read by multilinear
    interpolation.  The time-step allowance is the difference between runs at
    ``dt`` and ``dt / 4``; the verdict is ``|est - Phi(x)| <= 3 (stderr + allowance)``.
    """
    x = np.asarray(x, dtype=float).reshape(spec.dim)
    if np.linalg.norm(x) <= r:
        raise ValueError("x must lie outside B_r")
    phi_at = grid.interpolator(Phi)
    base = cfg.replace(exit_radius=grid.R, shape="ball" if grid.shape == "ball" else "box")
    coarse = _fk_estimate(spec, policy, lam, phi_at, x, r, base)
    fine = _fk_estimate(spec, policy, lam, phi_at, x, r, base.replace(dt=cfg.dt / 4))
    allowance = abs(fine.mean - coarse.mean)
    target = float(phi_at(x[None])[0])
    passed = abs(fine.mean - target) <= 3 * (fine.stderr + allowance)
    return FKVerdict(x.tolist(), target, fine, coarse, allowance, bool(passed))


def risk_sensitive_estimate(spec: OperatorSpec, policy, x0, T: float, cfg: PathConfig,
                            groups: int = 20) -> MCEstimate:
    """``(1/T) log E[exp(int_0^T c ds)]`` from a fixed start.

    The log-mean-exp is taken with a running-max shift, so large integrals do not
    overflow.  The standard error is a delete-a-group jackknife over ``groups``
    contiguous blocks of paths.  Paths leaving the outer region (if one is set)
    stop accumulating and are counted as truncated.
    """
    if T > cfg.t_max:
        raise ValueError("T must not exceed t_max")
    s = simulate_exit(spec, policy, x0, cfg.replace(t_max=T, hit_radius=0.0))
    I = s.integral
    n = I.size

    def lme(v):
        return (logsumexp(v) - np.log(v.size)) / T

    est = float(lme(I))
    g = min(groups, n)
    if g > 1:
        blocks = np.array_split(np.arange(n), g)
        loo = np.array([lme(np.delete(I, b)) for b in blocks])
        se = float(np.sqrt((g - 1) / g * np.sum((loo - loo.mean()) ** 2)))
    else:
        se = np.nan
    exited = int(np.sum(s.kind != TRUNCATED))
    return MCEstimate(est, se, n, exited, cfg.dt, cfg.seed)
