"""Uniform grids and monotone (upwind) finite-difference operators.

Nodes sit at ``k * h`` for integer multi-indices ``k``; the lattice carries one
ghost ring beyond the outermost interior node so that every stencil neighbour
of an interior node exists.  Non-interior lattice nodes carry Dirichlet zero
and are eliminated from the square matrices ``M_k``; the rectangular
``ext[k]`` (interior rows, all lattice columns) lets callers apply the same
stencil to a function with nonzero boundary values.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.csgraph import connected_components

from .errors import NonMonotoneStencil, TooCoarse
from .model import OperatorSpec

_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class Grid:
    dim: int
    R: float
    h: float
    shape: str  # "box" or "ball"
    lattice: np.ndarray = field(repr=False)      # (L, d) integer multi-indices
    interior: np.ndarray = field(repr=False)     # (N,) lattice indices of interior nodes
    lat_to_int: np.ndarray = field(repr=False)   # (L,) interior index or -1
    half: int = 0                                # lattice spans [-half, half]^d

    @property
    def N(self) -> int:
        return self.interior.size

    @property
    def L(self) -> int:
        return self.lattice.shape[0]

    @cached_property
    def points(self) -> np.ndarray:
        """Coordinates of interior nodes, shape (N, d)."""
        return self.lattice[self.interior] * self.h

    @cached_property
    def lattice_points(self) -> np.ndarray:
        return self.lattice * self.h

    @cached_property
    def anchor(self) -> int:
        """Interior index of the origin."""
        return int(self.lat_to_int[self._lat_index(np.zeros(self.dim, dtype=int))])

    @cached_property
    def strides(self) -> np.ndarray:
        side = 2 * self.half + 1
        return side ** np.arange(self.dim - 1, -1, -1)

    def _lat_index(self, k) -> np.ndarray:
        return (np.asarray(k) + self.half) @ self.strides

    @cached_property
    def radius(self) -> np.ndarray:
        return np.linalg.norm(self.points, axis=1)

    def contains(self, x: np.ndarray) -> np.ndarray:
        """Membership of points in the open continuous domain."""
        x = np.atleast_2d(x)
        if self.shape == "box":
            return np.max(np.abs(x), axis=1) < self.R
        return np.linalg.norm(x, axis=1) < self.R

    def to_lattice(self, values: np.ndarray) -> np.ndarray:
        out = np.zeros(self.L)
        out[self.interior] = values
        return out

    def interpolator(self, values: np.ndarray):
        """Multilinear interpolant of a grid function (zero off the interior)."""
        side = 2 * self.half + 1
        axes = [np.arange(-self.half, self.half + 1) * self.h] * self.dim
        table = self.to_lattice(values).reshape((side,) * self.dim)
        interp = RegularGridInterpolator(axes, table, bounds_error=False, fill_value=0.0)
        return lambda x: interp(np.atleast_2d(x))

    @cached_property
    def outer_shell(self) -> np.ndarray:
        """Interior indices having at least one non-interior axial neighbour."""
        mask = np.zeros(self.N, dtype=bool)
        k = self.lattice[self.interior]
        for i in range(self.dim):
            for s in (-1, 1):
                kk = k.copy()
                kk[:, i] += s
                mask |= self.lat_to_int[self._lat_index(kk)] < 0
        return np.flatnonzero(mask)

    def to_dict(self) -> dict:
        return {"dimension": self.dim, "R": self.R, "h": self.h, "shape": self.shape,
                "points": self.points.tolist(), "anchor": self.anchor}


def build_grid(d: int, R: float, h: float, shape: str = "box") -> Grid:
    """Uniform grid on ``(-R, R)^d`` or the open ball of radius R."""
    if shape not in ("box", "ball"):
        raise ValueError(f"shape must be 'box' or 'ball', got {shape!r}")
    if not (h > 0 and R > h):
        raise TooCoarse(f"need R > h > 0, got R={R}, h={h}")
    rho = R / h
    if rho < 2 - _EPS:
        raise TooCoarse(f"R/h = {rho:.6g} < 2: fewer than 3 interior nodes per axis")
    n = int(np.ceil(rho - _EPS)) - 1  # largest |k| with |k| < rho
    if n < 1:
        raise TooCoarse("fewer than 3 interior nodes per axis")
    half = n + 1
    rng = np.arange(-half, half + 1)
    lattice = np.array(list(itertools.product(rng, repeat=d)), dtype=np.int64).reshape(-1, d)
    if shape == "box":
        inside = np.max(np.abs(lattice), axis=1) < rho - _EPS
    else:
        inside = np.linalg.norm(lattice, axis=1) < rho - _EPS
    interior = np.flatnonzero(inside)
    lat_to_int = -np.ones(lattice.shape[0], dtype=np.int64)
    lat_to_int[interior] = np.arange(interior.size)
    return Grid(d, float(R), float(h), shape, lattice, interior, lat_to_int, half)


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Per-control Metzler matrices plus the pointwise min/max that couples them."""

    spec: OperatorSpec
    grid: Grid
    matrices: tuple   # K csr matrices, N x N
    ext: tuple        # K csr matrices, N x L
    sense: str
    shift: float

    @property
    def K(self) -> int:
        return len(self.matrices)

    @property
    def N(self) -> int:
        return self.grid.N

    def with_sense(self, sense: str) -> "DiscreteOperator":
        return DiscreteOperator(self.spec.replace(sense=sense), self.grid, self.matrices,
                                self.ext, sense, self.shift)

    def stack(self, psi: np.ndarray) -> np.ndarray:
        """(M_k psi) for every control, shape (K, N)."""
        return np.stack([M @ psi for M in self.matrices])

    def apply(self, psi: np.ndarray) -> np.ndarray:
        Y = self.stack(np.asarray(psi, dtype=float))
        return Y.min(axis=0) if self.sense == "min" else Y.max(axis=0)

    def apply_with_boundary(self, lattice_values: np.ndarray) -> np.ndarray:
        """Same stencil, but boundary/ghost nodes take the supplied values instead of zero."""
        Y = np.stack([E @ lattice_values for E in self.ext])
        return Y.min(axis=0) if self.sense == "min" else Y.max(axis=0)

    def select_policy(self, psi: np.ndarray) -> np.ndarray:
        Y = self.stack(np.asarray(psi, dtype=float))
        return (np.argmin(Y, axis=0) if self.sense == "min" else np.argmax(Y, axis=0)).astype(np.int64)

    def frozen(self, policy: np.ndarray) -> sp.csr_matrix:
        """Matrix whose row i is row i of M_{policy[i]}."""
        policy = np.asarray(policy)
        if self.K == 1:
            return self.matrices[0]
        out = None
        for k, M in enumerate(self.matrices):
            sel = sp.diags((policy == k).astype(float))
            part = sel @ M
            out = part if out is None else out + part
        return out.tocsr()

    @cached_property
    def abs_matrices(self) -> tuple:
        return tuple(abs(M) for M in self.matrices)

    @cached_property
    def norm_inf(self) -> float:
        return max(float(abs(M).sum(axis=1).max()) for M in self.matrices)

    def dump(self) -> dict:
        """Debug dump of the grid and per-control matrices as JSON-friendly arrays."""
        return {
            "grid": self.grid.to_dict(),
            "sense": self.sense,
            "shift": self.shift,
            "matrices": [M.toarray().tolist() if self.N <= 400 else
                         {"row": M.tocoo().row.tolist(), "col": M.tocoo().col.tolist(),
                          "data": M.tocoo().data.tolist()} for M in self.matrices],
        }

    def dumps(self) -> str:
        return json.dumps(self.dump())


def apply_nonlinear(opr: DiscreteOperator, psi: np.ndarray) -> np.ndarray:
    """Node-wise min (or max) over controls of ``M_k psi``."""
    return opr.apply(psi)


def select_policy(opr: DiscreteOperator, psi: np.ndarray) -> np.ndarray:
    """Per-node control index attaining the optimum; ties go to the lowest index."""
    return opr.select_policy(psi)


def metzler_shift(M) -> float:
    """Shift s with s > lambda_PF(M): 1 + max(max |diag|, max row sum)."""
    M = sp.csr_matrix(M)
    diag = M.diagonal()
    rowsum = np.asarray(M.sum(axis=1)).ravel()
    return 1.0 + max(float(np.abs(diag).max()), float(rowsum.max()))


def is_metzler(M, tol: float = 0.0) -> bool:
    M = sp.coo_matrix(M)
    off = M.row != M.col
    return bool(np.all(M.data[off] >= -tol))


def is_irreducible(M) -> bool:
    M = sp.csr_matrix(M)
    if M.shape[0] == 1:
        return True
    pattern = (abs(M) > 0).astype(float)
    ncomp, _ = connected_components(pattern, directed=True, connection="strong")
    return ncomp == 1


def _stencil_entries(spec: OperatorSpec, grid: Grid, A: np.ndarray, b: np.ndarray,
                     c: np.ndarray):
    """Yield (offset multi-index, weight array over interior nodes)."""
    d, h = grid.dim, grid.h
    h2 = h * h
    N = grid.N
    center = np.zeros(N)
    axial = {}
    for i in range(d):
        e = np.zeros(d, dtype=int)
        e[i] = 1
        axial[(i, 1)] = A[:, i, i] / h2 + np.maximum(b[:, i], 0.0) / h
        axial[(i, -1)] = A[:, i, i] / h2 + np.maximum(-b[:, i], 0.0) / h
        center -= 2 * A[:, i, i] / h2 + np.abs(b[:, i]) / h
    diag_entries = []
    for i in range(d):
        for j in range(i + 1, d):
            aij = A[:, i, j]
            mag = np.abs(aij)
            if mag.any():
                w = mag / h2
                pos = aij >= 0
                for s in (1, -1):
                    axial[(i, s)] = axial[(i, s)] - w
                    axial[(j, s)] = axial[(j, s)] - w
                center += 2 * w
                for si, sj in ((1, 1), (-1, -1)):
                    off = np.zeros(d, dtype=int)
                    off[i], off[j] = si, sj
                    diag_entries.append((off, np.where(pos, w, 0.0)))
                for si, sj in ((1, -1), (-1, 1)):
                    off = np.zeros(d, dtype=int)
                    off[i], off[j] = si, sj
                    diag_entries.append((off, np.where(pos, 0.0, w)))
    yield np.zeros(d, dtype=int), center + c
    for (i, s), w in axial.items():
        off = np.zeros(d, dtype=int)
        off[i] = s
        yield off, w
    yield from diag_entries


def assemble(spec: OperatorSpec, grid: Grid, sense: str | None = None) -> DiscreteOperator:
    """Monotone finite-difference matrices, one per control point."""
    if spec.dim != grid.dim:
        raise ValueError("grid dimension does not match spec")
    pts = grid.points
    A = spec.diffusion(pts)
    d = grid.dim
    for i in range(d):
        for j in range(i + 1, d):
            bad = np.abs(A[:, i, j]) > np.minimum(A[:, i, i], A[:, j, j]) * (1 + 1e-12)
            if bad.any():
                node = int(np.flatnonzero(bad)[0])
                raise NonMonotoneStencil(
                    f"cross-diffusion a[{i}][{j}] violates |a_ij| <= min(a_ii, a_jj) at "
                    f"x={pts[node].tolist()}", node)
    base = grid.lattice[grid.interior]
    rows_all = np.arange(grid.N)
    mats, exts = [], []
    for k in range(spec.n_controls):
        b = spec.drift(pts, k)
        c = spec.potential(pts, k)
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(c)) and np.all(np.isfinite(A))):
            raise ValueError(f"non-finite coefficients for control {k}")
        rows, cols, vals = [], [], []
        scale = np.abs(A).max() / grid.h**2 + np.abs(b).max() / grid.h + 1.0
        for off, w in _stencil_entries(spec, grid, A, b, c):
            lat = grid._lat_index(base + off)
            if off.any():
                neg = w < 0
                if neg.any():
                    tiny = neg & (w > -1e-12 * scale)
                    w = np.where(tiny, 0.0, w)
                    if (w < 0).any():
                        node = int(np.flatnonzero(w < 0)[0])
                        raise NonMonotoneStencil(
                            f"negative off-diagonal coupling {w[node]:.6g} at "
                            f"x={pts[node].tolist()} (control {k})", node)
            keep = w != 0 if off.any() else np.ones(grid.N, dtype=bool)
            rows.append(rows_all[keep])
            cols.append(lat[keep])
            vals.append(w[keep])
        E = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(grid.N, grid.L))
        E.sum_duplicates()
        M = E[:, grid.interior].tocsr()
        if not is_metzler(M):
            raise NonMonotoneStencil(f"assembled matrix for control {k} is not Metzler")
        mats.append(M)
        exts.append(E)
    if not is_irreducible(mats[0]):
        raise NonMonotoneStencil("stencil graph is not connected on the interior nodes")
    shift = 1.0 + max(float(np.abs(M.diagonal()).max()) for M in mats)
    return DiscreteOperator(spec, grid, tuple(mats), tuple(exts), sense or spec.sense, shift)
