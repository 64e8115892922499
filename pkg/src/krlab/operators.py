"""Weighted grids, positive generators and their semigroups.

A discretized positive semigroup lives on a :class:`WeightedGrid`. States
``f`` are node values of a density, so integrals are ``sum(w * f)``. The
primal space is the weighted L1 space with weight ``m``; its dual is the
weighted sup space with weight ``1/m``. Dual vectors are node values as well
and are paired with states through the quadrature weights.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

#: Poisson tail mass below which uniformization series are truncated.
UNIFORMIZATION_TOL = 1e-14
#: Largest Poisson parameter handled in one uniformization chunk.
_MAX_CHUNK = 40.0


class GridError(ValueError):
    """Invalid grid data."""


class ShapeError(ValueError):
    """Vector or matrix size does not match the grid."""


class NotMetzlerError(ValueError):
    """A matrix with a negative off-diagonal entry was used as a generator."""


class ResolventError(ValueError):
    """Resolvent requested at a point that is not above the spectral bound."""


def _freeze(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class WeightedGrid:
    """Quadrature nodes with positive weights and a Lyapunov weight ``m >= 1``.

    Parameters
    ----------
    nodes : ndarray
        Shape ``(n,)`` for 1D grids, ``(n, dim)`` for tensor grids.
    quad_weights : ndarray
        Positive quadrature weights ``w``, shape ``(n,)``.
    weight_m : ndarray
        Weight ``m`` of the primal norm, ``m >= 1``.
    dim : int
        1 or 2.
    geometric_ratio : int, optional
        Nodes per octave ``q`` of a dyadic grid, for which
        ``nodes[j + q] == 2 * nodes[j]`` holds exactly.
    edges : ndarray, optional
        Cell edges of a 1D finite volume grid, length ``n + 1``.
    axes : tuple of ndarray
        Per-axis nodes of a tensor grid (row-major flattening).
    """

    nodes: np.ndarray
    quad_weights: np.ndarray
    weight_m: np.ndarray
    dim: int = 1
    geometric_ratio: Optional[int] = None
    edges: Optional[np.ndarray] = None
    axes: tuple = ()

    def __post_init__(self):
        nodes = _freeze(self.nodes)
        w = _freeze(self.quad_weights)
        m = _freeze(self.weight_m)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "quad_weights", w)
        object.__setattr__(self, "weight_m", m)
        if self.edges is not None:
            object.__setattr__(self, "edges", _freeze(self.edges))
        object.__setattr__(self, "axes", tuple(_freeze(a) for a in self.axes))
        n = w.shape[0]
        if self.dim not in (1, 2):
            raise GridError("dim must be 1 or 2")
        if w.ndim != 1 or m.shape != (n,) or nodes.shape[0] != n:
            raise GridError("nodes, quad_weights and weight_m must have matching length")
        if n == 0:
            raise GridError("empty grid")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise GridError("quadrature weights must be positive")
        if not np.all(np.isfinite(m)) or np.any(m < 1):
            raise GridError("weight m must be >= 1")
        if self.dim == 1:
            if nodes.ndim != 1:
                raise GridError("1D grid needs a flat node array")
            if n > 1 and np.any(np.diff(nodes) <= 0):
                raise GridError("nodes must be strictly increasing")
        elif nodes.shape != (n, 2):
            raise GridError("2D grid needs nodes of shape (n, 2)")
        q = self.geometric_ratio
        if q is not None:
            if self.dim != 1 or q < 1 or n <= q:
                raise GridError("geometric_ratio needs a 1D grid with more than q nodes")
            if not np.array_equal(nodes[q:], 2.0 * nodes[:-q]):
                raise GridError("nodes are not an exact dyadic lattice")

    @property
    def n(self) -> int:
        return self.quad_weights.shape[0]

    @classmethod
    def uniform(cls, lo, hi, n, weight_m=None):
        """Cell-centered grid with ``n`` equal cells on ``[lo, hi]``."""
        if n < 1 or not hi > lo:
            raise GridError("need n >= 1 and hi > lo")
        edges = np.linspace(lo, hi, n + 1)
        nodes = 0.5 * (edges[1:] + edges[:-1])
        w = np.diff(edges)
        m = np.ones(n) if weight_m is None else weight_m(nodes)
        return cls(nodes, w, m, edges=edges)

    @classmethod
    def dyadic(cls, x0, q, levels, weight_m=None):
        """Geometric grid with ``q`` cells per octave on ``[x0, x0 * 2**levels]``.

        Edges of the first octave are computed once and every later octave is
        an exact doubling, so ``nodes[j + q] == 2 * nodes[j]`` bit for bit.
        Nodes are geometric cell centers.
        """
        if q < 1 or levels < 1 or x0 <= 0:
            raise GridError("need q >= 1, levels >= 1 and x0 > 0")
        base = x0 * 2.0 ** (np.arange(q) / q)
        mid = x0 * 2.0 ** ((np.arange(q) + 0.5) / q)
        scale = 2.0 ** np.arange(levels)
        edges = np.concatenate([(base[None, :] * scale[:, None]).ravel(), [x0 * 2.0**levels]])
        nodes = (mid[None, :] * scale[:, None]).ravel()
        w = np.diff(edges)
        m = np.ones(nodes.size) if weight_m is None else weight_m(nodes)
        return cls(nodes, w, m, geometric_ratio=q, edges=edges)

    @classmethod
    def tensor(cls, axis_grids, weight_m=None):
        """Row-major tensor product of two 1D grids."""
        if len(axis_grids) != 2:
            raise GridError("tensor grids are 2D")
        g1, g2 = axis_grids
        X, Y = np.meshgrid(g1.nodes, g2.nodes, indexing="ij")
        nodes = np.column_stack([X.ravel(), Y.ravel()])
        w = np.outer(g1.quad_weights, g2.quad_weights).ravel()
        m = np.ones(w.size) if weight_m is None else weight_m(nodes)
        return cls(nodes, w, m, dim=2, axes=(g1.nodes, g2.nodes))


@dataclass(frozen=True)
class PositiveGenerator:
    """Metzler matrix acting on node values of a :class:`WeightedGrid`.

    ``matrix`` is a dense ndarray or a CSR matrix. ``c_unif`` is the
    uniformization rate, at least ``max |A_ii|``.
    """

    matrix: object
    grid: WeightedGrid
    metzler: bool
    c_unif: float
    model_tag: str = ""
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_matrix(cls, A, grid, model_tag="", meta=None, check=True):
        A = sp.csr_matrix(A, dtype=float) if sp.issparse(A) else np.array(A, dtype=float)
        if A.shape != (grid.n, grid.n):
            raise ShapeError(f"matrix shape {A.shape} does not match grid size {grid.n}")
        metz = is_metzler(A)
        if check and not metz:
            raise NotMetzlerError("generator has a negative off-diagonal entry")
        return cls(A, grid, metz, uniformization_rate(A), model_tag, dict(meta or {}))

    @property
    def n(self) -> int:
        return self.grid.n

    def dense(self) -> np.ndarray:
        return self.matrix.toarray() if sp.issparse(self.matrix) else np.array(self.matrix)

    def matvec(self, f):
        return self.matrix @ f

    def shifted(self, lam):
        """Generator of the rescaled semigroup ``exp(-lam t) S_t``."""
        A = self.matrix - lam * (sp.identity(self.n, format="csr") if sp.issparse(self.matrix) else np.eye(self.n))
        return PositiveGenerator.from_matrix(A, self.grid, self.model_tag, self.meta)


def is_metzler(A) -> bool:
    if sp.issparse(A):
        C = sp.coo_matrix(A)
        off = C.row != C.col
        return bool(np.all(C.data[off] >= 0))
    A = np.asarray(A)
    off = ~np.eye(A.shape[0], dtype=bool)
    return bool(np.all(A[off] >= 0))


def uniformization_rate(A) -> float:
    d = np.abs(A.diagonal())
    c = float(d.max()) if d.size else 0.0
    if c > 0:
        return c
    amax = abs(A).max() if A.shape[0] else 0.0
    return float(amax) if amax > 0 else 1.0


def _check_vec(grid, f, name="vector"):
    f = np.asarray(f)
    if f.shape[0] != grid.n:
        raise ShapeError(f"{name} has length {f.shape[0]}, grid has {grid.n} nodes")
    return f


def pairing(f, phi, grid) -> float:
    """Quadrature pairing ``sum_i w_i f_i phi_i``."""
    f = _check_vec(grid, f, "state")
    phi = _check_vec(grid, phi, "dual vector")
    return float(np.sum(grid.quad_weights * f * phi))


def weighted_norm(f, grid, p=1) -> float:
    """Weighted Lp norm with the Lyapunov weight ``m``.

    ``p=1`` gives ``sum w m |f|``. ``p=inf`` gives ``max m |f|`` with no
    quadrature factor.
    """
    f = _check_vec(grid, f, "state")
    m = grid.weight_m
    if p == np.inf or p == "inf":
        return float(np.max(m * np.abs(f)))
    if p < 1:
        raise ValueError("p must be >= 1")
    return float(np.sum(grid.quad_weights * (m * np.abs(f)) ** p) ** (1.0 / p))


def bracket(f, phi1, grid) -> float:
    """Seminorm ``[f]_phi1 = <|f|, phi1>``; a norm when ``phi1 > 0``."""
    phi1 = _check_vec(grid, phi1, "dual vector")
    if np.any(np.asarray(phi1) < 0):
        raise ValueError("bracket needs a nonnegative phi1")
    return pairing(np.abs(f), phi1, grid)


def adjoint(gen: PositiveGenerator) -> PositiveGenerator:
    """Adjoint with respect to the quadrature pairing, ``W^-1 A^T W``."""
    w = gen.grid.quad_weights
    A = gen.matrix
    if sp.issparse(A):
        At = sp.diags(1.0 / w) @ A.T.tocsr() @ sp.diags(w)
        At = sp.csr_matrix(At)
    else:
        At = (A.T * w[None, :]) / w[:, None]
    return PositiveGenerator.from_matrix(At, gen.grid, gen.model_tag + "*", gen.meta, check=False)


def _transition(gen: PositiveGenerator, c):
    A = gen.matrix
    if sp.issparse(A):
        P = sp.identity(gen.n, format="csr") + A / c
        P = sp.csr_matrix(P)
        np.maximum(P.data, 0.0, out=P.data)
    else:
        P = np.eye(gen.n) + A / c
        np.fill_diagonal(P, np.maximum(P.diagonal(), 0.0))
    return P


def _poisson_weights(mu, tol=UNIFORMIZATION_TOL, rho=1.0):
    """Poisson(mu) probabilities, cut once the neglected terms are below ``tol``.

    When ``||P|| <= rho`` with ``rho > 1`` the neglected terms
    ``sum_{k>K} p_k P^k f`` are bounded by ``exp(mu (rho - 1))`` times the
    tail of Poisson(``mu rho``), so the cut uses that tail instead.
    """
    mr = mu * max(rho, 1.0)
    p, pr = np.exp(-mu), np.exp(-mr)
    out = [p]
    acc = pr
    k = 0
    while 1.0 - acc > tol and k < 10_000:
        k += 1
        p = p * mu / k
        pr = pr * mr / k
        out.append(p)
        acc += pr
        if pr == 0.0 and k > mr:
            break
    return np.array(out)


def _integral_weights(probs, c):
    """Weights ``(1/c) P(N > k)`` giving the time integral of the series."""
    tail = 1.0 - np.cumsum(probs)
    return np.maximum(tail, 0.0) / c


def _uniformize(P, f, mu, c=None, rho=1.0):
    """Return ``exp(t A) f`` (and optionally its time integral) by uniformization."""
    probs = _poisson_weights(mu, rho=rho)
    v = np.array(f, dtype=float)
    out = probs[0] * v
    integ = None
    if c is not None:
        iw = _integral_weights(probs, c)
        integ = iw[0] * v
    for k in range(1, probs.size):
        v = P @ v
        out = out + probs[k] * v
        if c is not None:
            integ = integ + iw[k] * v
    return out, integ


def _chunks(total_mu):
    nchunk = max(1, int(np.ceil(total_mu / _MAX_CHUNK)))
    return nchunk


class Propagator:
    """Uniformization of ``exp(t A)`` with the transition matrix built once.

    ``P = I + A/c`` has nonnegative entries, so positivity of every iterate is
    exact. Each Poisson series is cut once its tail mass drops below
    ``1e-14``; long horizons are split into chunks of Poisson mean at most 40.
    """

    def __init__(self, gen: PositiveGenerator):
        if not gen.metzler:
            raise NotMetzlerError("uniformization needs a Metzler generator")
        self.gen = gen
        self.c = gen.c_unif
        self.P = _transition(gen, self.c)
        A = gen.matrix
        self.zero = (A.nnz == 0 or not np.any(A.data)) if sp.issparse(A) else not np.any(A)
        # norm of P in the weighted L1 norm bounds the growth of the series terms
        w = gen.grid.quad_weights
        col = np.asarray((sp.diags(w) @ abs(self.P)).sum(axis=0)).ravel() if sp.issparse(self.P) else w @ np.abs(self.P)
        self.rho = float(np.max(col / w)) if w.size else 1.0

    def step(self, f, dt, n_steps=1):
        if dt < 0:
            raise ValueError("dt must be nonnegative")
        f = _check_vec(self.gen.grid, f, "state")
        v = np.array(f, dtype=float)
        if dt == 0 or n_steps == 0 or self.zero:
            return v
        nch = _chunks(self.c * dt)
        mu = self.c * dt / nch
        for _ in range(n_steps * nch):
            v, _ = _uniformize(self.P, v, mu, rho=self.rho)
        return v

    def integrate(self, f, T):
        """Return ``(exp(T A) f, int_0^T exp(s A) f ds)``.

        The time integral uses the exact weights ``(1/c) P(N_{cT} > k)`` of
        the uniformized series, so no time quadrature error is introduced.
        """
        f = _check_vec(self.gen.grid, f, "state")
        v = np.array(f, dtype=float)
        acc = np.zeros_like(v)
        if T == 0:
            return v, acc
        if self.zero:
            return v, T * v
        nch = _chunks(self.c * T)
        mu = self.c * T / nch
        for _ in range(nch):
            v_next, integ = _uniformize(self.P, v, mu, c=self.c, rho=self.rho)
            acc = acc + integ
            v = v_next
        return v, acc


def step_semigroup(gen: PositiveGenerator, f, dt, n_steps=1):
    """Advance ``f`` by ``exp(dt A)`` ``n_steps`` times (see :class:`Propagator`)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    return Propagator(gen).step(f, dt, n_steps)


def integrate_semigroup(gen: PositiveGenerator, f, T):
    """Return ``(exp(T A) f, int_0^T exp(s A) f ds)`` (see :class:`Propagator`)."""
    return Propagator(gen).integrate(f, T)


def semigroup_kernel(gen: PositiveGenerator, T) -> np.ndarray:
    """Dense kernel ``K`` of ``S_T`` with ``(S_T f)_i = sum_j K_ij w_j f_j``.

    Column ``j`` is ``exp(T A) e_j / w_j``. Every entry is nonnegative.
    """
    n = gen.n
    if not T > 0:
        raise ValueError("T must be positive")
    cols = Propagator(gen).step(np.eye(n), T)
    return cols / gen.grid.quad_weights[None, :]


def _upper_bound(gen: PositiveGenerator) -> float:
    """Gershgorin-type upper bound on the spectral bound of a Metzler matrix."""
    A = gen.matrix
    w = gen.grid.quad_weights
    colsum = np.asarray(abs(A).sum(axis=0)).ravel() if sp.issparse(A) else np.abs(A).sum(axis=0)
    diag = A.diagonal()
    # column sums of the off-diagonal part plus the diagonal
    return float(np.max(diag + (colsum - np.abs(diag)))) if w.size else 0.0


DENSE_LU_LIMIT = 8192


class _Factor:
    """LU factorization of ``lam I - A`` reusable across solves.

    Sparse matrices with wide bands (more than 32 entries per row on
    average) and at most ``DENSE_LU_LIMIT`` rows are factored densely, which
    beats sparse LU once fill-in is heavy.
    """

    def __init__(self, gen, lam):
        A = gen.matrix
        n = gen.n
        if sp.issparse(A) and A.nnz > 32 * n and n <= DENSE_LU_LIMIT:
            A = A.toarray()
        if sp.issparse(A):
            M = sp.csc_matrix(lam * sp.identity(n) - A)
            self._lu = spla.splu(M)
            self.solve = self._lu.solve
        else:
            M = lam * np.eye(n) - A
            lu = sla.lu_factor(M, check_finite=False)
            if np.any(np.diag(lu[0]) == 0):
                raise ResolventError("singular resolvent system")
            self.solve = lambda b: sla.lu_solve(lu, b, check_finite=False)


def resolvent_solve(gen: PositiveGenerator, lam, g, check=True):
    """Solve ``(lam - A) f = g``.

    With ``check=True`` the point ``lam`` must exceed a Gershgorin upper bound
    of the spectral bound, which guarantees the resolvent is a positive
    operator. Pass ``check=False`` to solve at any regular point.
    """
    g = _check_vec(gen.grid, g, "right-hand side")
    if check and not lam > _upper_bound(gen):
        raise ResolventError(f"lambda={lam} is not above the spectral bound estimate")
    try:
        f = _Factor(gen, lam).solve(np.asarray(g, dtype=float))
    except (RuntimeError, sla.LinAlgError) as exc:
        raise ResolventError(str(exc)) from exc
    if not np.all(np.isfinite(f)):
        raise ResolventError("resolvent solve produced non-finite values")
    return f


def resolvent_kernel(gen: PositiveGenerator, lam) -> np.ndarray:
    """Kernel of ``(lam - A)^-1`` in the same convention as :func:`semigroup_kernel`."""
    fac = _Factor(gen, lam)
    cols = fac.solve(np.eye(gen.n))
    return np.asarray(cols) / gen.grid.quad_weights[None, :]


def kernel_apply(K, f, grid):
    """Apply a kernel matrix: ``sum_j K_ij w_j f_j``."""
    return K @ (grid.quad_weights * f)
