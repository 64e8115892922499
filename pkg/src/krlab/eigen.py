"""Principal eigentriplet of a positive generator.

Three independent routes are provided: power iteration on the semigroup,
shifted inverse (resolvent) iteration, and a dense eigendecomposition used as
an oracle on small grids.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .operators import (
    PositiveGenerator,
    Propagator,
    ResolventError,
    _Factor,
    _upper_bound,
    adjoint,
    pairing,
    weighted_norm,
)

DENSE_LIMIT = 2048


class SolverError(RuntimeError):
    """An iterative eigensolver did not reach its tolerance."""


class DualMismatchError(SolverError):
    """Primal and dual principal eigenvalues disagree."""


@dataclass
class Eigentriplet:
    """``(lambda_1, f_1, phi_1)`` with ``<f_1, phi_1> = 1`` and ``max phi_1 = 1``."""

    lam: float
    f1: np.ndarray
    phi1: np.ndarray
    primal_residual: float
    dual_residual: float
    iterations: int
    method: str
    tol: float
    lam_dual: float = np.nan


@dataclass
class SolverConfig:
    """Eigensolver settings.

    ``T_step=None`` selects ``32 / c_unif`` for power iteration.
    ``shift_margin`` is added to the spectral upper bound to start the
    resolvent iteration. ``psi0=None`` is the all-ones functional.
    """

    T_step: float | None = None
    tol: float = 1e-10
    max_iter: int = 200_000
    shift_margin: float = 1.0
    psi0: np.ndarray | None = None

    def __post_init__(self):
        if self.T_step is not None and not self.T_step > 0:
            raise ValueError("T_step must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.shift_margin <= 0:
            raise ValueError("shift_margin must be positive")


@dataclass
class SpectralReport:
    eigs: np.ndarray
    lam1: float
    lam2: complex
    gap: float
    multiplicity: int
    boundary_set: np.ndarray = field(default_factory=lambda: np.array([], dtype=complex))

    @property
    def simple(self) -> bool:
        return self.multiplicity == 1


@dataclass
class GeometryReport:
    ok: bool
    violations: list
    min_f1: float
    min_phi1: float
    multiplicity: int


def _floor(gen, f=None):
    """Residual floor set by rounding.

    Without ``f`` this is the floor of ``A f`` itself. With ``f`` it also
    covers absolute errors of size ``eps max|f|`` spread over nodes where the
    weight ``m`` is large.
    """
    eps = np.finfo(float).eps
    base = 64 * eps * max(1.0, gen.c_unif)
    if f is None:
        return base
    g = gen.grid
    spread = np.max(np.abs(f)) * np.sum(g.quad_weights * g.weight_m) / weighted_norm(f, g)
    return max(base, 4 * eps * max(1.0, gen.c_unif) * spread)


class _Stall:
    """Stop once the residual is below the rounding floor and has stopped improving."""

    def __init__(self, patience=6):
        self.best = np.inf
        self.count = 0
        self.patience = patience

    def __call__(self, res, floor):
        if res < 0.5 * self.best:
            self.best = res
            self.count = 0
            return False
        self.best = min(self.best, res)
        self.count += 1
        return self.count >= self.patience and res <= floor


def primal_residual(gen, lam, f):
    g = gen.grid
    return weighted_norm(gen.matvec(f) - lam * f, g) / weighted_norm(f, g)


def dual_residual(gen, lam, phi):
    """Residual in the dual sup norm with weight ``1/m``."""
    m = gen.grid.weight_m
    r = adjoint(gen).matvec(phi) - lam * phi
    return float(np.max(np.abs(r) / m) / np.max(np.abs(phi) / m))


def _psi(gen, psi0):
    return np.ones(gen.n) if psi0 is None else np.asarray(psi0, dtype=float)


def power_iterate(gen: PositiveGenerator, T=None, psi0=None, tol=1e-10, max_iter=200_000, f0=None):
    """Power iteration ``f <- S_T f / [S_T f]_0`` on the semigroup.

    ``lambda = log([S_T f]_0) / T`` at convergence. The default step
    ``T = 32 / c_unif`` keeps each uniformized step to a few dozen
    matrix-vector products.

    Returns
    -------
    lam, f, residual, iterations
    """
    psi = _psi(gen, psi0)
    grid = gen.grid
    T = 32.0 / gen.c_unif if T is None else float(T)
    if T <= 0:
        raise ValueError("T must be positive")
    prop = Propagator(gen)
    f = np.ones(gen.n) if f0 is None else np.array(f0, dtype=float)
    if np.any(f < 0):
        raise ValueError("power iteration needs a nonnegative start vector")
    f = f / pairing(f, psi, grid)
    stop = max(tol, _floor(gen))
    stall = _Stall()
    res = np.inf
    lam = np.nan
    for it in range(1, max_iter + 1):
        g = prop.step(f, T)
        s = pairing(g, psi, grid)
        if not s > 0 or not np.isfinite(s):
            raise SolverError("normalization functional vanished during power iteration")
        lam = np.log(s) / T
        f = g / s
        if it % 4 == 0 or it < 4:
            res = primal_residual(gen, lam, f)
            if res <= stop or stall(res, _floor(gen, f)):
                return lam, f, res, it
    raise SolverError(f"power iteration stalled at residual {res:.3g} after {max_iter} steps")


def resolvent_iterate(
    gen: PositiveGenerator, lam0=None, psi0=None, tol=1e-10, max_iter=200, f0=None, shift=None, shift_margin=1.0
):
    """Shifted inverse iteration ``f <- normalize((lam_n - A)^-1 f)``.

    The shift starts above the spectral bound and then decreases toward the
    principal eigenvalue, following the upper Collatz-Wielandt bound
    ``max_i (A f)_i / f_i`` of the current positive iterate. The shift thus
    stays above ``lambda_1``, where the resolvent is a positive operator. The
    reported eigenvalue is the estimate ``<A f, psi0> / <f, psi0>``. A final
    short semigroup step removes rounding-level sign errors. With ``shift``
    given the shift is held fixed.

    Returns
    -------
    lam, f, residual, iterations
    """
    psi = _psi(gen, psi0)
    grid = gen.grid
    scale = max(1.0, gen.c_unif)
    lam_n = _upper_bound(gen) + shift_margin if lam0 is None else float(lam0)
    if shift is not None:
        lam_n = float(shift)
    f = np.ones(gen.n) if f0 is None else np.array(f0, dtype=float)
    f = f / pairing(f, psi, grid)
    stop = max(tol, _floor(gen))
    stall = _Stall()
    res = np.inf
    fac_shift = None
    for it in range(1, max_iter + 1):
        if fac_shift != lam_n:
            try:
                fac = _Factor(gen, lam_n)
            except (RuntimeError, sla.LinAlgError, ResolventError):
                lam_n = lam_n + 1e-9 * scale
                continue
            fac_shift = lam_n
        g = np.asarray(fac.solve(f))
        if not np.all(np.isfinite(g)):
            lam_n += 1e-9 * scale
            continue
        s = pairing(g, psi, grid)
        if s == 0:
            raise SolverError("normalization functional vanished during resolvent iteration")
        f = g / s
        Af = gen.matvec(f)
        mu = pairing(Af, psi, grid)
        res = primal_residual(gen, mu, f)
        done = res <= stop or stall(res, _floor(gen, f))
        if done and np.all(f >= -1e-12 * np.max(np.abs(f))):
            f = _positivity_polish(gen, f, psi)
            mu = pairing(gen.matvec(f), psi, grid)
            res2 = primal_residual(gen, mu, f)
            if res2 <= max(stop, res, _floor(gen, f)):
                return mu, f, res2, it
        if shift is None:
            big = f > 1e-10 * np.max(f)
            cw = float(np.max(Af[big] / f[big])) if np.any(big) else lam_n
            nxt = max(cw, mu) + 1e-12 * scale
            lam_n = min(lam_n, nxt)
    raise SolverError(f"resolvent iteration stalled at residual {res:.3g}")


def _positivity_polish(gen, f, psi):
    """Clip rounding-level negatives and apply one short semigroup step."""
    f = np.maximum(f, 0.0)
    g = Propagator(gen).step(f, 1.0 / gen.c_unif)
    return g / pairing(g, psi, gen.grid)


def dual_eigenvector(gen: PositiveGenerator, lam1, tol=1e-10):
    """Principal eigenvector of the adjoint, by inverse iteration anchored at ``lam1``.

    Raises :class:`DualMismatchError` if the adjoint eigenvalue differs from
    ``lam1`` by more than ``10 tol (1 + |lam1|)``.
    """
    adj = adjoint(gen)
    shift = lam1 + 1e-7 * (1 + abs(lam1))
    mu, phi, res, it = resolvent_iterate(adj, tol=tol, shift=shift)
    if abs(mu - lam1) > 10 * tol * (1 + abs(lam1)):
        raise DualMismatchError(f"dual eigenvalue {mu!r} differs from {lam1!r}")
    return phi, mu, res


def normalize_triplet(lam, f1, phi1, grid, gen=None, **fields) -> Eigentriplet:
    """Scale ``phi1`` to sup norm 1, then ``f1`` to ``<f1, phi1> = 1``.

    Residuals are recorded when ``gen`` is given. Raises ``ValueError`` on a
    zero pairing.
    """
    phi = np.asarray(phi1, dtype=float)
    top = np.max(np.abs(phi))
    if top == 0:
        raise ValueError("phi1 vanishes")
    phi = phi / top
    s = pairing(f1, phi, grid)
    if not abs(s) > 0:
        raise ValueError("zero pairing between f1 and phi1")
    f = np.asarray(f1, dtype=float) / s
    pres = primal_residual(gen, lam, f) if gen is not None else np.nan
    dres = dual_residual(gen, lam, phi) if gen is not None else np.nan
    fields.setdefault("iterations", 0)
    fields.setdefault("method", "given")
    fields.setdefault("tol", np.nan)
    return Eigentriplet(lam=float(lam), f1=f, phi1=phi, primal_residual=pres, dual_residual=dres, **fields)


def principal_triplet(gen: PositiveGenerator, method="resolvent", tol=None, psi0=None, T=None, cfg: SolverConfig | None = None):
    """Normalized principal eigentriplet.

    ``method`` is ``"resolvent"``, ``"power"`` or ``"dense"``. Explicit
    ``tol``, ``psi0`` and ``T`` override the corresponding ``cfg`` fields.
    """
    cfg = SolverConfig() if cfg is None else cfg
    tol = cfg.tol if tol is None else tol
    psi0 = cfg.psi0 if psi0 is None else psi0
    T = cfg.T_step if T is None else T
    if method == "power":
        lam, f, _, it = power_iterate(gen, T=T, psi0=psi0, tol=tol, max_iter=cfg.max_iter)
    elif method == "resolvent":
        lam, f, _, it = resolvent_iterate(gen, psi0=psi0, tol=tol, shift_margin=cfg.shift_margin)
    elif method == "dense":
        lam, f, it = _dense_principal(gen)
    else:
        raise ValueError(f"unknown method {method!r}")
    if method == "dense":
        phi, mu, _ = _dense_dual(gen, lam)
    else:
        phi, mu, _ = dual_eigenvector(gen, lam, tol=tol)
    trip = normalize_triplet(lam, f, phi, gen.grid, gen, iterations=it, method=method, lam_dual=float(mu))
    trip.tol = max(tol, _floor(gen), trip.primal_residual)
    return trip


def _dense_principal(gen):
    A = gen.dense()
    vals, vecs = sla.eig(A)
    k = int(np.argmax(vals.real))
    v = np.real(vecs[:, k] * np.exp(-1j * np.angle(vecs[np.argmax(np.abs(vecs[:, k])), k])))
    return float(vals[k].real), v / pairing(v, np.ones(gen.n), gen.grid), 1


def _dense_dual(gen, lam):
    lam_d, phi, _ = _dense_principal(adjoint(gen))
    return phi, lam_d, 0.0


def dense_spectrum(gen: PositiveGenerator, tol_bnd=None, tol_mult=1e-6, cap=None) -> SpectralReport:
    """Full spectrum by a dense eigendecomposition (oracle for small ``n``).

    ``boundary_set`` lists the eigenvalues (``lambda_1`` included) whose real
    part lies within ``tol_bnd`` of ``lambda_1``; the default is
    ``1e-6 (1 + |lambda_1|)``. ``cap`` defaults to ``DENSE_LIMIT``.
    """
    cap = DENSE_LIMIT if cap is None else cap
    if gen.n > cap:
        raise ValueError(f"dense oracle limited to n <= {cap}")
    eigs = sla.eigvals(gen.dense())
    order = np.argsort(-eigs.real, kind="stable")
    eigs = eigs[order]
    lam1 = float(eigs[0].real)
    close = np.abs(eigs - lam1) <= tol_mult * (1 + abs(lam1))
    mult = int(np.count_nonzero(close))
    rest = eigs[~close]
    if rest.size:
        top = rest[np.isclose(rest.real, rest[0].real, rtol=0, atol=1e-12 * (1 + abs(rest[0].real)))]
        lam2 = complex(top[np.argmax(top.imag)])
        gap = lam1 - lam2.real
    else:
        lam2, gap = complex(np.nan), np.inf
    if tol_bnd is None:
        tol_bnd = 1e-6 * (1 + abs(lam1))
    bnd = eigs[np.abs(eigs.real - lam1) <= tol_bnd]
    return SpectralReport(eigs, lam1, lam2, float(gap), mult, bnd)


dense_spectrum_oracle = dense_spectrum


def check_geometry(gen: PositiveGenerator, trip: Eigentriplet, spectrum=None, tol_mult=1e-6, dense_max=DENSE_LIMIT) -> GeometryReport:
    """Positivity of ``f_1`` and ``phi_1``, simplicity, and primal-dual agreement.

    Simplicity needs a spectrum; without one it is computed densely when
    ``n <= dense_max`` and otherwise left unchecked (``multiplicity = 0``).
    Violations are reported, never raised.
    """
    v = []
    mf, mp = float(np.min(trip.f1)), float(np.min(trip.phi1))
    if not mf > 0:
        v.append(f"f1 not strictly positive (min {mf:.3g})")
    if not mp > 0:
        v.append(f"phi1 not strictly positive (min {mp:.3g})")
    mult = 0
    if spectrum is None and gen.n <= min(dense_max, DENSE_LIMIT):
        spectrum = dense_spectrum(gen, tol_mult=tol_mult)
    if spectrum is not None:
        mult = spectrum.multiplicity
        if mult != 1:
            v.append(f"principal eigenvalue has multiplicity {mult}")
    if np.isfinite(trip.lam_dual) and abs(trip.lam_dual - trip.lam) > 10 * trip.tol * (1 + abs(trip.lam)):
        v.append("primal and dual eigenvalues disagree")
    return GeometryReport(not v, v, mf, mp, mult)


def cosine(f, g, grid) -> float:
    """Cosine similarity in the quadrature inner product."""
    w = grid.quad_weights
    return float(np.sum(w * f * g) / np.sqrt(np.sum(w * f * f) * np.sum(w * g * g)))


def rayleigh_sup(gen, f) -> float:
    """Upper Collatz-Wielandt bound ``max_i (A f)_i / f_i`` for ``f > 0``."""
    return float(np.max(gen.matvec(f) / f))


__all__ = [
    "Eigentriplet",
    "SpectralReport",
    "GeometryReport",
    "SolverError",
    "DualMismatchError",
    "power_iterate",
    "resolvent_iterate",
    "dual_eigenvector",
    "principal_triplet",
    "dense_spectrum",
    "dense_spectrum_oracle",
    "normalize_triplet",
    "SolverConfig",
    "check_geometry",
    "cosine",
    "primal_residual",
    "dual_residual",
]
