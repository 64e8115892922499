"""Doblin, Lyapunov and Harris conditions on semigroup and resolvent kernels.

All routines take a kernel matrix ``K`` in the convention of
:func:`~krlab.operators.semigroup_kernel`: ``(S f)_i = sum_j K_ij w_j f_j``.
A certificate packages a Lyapunov bound and a Harris coupling bound into a
2x2 contraction matrix whose spectral radius bounds the convergence factor
of ``exp(-lambda_1 T) S_T`` on states with zero ``phi_1`` pairing.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .operators import (
    PositiveGenerator,
    pairing,
    resolvent_kernel,
    semigroup_kernel,
    weighted_norm,
)


class DoblinError(ValueError):
    """No usable minorization (zero weight or vanishing minorant)."""


class LyapunovError(ValueError):
    """Lyapunov constant is infinite on the given grid."""


class HarrisError(ValueError):
    """Harris condition cannot be checked (empty core set)."""


class CertificateError(ValueError):
    """The assembled contraction matrix does not contract."""


@dataclass
class DoblinWitness:
    psi0: np.ndarray
    g0: np.ndarray
    R0: float
    gamma: float
    T: float


@dataclass
class LyapunovResult:
    gamma_L: float
    K: float
    amplification: np.ndarray


@dataclass
class HarrisResult:
    A: float
    core: np.ndarray
    g_A: np.ndarray
    gamma_H: float


@dataclass
class HarrisCertificate:
    """Contraction data ``M = [[gamma_L, K], [(1 - gamma_H)/A', gamma_H]]`` with ``A' = A/2``."""

    T: float
    gamma_L: float
    K: float
    A: float
    gamma_H: float
    alpha: float
    rate_per_time: float
    M: np.ndarray
    sweep: list = field(default_factory=list)
    r_A: float = np.nan

    def bound(self, norm0, bracket0, k):
        """Upper bound on ``||S~_{kT} f||`` from ``U_0 = (||f||, [f])``."""
        U = np.array([norm0, bracket0], dtype=float)
        for _ in range(k):
            U = self.M @ U
        return float(U[0])


@dataclass
class IsolationResult:
    eps: float
    alpha_res: float
    lam_probe: float
    certificate: HarrisCertificate


def find_doblin_minorization(K, psi0) -> np.ndarray:
    """Largest ``g0`` with ``K_ij >= g0_i psi0_j``, namely ``g0_i = min_j K_ij / psi0_j``.

    The minorization ``S f >= g0 <psi0, f>`` then holds for every ``f >= 0``,
    since it holds on each point mass.
    """
    psi0 = np.asarray(psi0, dtype=float)
    if np.any(psi0 <= 0):
        raise DoblinError("psi0 must be strictly positive")
    g0 = np.min(np.asarray(K) / psi0[None, :], axis=1)
    if not np.any(g0 > 0):
        raise DoblinError("minorant g0 vanishes identically")
    return g0


def doblin_rate(g0, psi0, phi1, lam1, T, grid) -> float:
    """``gamma = 1 - exp(-lam1 T) <phi1, g0 / R0>`` with ``R0 = max phi1 / psi0``.

    Raises :class:`DoblinError` when ``gamma >= 1``.
    """
    g0 = np.asarray(g0, dtype=float)
    if not np.any(g0 > 0):
        raise DoblinError("minorant g0 vanishes identically")
    R0 = float(np.max(np.asarray(phi1) / np.asarray(psi0)))
    gamma = 1.0 - np.exp(-lam1 * T) * pairing(phi1, g0 / R0, grid)
    if not gamma < 1:
        raise DoblinError(f"witness too weak: gamma={gamma:.6g}")
    return float(gamma)


def doblin_witness(K, grid, psi0, phi1, lam1, T) -> DoblinWitness:
    """Minorant, ``R0`` and contraction factor for the kernel of ``S_T``."""
    g0 = find_doblin_minorization(K, psi0)
    gamma = doblin_rate(g0, psi0, phi1, lam1, T, grid)
    R0 = float(np.max(np.asarray(phi1) / np.asarray(psi0)))
    return DoblinWitness(np.asarray(psi0, dtype=float), g0, R0, gamma, float(T))


def check_lyapunov(K, grid, phi1, gamma_L) -> LyapunovResult:
    """Smallest ``K`` with ``||S f|| <= gamma_L ||f|| + K [f]_phi1`` on point masses.

    ``a_j = sum_i w_i m_i K_ij / m_j`` is the weighted amplification of column
    ``j``; then ``K = max_j (a_j - gamma_L)_+ m_j / phi1_j``. Both sides are
    convex in ``f``, so point masses are the extreme cases.
    """
    w, m = grid.quad_weights, grid.weight_m
    a = (w * m) @ np.asarray(K) / m
    excess = np.maximum(a - gamma_L, 0.0)
    bad = (excess > 0) & (phi1 <= 0)
    if np.any(bad):
        raise LyapunovError("phi1 vanishes where the amplification exceeds gamma_L")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(excess > 0, excess * m / phi1, 0.0)
    return LyapunovResult(float(gamma_L), float(np.max(ratio)), a)


def check_harris(K, grid, phi1, A, lam1, T) -> HarrisResult:
    """Coupling constant on the core set ``{A phi1 / m > 1/2}``.

    ``g_A,i = min_{j in C} K_ij / (2 max_{j in C} phi1_j)`` and
    ``gamma_H = 1 - exp(-lam1 T) <phi1, g_A>``. For a resolvent kernel pass
    ``lam1 = 0``.
    """
    m = grid.weight_m
    core = np.flatnonzero(A * phi1 / m > 0.5)
    if core.size == 0:
        raise HarrisError("core set is empty")
    Kc = np.asarray(K)[:, core]
    g = np.min(Kc, axis=1) / (2.0 * np.max(phi1[core]))
    gamma_H = 1.0 - np.exp(-lam1 * T) * pairing(phi1, g, grid)
    return HarrisResult(float(A), core, g, float(gamma_H))


def contraction_matrix(gamma_L, K, A, gamma_H):
    Ap = A / 2.0
    return np.array([[gamma_L, K], [(1.0 - gamma_H) / Ap, gamma_H]])


def contraction_factor(gamma_L, K, A, gamma_H) -> float:
    """Spectral radius of the contraction matrix (both eigenvalues are real)."""
    Ap = A / 2.0
    tr = gamma_L + gamma_H
    det = gamma_L * gamma_H - (1.0 - gamma_H) * K / Ap
    disc = max(tr * tr - 4.0 * det, 0.0)
    mu = 0.5 * (tr + np.array([1.0, -1.0]) * np.sqrt(disc))
    return float(np.max(np.abs(mu)))


def assemble_certificate(gamma_L, K, A, gamma_H, T, g_A=None, phi1=None, grid=None) -> HarrisCertificate:
    """Combine Lyapunov and Harris constants into a convergence factor ``alpha``.

    Requires ``A > K / (1 - gamma_L)``; raises :class:`CertificateError` when
    the resulting ``alpha`` is not below 1. With ``g_A``, ``phi1`` and
    ``grid`` the coupling mass ``r_A = <phi1, g_A>`` is recorded.
    """
    if not (0 <= gamma_L < 1):
        raise CertificateError("gamma_L must lie in [0, 1)")
    if not A > K / (1.0 - gamma_L):
        raise CertificateError(f"A={A:.6g} does not exceed K/(1-gamma_L)={K / (1 - gamma_L):.6g}")
    alpha = contraction_factor(gamma_L, K, A, gamma_H)
    if not alpha < 1:
        raise CertificateError(f"contraction factor alpha={alpha:.6g} is not below 1")
    return HarrisCertificate(
        T=float(T),
        gamma_L=float(gamma_L),
        K=float(K),
        A=float(A),
        gamma_H=float(gamma_H),
        alpha=alpha,
        # alpha = 0 means one step already reaches the equilibrium
        rate_per_time=-np.log(alpha) / T if alpha > 0 else np.inf,
        M=contraction_matrix(gamma_L, K, A, gamma_H),
        r_A=pairing(phi1, g_A, grid) if g_A is not None else np.nan,
    )


def certificate_from_doblin(w: DoblinWitness, gamma_L=0.0) -> HarrisCertificate:
    """Doblin as a Harris certificate: ``K = 0``, so ``alpha = max(gamma_L, gamma)``."""
    return assemble_certificate(gamma_L, 0.0, 1.0, w.gamma, w.T)


def _sweep(Kt, Kh, grid, phi1, lam1, T, gamma_L_values, n_A, A_span=1e4):
    best = None
    rows = []
    for gL in gamma_L_values:
        try:
            lyap = check_lyapunov(Kt, grid, phi1, gL)
        except LyapunovError:
            continue
        A0 = max(lyap.K / (1.0 - gL), 1e-12)
        for A in A0 * np.logspace(np.log10(1.0 + 1e-6), np.log10(A_span), n_A):
            try:
                h = check_harris(Kh, grid, phi1, A, lam1, T)
            except HarrisError:
                continue
            alpha = contraction_factor(gL, lyap.K, A, h.gamma_H)
            rows.append((gL, lyap.K, A, h.gamma_H, alpha))
            if alpha < 1 and (best is None or alpha < best[-1]):
                best = (gL, lyap.K, A, h.gamma_H, alpha)
    return best, rows


GAMMA_L_DEFAULT = (0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9)


def certify(gen: PositiveGenerator, trip, T, gamma_L=None, n_A=60, A_span=1e4) -> HarrisCertificate:
    """Sweep ``gamma_L`` and ``A`` for the smallest contraction factor of ``S~_T``.

    For each ``gamma_L``, ``A`` runs over a log grid from just above
    ``K / (1 - gamma_L)`` to ``A_span`` times that value.
    """
    K = semigroup_kernel(gen, T)
    Kt = np.exp(-trip.lam * T) * K
    gls = GAMMA_L_DEFAULT if gamma_L is None else np.atleast_1d(gamma_L)
    best, rows = _sweep(Kt, K, gen.grid, trip.phi1, trip.lam, T, gls, n_A, A_span)
    if best is None:
        raise CertificateError("no (gamma_L, A) pair gives alpha < 1")
    h = check_harris(K, gen.grid, trip.phi1, best[2], trip.lam, T)
    cert = assemble_certificate(best[0], best[1], best[2], best[3], T, h.g_A, trip.phi1, gen.grid)
    cert.sweep = rows
    return cert


def isolation_radius(alpha_res, lam_probe, lam1) -> float:
    """``eps = (1/alpha_res - 1)(lam_probe - lambda_1)``."""
    if not 0 < alpha_res < 1:
        raise CertificateError("alpha_res must lie in (0, 1)")
    if not lam_probe > lam1:
        raise CertificateError("probe point must exceed lambda_1")
    return float((1.0 / alpha_res - 1.0) * (lam_probe - lam1))


def certify_isolation(gen: PositiveGenerator, trip, lam_probe=None, gamma_L=None, n_A=60, rate=None, A_span=1e4) -> IsolationResult:
    """Isolation radius of ``lambda_1`` from a Harris certificate on the resolvent.

    The normalized resolvent ``R~ = (lam - lambda_1)(lam - A)^-1`` fixes
    ``phi1`` pairings. If its certified factor is ``alpha_res``, no other
    eigenvalue lies within ``eps = (1/alpha_res - 1)(lam - lambda_1)`` of
    ``lambda_1``. The probe defaults to ``lambda_1 + rate`` when the rate of
    a time-domain certificate is supplied, else ``lambda_1 + 1``.
    """
    lam1 = trip.lam
    if lam_probe is None:
        lam = lam1 + (float(rate) if rate is not None and np.isfinite(rate) else 1.0)
    else:
        lam = float(lam_probe)
    if not lam > lam1:
        raise CertificateError("probe point must exceed lambda_1")
    R = (lam - lam1) * resolvent_kernel(gen, lam)
    gls = GAMMA_L_DEFAULT if gamma_L is None else np.atleast_1d(gamma_L)
    best, rows = _sweep(R, R, gen.grid, trip.phi1, 0.0, 1.0, gls, n_A, A_span)
    if best is None:
        raise CertificateError("no certificate for the resolvent")
    cert = assemble_certificate(best[0], best[1], best[2], best[3], 1.0)
    cert.sweep = rows
    return IsolationResult(isolation_radius(cert.alpha, lam, lam1), cert.alpha, lam, cert)


def projected_bracket_trajectory(K, grid, phi1, f1, f, k_max):
    """``[S~^k (f - Pi f)]`` for ``k <= k_max`` by iterating ``(I - Pi) S~``.

    Re-projecting each step only removes rounding drift, since ``Pi``
    commutes with the semigroup.
    """
    g = f - pairing(f, phi1, grid) * f1
    out = [pairing(np.abs(g), phi1, grid)]
    norms = [weighted_norm(g, grid)]
    for _ in range(k_max):
        g = K @ (grid.quad_weights * g)
        g = g - pairing(g, phi1, grid) * f1
        out.append(pairing(np.abs(g), phi1, grid))
        norms.append(weighted_norm(g, grid))
    return np.array(out), np.array(norms)
