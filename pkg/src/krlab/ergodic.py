"""Simulation of the rescaled semigroup and measured ergodic behavior.

The rescaled semigroup ``S~_t = exp(-lambda_1 t) S_t`` is advanced by
uniformization, which also yields exact time integrals for Cesaro means.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .eigen import Eigentriplet
from .operators import PositiveGenerator, Propagator, pairing, weighted_norm


class PeriodError(ValueError):
    """No oscillation above the noise floor."""


class LatticeError(ValueError):
    """Lattice check needs a dyadic grid and a start node in the first octave."""


MAX_SAMPLES = 1_000_000


@dataclass
class Trajectory:
    """Recorded rescaled evolution.

    ``observable_limits`` holds the principal-mode limits
    ``<f0, phi1> <f1, psi_k>`` of the observables.
    """

    times: np.ndarray
    error_norms: np.ndarray
    conservation: np.ndarray
    observables: np.ndarray
    mass0: float
    cesaro: dict = field(default_factory=dict)
    states: list = field(default_factory=list)
    observable_limits: np.ndarray = None

    def to_csv(self, path):
        """Write columns ``time, error_norm, conservation, observable_k...``."""
        k = self.observables.shape[1]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["time", "error_norm", "conservation"] + [f"observable_{i}" for i in range(k)])
            for i, t in enumerate(self.times):
                wr.writerow([repr(float(t)), repr(float(self.error_norms[i])), repr(float(self.conservation[i]))]
                            + [repr(float(v)) for v in self.observables[i]])


@dataclass
class RateFit:
    rate: float
    prefactor: float
    r2: float
    window: tuple
    saturated: bool


@dataclass
class PeriodEstimate:
    period: float
    uncertainty: float
    zero_crossing_period: float
    peak_ratio: float
    method: str = "fft-peak"


@dataclass
class LatticeResult:
    leak: float
    ok: bool
    times: np.ndarray

    def __bool__(self):
        return bool(self.ok)


@dataclass
class CesaroResult:
    Ts: np.ndarray
    cesaro_errors: np.ndarray
    instantaneous_errors: np.ndarray
    ratios: np.ndarray


def simulate_rescaled(
    gen: PositiveGenerator,
    trip: Eigentriplet,
    f0,
    t_end,
    dt,
    observables=None,
    cesaro_times=(),
    store_states=False,
    max_samples=MAX_SAMPLES,
) -> Trajectory:
    """Advance ``f0`` under ``S~_t`` on the time grid ``0, dt, ..., t_end``.

    Records the error ``||S~_t f0 - <f0, phi1> f1||``, the conserved pairing
    ``<S~_t f0, phi1>`` and pairings with the given dual vectors. For each
    ``T`` in ``cesaro_times`` (a multiple of ``dt``) the Cesaro error
    ``||(1/T) int_0^T S~_t f0 dt - <f0, phi1> f1||`` is stored. Runs with
    more than ``max_samples`` steps record every ``k``-th step only.
    """
    if dt <= 0 or t_end < 0:
        raise ValueError("need dt > 0 and t_end >= 0")
    grid = gen.grid
    n_steps = int(round(t_end / dt))
    if abs(n_steps * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError("t_end must be a multiple of dt")
    prop = Propagator(gen.shifted(trip.lam))
    obs = np.zeros((0, grid.n)) if observables is None else np.atleast_2d(observables)
    mass0 = pairing(f0, trip.phi1, grid)
    target = mass0 * trip.f1
    ces_steps = {int(round(T / dt)): T for T in cesaro_times}
    every = max(1, -(-(n_steps + 1) // max_samples))
    f = np.array(f0, dtype=float)
    acc = np.zeros_like(f)
    times, err, cons, ob, states = [], [], [], [], []

    def record(k, f):
        times.append(k * dt)
        err.append(weighted_norm(f - target, grid))
        cons.append(pairing(f, trip.phi1, grid))
        ob.append(obs @ (grid.quad_weights * f))
        if store_states:
            states.append(f.copy())

    record(0, f)
    cesaro = {}
    for k in range(1, n_steps + 1):
        if ces_steps:
            f, integ = prop.integrate(f, dt)
            acc += integ
        else:
            f = prop.step(f, dt)
        if k % every == 0 or k == n_steps:
            record(k, f)
        if k in ces_steps:
            T = ces_steps[k]
            cesaro[T] = weighted_norm(acc / T - target, grid)
    limits = mass0 * (obs @ (grid.quad_weights * trip.f1))
    return Trajectory(
        np.array(times), np.array(err), np.array(cons), np.array(ob).reshape(len(times), obs.shape[0]),
        mass0, cesaro, states, limits,
    )


def default_dt(period_guess=None, rate_guess=None):
    """``min(period, 1/rate) / 8``, or ``1/16`` without guesses."""
    c = [v for v in (period_guess, 1.0 / rate_guess if rate_guess else None) if v]
    return min(c) / 8.0 if c else 1.0 / 16.0


def fit_decay_rate(traj: Trajectory, window=None, floor=1e-12, min_samples=10) -> RateFit:
    """Least-squares fit of ``log error = log C - rate t``.

    ``window=(t_lo, t_hi)`` selects samples; by default the second half of
    the samples whose error exceeds ``floor`` times the initial error. When
    fewer than ``min_samples`` samples remain the fit is flagged as
    saturated.
    """
    t, e = traj.times, traj.error_norms
    ok = e > floor * max(e[0], np.finfo(float).tiny)
    if window is None:
        idx = np.flatnonzero(ok)
        if idx.size:
            last = idx[-1]
            first = last // 2
            sel = np.zeros_like(ok)
            sel[first : last + 1] = True
            sel &= ok
        else:
            sel = ok
    else:
        sel = ok & (t >= window[0]) & (t <= window[1])
    if np.count_nonzero(sel) < min_samples:
        return RateFit(np.nan, np.nan, np.nan, (np.nan, np.nan), True)
    ts, ls = t[sel], np.log(e[sel])
    slope, icpt = np.polyfit(ts, ls, 1)
    pred = icpt + slope * ts
    ss = np.sum((ls - ls.mean()) ** 2)
    r2 = 1.0 - np.sum((ls - pred) ** 2) / ss if ss > 0 else 1.0
    return RateFit(float(-slope), float(np.exp(icpt)), float(r2), (float(ts[0]), float(ts[-1])), False)


def cesaro_test(gen, trip, f0, T) -> float:
    """``||(1/T) int_0^T S~_t f0 dt - <f0, phi1> f1||``, with the integral computed exactly."""
    if not T > 0:
        raise ValueError("T must be positive")
    prop = Propagator(gen.shifted(trip.lam))
    _, integ = prop.integrate(np.asarray(f0, dtype=float), T)
    target = pairing(f0, trip.phi1, gen.grid) * trip.f1
    return weighted_norm(integ / T - target, gen.grid)


def cesaro_profile(gen, trip, f0, Ts, dt) -> CesaroResult:
    """Cesaro and instantaneous errors at each ``T`` and at ``2T``.

    ``ratios[i] = cesaro(2 T_i) / cesaro(T_i)``.
    """
    Ts = np.asarray(Ts, dtype=float)
    allT = sorted(set(Ts.tolist()) | set((2 * Ts).tolist()))
    traj = simulate_rescaled(gen, trip, f0, max(allT), dt, cesaro_times=allT)
    ces = np.array([[traj.cesaro[T], traj.cesaro[2 * T]] for T in Ts])
    inst = np.array([np.interp([T, 2 * T], traj.times, traj.error_norms) for T in Ts])
    return CesaroResult(Ts, ces, inst, ces[:, 1] / ces[:, 0])


def detect_period(traj: Trajectory, obs_index=0, t_skip=None, noise_floor=1e-9, min_ratio=10.0, pad=16, min_lobes=4) -> PeriodEstimate:
    """Dominant period of an observable after removing its principal-mode limit.

    The limit ``<f0, phi1> <f1, psi>`` is subtracted (estimated from the tail
    mean when the trajectory does not carry it). Only samples after
    ``t_skip`` (default a fifth of the horizon) are used, cut where the
    signal falls below ``noise_floor`` times its peak. The detrended signal
    must have at least ``min_lobes`` sign-alternating lobes above that floor
    and a spectral peak at nonzero frequency exceeding ``min_ratio`` times
    the median power. The zero-crossing spacing is returned as an
    independent estimate; ``uncertainty`` is the FFT bin width in period
    units.

    Raises
    ------
    PeriodError
        When no oscillation is found, as for a mixing model.
    """
    t = traj.times
    y = traj.observables[:, obs_index]
    t_skip = 0.2 * t[-1] if t_skip is None else t_skip
    if traj.observable_limits is not None:
        y = y - traj.observable_limits[obs_index]
    else:
        y = y - y[-max(3, y.size // 10):].mean()
    scale = max(np.max(np.abs(traj.observables[:, obs_index])), np.finfo(float).tiny)
    floor = noise_floor * scale
    sel = t >= t_skip
    ts, yd = t[sel], y[sel]
    big = np.flatnonzero(np.abs(yd) > floor)
    if big.size == 0:
        raise PeriodError("no oscillation above the noise floor")
    ts, yd = ts[: big[-1] + 1], yd[: big[-1] + 1]
    # lobes: maximal runs of constant sign, counted when they rise above the floor
    cuts = np.flatnonzero(np.signbit(yd[1:]) != np.signbit(yd[:-1])) + 1
    lobes = [seg for seg in np.split(yd, cuts) if np.max(np.abs(seg)) > floor]
    signs = [np.sign(seg[np.argmax(np.abs(seg))]) for seg in lobes]
    alternations = sum(1 for a, b in zip(signs, signs[1:]) if a != b)
    if alternations + 1 < min_lobes:
        raise PeriodError("observable does not oscillate above the noise floor")
    dt = ts[1] - ts[0]
    nfft = pad * ts.size
    spec = np.abs(np.fft.rfft(yd * np.hanning(ts.size), nfft)) ** 2
    freqs = np.fft.rfftfreq(nfft, dt)
    k = int(np.argmax(spec[1:]) + 1)
    ratio = spec[k] / max(np.median(spec[1:]), np.finfo(float).tiny)
    if ratio < min_ratio or k >= spec.size - 1:
        raise PeriodError("no spectral peak above the noise floor")
    a, b, c = np.log(spec[k - 1 : k + 2])
    shift = 0.5 * (a - c) / (a - 2 * b + c) if (a - 2 * b + c) != 0 else 0.0
    f_peak = freqs[k] + shift * (freqs[1] - freqs[0])
    period = 1.0 / f_peak
    unc = period**2 / (ts[-1] - ts[0] + dt)
    crossings = cuts - 1
    tz = ts[crossings] - yd[crossings] * dt / (yd[crossings + 1] - yd[crossings])
    zc = 2.0 * float(np.mean(np.diff(tz))) if tz.size > 1 else np.nan
    return PeriodEstimate(float(period), float(unc), zc, float(ratio))


def conservation_check(traj: Trajectory) -> float:
    """``max_t |<S~_t f0, phi1> - <f0, phi1>| / (1 + |<f0, phi1>|)``."""
    c0 = traj.conservation[0]
    return float(np.max(np.abs(traj.conservation - c0)) / (1.0 + abs(c0)))


def _coset_biomass(f, grid, q):
    v = grid.nodes * grid.quad_weights * f
    n = v.size
    pad = (-n) % q
    return np.concatenate([v, np.zeros(pad)]).reshape(-1, q).sum(axis=0)


def lattice_support_check(gen: PositiveGenerator, j0, t_end=3.0, dt=0.1, tol=1e-10) -> LatticeResult:
    """Dyadic lattice invariant of mitosis with a non-mixing growth rate.

    Mitosis moves biomass ``x f`` from node ``j + q`` to node ``j`` without
    changing it, so the biomass carried by each residue class ``j mod q``
    evolves by transport alone. When the transport rates repeat with period
    ``q`` (the discrete form of ``a(2x) = 2 a(x)``) the residue-class
    biomass obeys a closed ``q x q`` system built from the first octave. The
    leak is the largest relative L1 gap between the simulated and predicted
    residue-class biomass; a mixing growth rate leaks.
    """
    grid = gen.grid
    q = grid.geometric_ratio
    if q is None:
        raise LatticeError("lattice check needs a dyadic grid (geometric_ratio)")
    if not 0 <= j0 < q:
        raise LatticeError("start node must lie in the first octave")
    A = gen.matrix
    w, x = grid.quad_weights, grid.nodes
    sub = np.asarray(A[np.arange(1, q + 1), np.arange(q)]).ravel() if hasattr(A, "tocsr") else A[np.arange(1, q + 1), np.arange(q)]
    out = sub * w[1 : q + 1] / w[:q]
    rho = x[1 : q + 1] / x[:q]
    Q = np.diag(-out)
    for r in range(q):
        Q[(r + 1) % q, r] += rho[r] * out[r]
    f = np.zeros(grid.n)
    f[j0] = 1.0 / w[j0]
    V0 = _coset_biomass(f, grid, q)
    prop = Propagator(gen)
    n_steps = int(round(t_end / dt))
    step = sla.expm(Q * dt)
    V = V0.copy()
    leak = 0.0
    times = dt * np.arange(1, n_steps + 1)
    for _ in range(n_steps):
        f = prop.step(f, dt)
        V = step @ V
        sim = _coset_biomass(f, grid, q)
        leak = max(leak, float(np.sum(np.abs(sim - V)) / np.sum(np.abs(sim))))
    return LatticeResult(leak, leak <= tol, times)


def boundary_projection(gen: PositiveGenerator, trip: Eigentriplet, tol_bnd):
    """Spectral projector data for eigenvalues with real part within ``tol_bnd`` of ``lambda_1``.

    Returns the eigenvalues, right eigenvectors and scaled left eigenvectors
    such that ``P f = sum_k g_k <f, psi_k>`` (including the principal mode).
    Dense, for small grids.
    """
    A = gen.dense()
    w = gen.grid.quad_weights
    vals, vl, vr = sla.eig(A, left=True, right=True)
    keep = np.abs(vals.real - trip.lam) <= tol_bnd
    vals, vl, vr = vals[keep], vl[:, keep], vr[:, keep]
    # left eigenvectors of A are w * psi for quadrature-dual psi
    psi = np.conj(vl) / w[:, None]
    norm = np.sum(w[:, None] * vr * psi, axis=0)
    return vals, vr, psi / norm[None, :]


def oscillation_split(gen, trip, f0, times, tol_bnd):
    """Errors of ``S~_t f0`` against ``Pi f0`` and against the full boundary projection.

    Also returns the norm of the non-principal boundary component, the
    oscillation amplitude. Uses the dense eigendecomposition.
    """
    vals, g, psi = boundary_projection(gen, trip, tol_bnd)
    grid = gen.grid
    w = grid.quad_weights
    coef = np.sum(w[:, None] * f0[:, None] * psi, axis=0)
    principal = np.abs(vals - trip.lam) < 1e-8 * (1 + abs(trip.lam))
    prop = Propagator(gen.shifted(trip.lam))
    f = np.array(f0, dtype=float)
    t_prev = 0.0
    e_pi, e_bnd, amp = [], [], []
    mass0 = pairing(f0, trip.phi1, grid)
    for t in times:
        f = prop.step(f, t - t_prev)
        t_prev = t
        modes = g * (coef * np.exp((vals - trip.lam) * t))[None, :]
        osc = np.real(modes[:, ~principal].sum(axis=1))
        full = np.real(modes.sum(axis=1))
        e_pi.append(weighted_norm(f - mass0 * trip.f1, grid))
        e_bnd.append(weighted_norm(f - full, grid))
        amp.append(weighted_norm(osc, grid))
    return np.array(e_pi), np.array(e_bnd), np.array(amp)
