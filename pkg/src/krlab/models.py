"""Discretized positive semigroups from structured population dynamics.

Every builder returns a :class:`~krlab.operators.PositiveGenerator` whose
matrix is Metzler by construction. Finite volume schemes are first-order
upwind so that positivity holds without a CFL restriction (time stepping is
done by uniformization, not explicit Euler).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy import integrate, optimize

from .operators import (
    GridError,
    PositiveGenerator,
    WeightedGrid,
    adjoint,
    integrate_semigroup,
)
from .presets import GaussianKernel, Kernel, coefficient, kernel


class ModelError(ValueError):
    """Model parameters violate a structural requirement."""


class Kappa0Error(ValueError):
    """Compatibility constant ``a`` is not above 1, so no lower bound follows."""

    def __init__(self, a, msg=None):
        self.a = a
        super().__init__(msg or f"compatibility constant a={a:.6g} <= 1")


class RootError(ValueError):
    """No sign change of the characteristic function on the search bracket."""


def _coef(c):
    return coefficient(c)


def _check_nonneg(values, name):
    if np.any(values < 0) or not np.all(np.isfinite(values)):
        raise ModelError(f"{name} must be finite and nonnegative on the grid")


def _weight(spec, ref=1.0):
    """Weight function ``m`` from a preset: ``power:r`` gives ``(x/ref)**r``."""
    if spec is None:
        return None
    if callable(spec) and not isinstance(spec, str):
        return spec
    name, *args = spec.split(":")
    if name == "power":
        r = float(args[0])
        return lambda x: np.maximum((np.asarray(x) / ref) ** r, 1.0)
    if name == "exp":
        eta = float(args[0])
        return lambda x: np.exp(eta * np.maximum(np.asarray(x) - ref, 0.0))
    if name == "one":
        return None
    raise ModelError(f"unknown weight preset {spec!r}")


# ---------------------------------------------------------------- renewal


@dataclass
class RenewalModel:
    """Age-structured renewal equation ``d_t f + d_y f + K f = 0`` with births
    ``f(t, 0) = int r f dy`` on the truncated age interval ``[0, y_max]``."""

    r_O: object = "constant:2"
    K: object = "constant:1"
    y_max: float = 20.0
    n: int = 1000

    def __post_init__(self):
        self.r_O = _coef(self.r_O)
        self.K = _coef(self.K)
        if self.n < 3:
            raise ModelError("renewal grid needs n >= 3")
        if not self.y_max > 0:
            raise ModelError("y_max must be positive")

    @property
    def r_liminf_positive(self) -> bool:
        """Whether ``r_O`` stays positive on the last tenth of the age window."""
        y = np.linspace(0.9 * self.y_max, self.y_max, 64)
        return bool(np.min(self.r_O(y)) > 0)


def build_renewal(model: RenewalModel) -> PositiveGenerator:
    """Upwind transport in age plus a birth row feeding the first cell.

    Row 0 receives ``sum_j w_j r_O(y_j) f_j / dy`` so that the total newborn
    flux equals the continuous birth integral.
    """
    grid = WeightedGrid.uniform(0.0, model.y_max, model.n)
    y = grid.nodes
    dy = grid.quad_weights[0]
    K = model.K(y)
    r = model.r_O(y)
    _check_nonneg(K, "K")
    _check_nonneg(r, "r_O")
    n = model.n
    A = sp.lil_matrix((n, n))
    A.setdiag(-1.0 / dy - K)
    A.setdiag(np.full(n - 1, 1.0 / dy), k=-1)
    birth = grid.quad_weights * r / dy
    A = sp.csr_matrix(A) + sp.csr_matrix((birth, (np.zeros(n, int), np.arange(n))), shape=(n, n))
    return PositiveGenerator.from_matrix(
        A, grid, "renewal", {"r_liminf_positive": model.r_liminf_positive}
    )


def euler_lotka_root(model: RenewalModel, bracket=(-1.0, 1.0), xtol=1e-13) -> float:
    """Root of ``int_0^y_max r(y) exp(-lam y - int_0^y K) dy = 1`` by bisection.

    The left side is decreasing in ``lam``; the bracket is widened until it
    shows a sign change.
    """
    r, K, ymax = model.r_O, model.K, model.y_max
    kpts = [p for p in K.breakpoints if 0 < p < ymax]
    rpts = sorted(set(p for p in r.breakpoints + K.breakpoints if 0 < p < ymax))

    def cumK(y):
        if y <= 0:
            return 0.0
        pts = [p for p in kpts if p < y] or None
        return integrate.quad(lambda s: float(K(s)), 0.0, y, points=pts, limit=200)[0]

    def F(lam):
        val = integrate.quad(
            lambda y: float(r(y)) * np.exp(-lam * y - cumK(y)),
            0.0,
            ymax,
            points=rpts or None,
            limit=400,
            epsabs=1e-14,
            epsrel=1e-13,
        )[0]
        return val - 1.0

    if F(0.0) + 1.0 <= 0:
        raise RootError("int r exp(-int K) dy must be positive")
    lo, hi = bracket
    flo, fhi = F(lo), F(hi)
    for _ in range(12):
        if flo * fhi <= 0:
            break
        lo, hi = lo - (hi - lo), hi + (hi - lo)
        flo, fhi = F(lo), F(hi)
    else:
        raise RootError("no sign change of the Euler-Lotka function on the search bracket")
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    return float(optimize.bisect(F, lo, hi, xtol=xtol, maxiter=200))


def renewal_psi0(gen: PositiveGenerator, t0) -> np.ndarray:
    """Doblin weight ``int_0^{t0/4} S*_s 1 ds`` for the renewal semigroup."""
    _, acc = integrate_semigroup(adjoint(gen), np.ones(gen.n), t0 / 4.0)
    return acc


# -------------------------------------------------------------- diffusion


@dataclass
class DiffusionModel:
    """``f'' + b f' + c f`` on ``(lo, hi)`` with homogeneous Dirichlet conditions."""

    b: object = "zero"
    c: object = "zero"
    lo: float = 0.0
    hi: float = np.pi
    n: int = 200

    def __post_init__(self):
        self.b = _coef(self.b)
        self.c = _coef(self.c)
        if self.n < 3:
            raise ModelError("diffusion grid needs n >= 3")
        if not self.hi > self.lo:
            raise ModelError("need hi > lo")


def build_diffusion(model: DiffusionModel) -> PositiveGenerator:
    """Three-point Laplacian on interior nodes, upwind drift, diagonal ``c``."""
    n = model.n
    h = (model.hi - model.lo) / (n + 1)
    x = model.lo + h * np.arange(1, n + 1)
    grid = WeightedGrid(x, np.full(n, h), np.ones(n))
    b = model.b(x)
    c = model.c(x)
    bp, bm = np.maximum(b, 0.0), np.maximum(-b, 0.0)
    main = -2.0 / h**2 - (bp + bm) / h + c
    upper = 1.0 / h**2 + bp[:-1] / h
    lower = 1.0 / h**2 + bm[1:] / h
    A = sp.diags([lower, main, upper], [-1, 0, 1], format="csr")
    return PositiveGenerator.from_matrix(A, grid, "diffusion")


Diffusion1DModel = DiffusionModel
build_diffusion_1d = build_diffusion


# ---------------------------------------------------------------- mitosis


@dataclass
class MitosisModel:
    """Growth and equal mitosis ``d_t f + d_x(a f) + K f = 4 K(2x) f(2x)``.

    The grid is dyadic with ``q`` cells per octave on ``[x0, x0 2**levels]``.
    ``K`` must vanish on the first octave ``(0, 2 x0]``.
    """

    a: object = "affine:1:1"
    K: object = "step:3:2"
    x0: float = 1.0
    q: Optional[int] = None
    levels: int = 8
    weight: str = "power:2"
    k_floor: Optional[float] = 0.5

    def __post_init__(self):
        self.a = _coef(self.a)
        self.K = _coef(self.K)
        if self.q is None:
            raise ModelError("geometric_ratio required: mitosis needs q nodes per octave")
        if self.q < 1 or self.levels < 2:
            raise ModelError("need q >= 1 and levels >= 2")
        if not self.x0 > 0:
            raise ModelError("x0 must be positive")

    @property
    def n(self) -> int:
        return self.q * self.levels


def build_mitosis(model: MitosisModel) -> PositiveGenerator:
    """Conservative upwind transport on the dyadic grid plus exact-shift mitosis.

    The flux through edge ``e_{j+1}`` is ``a(e_{j+1}) f_j``; nothing enters at
    ``x0`` and the flux through the last edge leaves the domain. Cells ``j``
    and ``j + q`` have widths in ratio 1:2, so the gain ``4 K(2x) f(2x)``
    becomes the single entry ``A[j, j+q] = 4 K(x_{j+q})``.
    """
    q, x0 = model.q, model.x0
    grid = WeightedGrid.dyadic(x0, q, model.levels, _weight(model.weight, x0))
    x, e, w = grid.nodes, grid.edges, grid.quad_weights
    n = grid.n
    a_edge = model.a(e[1:])
    if np.any(a_edge <= 0) or not np.all(np.isfinite(a_edge)):
        raise ModelError("growth rate a must be positive on the grid")
    K = model.K(x)
    _check_nonneg(K, "K")
    if np.any(K[:q] != 0):
        raise ModelError("K must vanish on the first octave (0, 2 x0]")
    xK_a = x[-1] * K[-1] / model.a(x[-1:])[0]
    if model.k_floor is not None and xK_a <= model.k_floor:
        raise ModelError(f"x K / a at the last node is {xK_a:.3g}, not above the floor {model.k_floor}")
    rows = [np.arange(n), np.arange(1, n), np.arange(n - q)]
    cols = [np.arange(n), np.arange(n - 1), np.arange(q, n)]
    vals = [-a_edge / w - K, a_edge[:-1] / w[1:], 4.0 * K[q:]]
    A = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    meta = {"q": q, "x0": x0, "levels": model.levels, "xK_over_a_last": float(xK_a)}
    return PositiveGenerator.from_matrix(A, grid, "mitosis", meta)


def mitosis_period(a, x=1.0) -> float:
    """Transit time ``int_x^{2x} dy / a(y)`` through one octave."""
    a = _coef(a)
    if not x > 0:
        raise ModelError("x must be positive")
    if np.any(a(np.linspace(x, 2 * x, 257)) <= 0):
        raise ModelError("growth rate must be positive on [x, 2x]")
    val, _ = integrate.quad(lambda y: 1.0 / float(a(y)), x, 2 * x, epsabs=1e-14, epsrel=1e-13)
    return val


def is_non_mixing(a, x0=1.0, levels=8, q=16) -> bool:
    """Check ``a(2x) = 2 a(x)`` on a dyadic sample of nodes."""
    a = _coef(a)
    xs = WeightedGrid.dyadic(x0, q, levels).nodes
    return bool(np.allclose(a(2 * xs[:-q]), 2 * a(xs[:-q]), rtol=1e-12, atol=0))


# ------------------------------------------------------ mutation-selection


@dataclass
class MutationSelectionModel:
    """``L f = J * f - W f`` on ``[-R, R]``."""

    J: object = "bump:1:1"
    W: object = "power:4"
    R: float = 4.0
    n: int = 800
    A_set: tuple = (-1.0, 1.0)
    beta: float = 1.0 / 16.0
    weight: Optional[str] = None

    def __post_init__(self):
        self.J = kernel(self.J)
        self.W = _coef(self.W)
        if self.n < 2 or not self.R > 0:
            raise ModelError("need n >= 2 and R > 0")


def convolution_matrix(kern: Kernel, grid: WeightedGrid) -> np.ndarray:
    """Matrix of ``f -> int J(x - y) f(y) dy`` on a uniform 1D cell grid.

    Uses exact cell masses when the kernel has them and ``J(x_i - x_j) w_j``
    otherwise.
    """
    x = grid.nodes
    d = x[:, None] - x[None, :]
    if grid.edges is not None:
        e = grid.edges
        cm = kern.cell_mass(x[:, None] - e[None, 1:], x[:, None] - e[None, :-1])
        if cm is not None:
            return np.asarray(cm, dtype=float)
    return kern.density(d) * grid.quad_weights[None, :]


def _ms_grid(R, n, weight):
    return WeightedGrid.uniform(-R, R, n, _weight(weight, 1.0))


def build_mutation_selection(model: MutationSelectionModel) -> PositiveGenerator:
    grid = _ms_grid(model.R, model.n, model.weight)
    C = convolution_matrix(model.J, grid)
    if np.any(C < 0):
        raise ModelError("mutation kernel J must be nonnegative")
    W = model.W(grid.nodes)
    _check_nonneg(W, "W")
    A = C - np.diag(W)
    meta = {"kernel_mass": model.J.mass}
    if isinstance(model.J, GaussianKernel):
        meta["gaussian_tail_deficit"] = model.J.tail_deficit()
    return PositiveGenerator.from_matrix(A, grid, "mutation-selection", meta)


def kappa0_mutation(model: MutationSelectionModel, n=None):
    """Lower bound ``kappa0 = (a - 1) beta`` for the principal eigenvalue.

    ``a`` is the minimum over ``x`` in ``A_beta = A ∩ {W >= beta}`` of
    ``int_{A_beta} J(x - y) / W(y) dy``, computed with the same quadrature as
    the generator (on ``n`` nodes if given).

    Returns
    -------
    a, kappa0 : float
        Raises :class:`Kappa0Error` (carrying ``a``) when ``a <= 1``.
    """
    grid = _ms_grid(model.R, n or model.n, model.weight)
    x = grid.nodes
    lo, hi = model.A_set
    W = model.W(x)
    mask = (x >= lo) & (x <= hi) & (W >= model.beta)
    if not np.any(mask):
        raise Kappa0Error(0.0, "A_beta contains no grid node")
    C = convolution_matrix(model.J, grid)
    sub = C[np.ix_(mask, mask)] / W[mask][None, :]
    a = float(np.min(sub.sum(axis=1)))
    if a <= 1:
        raise Kappa0Error(a)
    return a, (a - 1.0) * model.beta


# ------------------------------------------------------ singular variant


@dataclass
class SingularMSModel:
    """Axis-wise singular mutation ``sum_i eps^-1 int f(x - z e_i) J_i(z/eps) dz - W f``.

    ``J_i`` is a Gaussian with standard deviation ``sigma_i`` and mass
    ``M_i``; the generator uses ``n_axis`` cells per axis on ``[-R, R]^d``.
    """

    d: int = 2
    M: Sequence[float] = (1.0, 1.0)
    sigma: Sequence[float] = (1.0, 1.0)
    eps: float = 0.1
    W: object = "quadratic"
    R: float = 3.0
    n_axis: int = 64

    def __post_init__(self):
        self.W = _coef(self.W)
        self.M = tuple(float(v) for v in np.atleast_1d(self.M))
        self.sigma = tuple(float(v) for v in np.atleast_1d(self.sigma))
        if self.d not in (1, 2):
            raise ModelError("singular model supports d = 1 or 2")
        if len(self.M) != self.d or len(self.sigma) != self.d:
            raise ModelError("M and sigma need one entry per dimension")
        if any(v <= 0 for v in self.M + self.sigma) or not self.eps > 0:
            raise ModelError("M, sigma and eps must be positive")


def axis_kernels(model: SingularMSModel):
    return [GaussianKernel(model.eps * s, m) for s, m in zip(model.sigma, model.M)]


def build_singular_ms(model: SingularMSModel) -> PositiveGenerator:
    """Kronecker sum of per-axis convolutions minus the selection term.

    For ``d = 1`` this is :func:`build_mutation_selection` with the Gaussian
    kernel of standard deviation ``eps sigma_1`` and mass ``M_1``.
    """
    g1 = _ms_grid(model.R, model.n_axis, None)
    kerns = axis_kernels(model)
    deficit = float(sum(k.tail_deficit() for k in kerns))
    if model.d == 1:
        ms = MutationSelectionModel(J=kerns[0], W=model.W, R=model.R, n=model.n_axis)
        gen = build_mutation_selection(ms)
        meta = dict(gen.meta, gaussian_tail_deficit=deficit, eps=model.eps)
        return PositiveGenerator.from_matrix(gen.matrix, gen.grid, "singular-ms", meta)
    grid = WeightedGrid.tensor([g1, g1])
    C1 = sp.csr_matrix(convolution_matrix(kerns[0], g1))
    C2 = sp.csr_matrix(convolution_matrix(kerns[1], g1))
    C1.eliminate_zeros()
    C2.eliminate_zeros()
    I = sp.identity(g1.n, format="csr")
    W = model.W(grid.nodes)
    _check_nonneg(W, "W")
    A = sp.kron(C1, I, format="csr") + sp.kron(I, C2, format="csr") - sp.diags(W)
    meta = {"gaussian_tail_deficit": deficit, "eps": model.eps}
    return PositiveGenerator.from_matrix(sp.csr_matrix(A), grid, "singular-ms", meta)


def kappa0_singular(model: SingularMSModel) -> dict:
    """Constants of the singular lower bound.

    ``kappa1 = sum M_i``, ``zeta = d prod(M_i) / (2 kappa1**d)``,
    ``theta = (1 - zeta**2)**(1/d)`` and ``kappa0 = theta kappa1``.
    """
    d = model.d
    M = np.array(model.M)
    k1 = float(M.sum())
    zeta = d * float(np.prod(M)) / (2 * k1**d)
    theta = (1 - zeta**2) ** (1.0 / d)
    return {"kappa1": k1, "zeta": zeta, "theta": theta, "kappa0": theta * k1}


# ---------------------------------------------------------------- matrices


def build_matrix(A, weights=None, weight_m=None, tag="matrix") -> PositiveGenerator:
    """Wrap an explicit Metzler matrix on nodes ``0..n-1``."""
    A = np.atleast_2d(np.array(A, dtype=float))
    n = A.shape[0]
    if A.shape != (n, n):
        raise ModelError("matrix must be square")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    m = np.ones(n) if weight_m is None else np.asarray(weight_m, dtype=float)
    try:
        grid = WeightedGrid(np.arange(n, dtype=float), w, m)
    except GridError as exc:
        raise ModelError(str(exc)) from exc
    return PositiveGenerator.from_matrix(A, grid, tag)


# ---------------------------------------------------------------- presets


@dataclass
class Preset:
    name: str
    kind: str
    params: dict = field(default_factory=dict)
    size_key: str = "n"

    def model(self, n=None):
        p = dict(self.params)
        if n is not None:
            if self.kind == "mitosis":
                p["q"] = max(1, n // p.get("levels", 8))
            elif self.kind == "singular":
                p["n_axis"] = n
            elif self.kind != "matrix":
                p["n"] = n
        return make_model(self.kind, p)

    def build(self, n=None):
        return build(self.model(n))


def make_model(kind, params):
    cls = {
        "renewal": RenewalModel,
        "diffusion": DiffusionModel,
        "mitosis": MitosisModel,
        "mutation": MutationSelectionModel,
        "singular": SingularMSModel,
    }.get(kind)
    if kind == "matrix":
        return dict(params)
    if cls is None:
        raise ModelError(f"unknown model type {kind!r}")
    return cls(**params)


def build(model) -> PositiveGenerator:
    if isinstance(model, RenewalModel):
        return build_renewal(model)
    if isinstance(model, DiffusionModel):
        return build_diffusion(model)
    if isinstance(model, MitosisModel):
        return build_mitosis(model)
    if isinstance(model, MutationSelectionModel):
        return build_mutation_selection(model)
    if isinstance(model, SingularMSModel):
        return build_singular_ms(model)
    if isinstance(model, dict):
        return build_matrix(model["A"], model.get("weights"), model.get("weight_m"))
    raise ModelError(f"cannot build {type(model).__name__}")


PRESETS = {
    p.name: p
    for p in [
        Preset("renewal-constant", "renewal", {"r_O": "constant:2", "K": "constant:1", "y_max": 20.0, "n": 1000}),
        Preset("renewal-window", "renewal", {"r_O": "indicator:1:2", "K": "zero", "y_max": 4.0, "n": 2000}),
        Preset("diffusion-dirichlet", "diffusion", {"b": "zero", "c": "zero", "n": 200}),
        Preset("mitosis-mixing", "mitosis", {"a": "affine:1:1", "K": "step:3:2", "q": 32, "levels": 8}),
        Preset("mitosis-nonmixing", "mitosis", {"a": "linear", "K": "ramp:1:2", "q": 64, "levels": 8}),
        Preset("mutation-bump", "mutation", {"J": "bump:1:1", "W": "power:4", "R": 4.0, "n": 800}),
        Preset("singular-2d", "singular", {"d": 2, "M": (1.0, 1.0), "sigma": (1.0, 1.0), "eps": 0.25, "R": 3.0, "n_axis": 64}),
        Preset("chain-2", "matrix", {"A": [[-1.0, 2.0], [1.0, -2.0]]}),
        Preset("cycle-3", "matrix", {"A": [[-1.0, 0.0, 1.0], [1.0, -1.0, 0.0], [0.0, 1.0, -1.0]]}),
    ]
}
