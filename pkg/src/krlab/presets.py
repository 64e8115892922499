"""Coefficient functions and mutation kernels addressed by short preset strings.

A preset string is ``name`` or ``name:arg1:arg2``. Examples::

    constant:2         c(x) = 2
    indicator:1:2      1 on [1, 2], 0 elsewhere
    affine:1:1         1 + x
    step:8:2           8 for x > 2, 0 otherwise
    ramp:1:2           (x - 2)_+
    power:4            |x|**4
    table:0,1;2,3      piecewise linear through (0, 1) and (2, 3)
"""
from __future__ import annotations

import numpy as np
from scipy.special import ndtr


class PresetError(ValueError):
    """Unknown or malformed preset string."""


class Coefficient:
    """Vectorized scalar function with the jump points needed by quadrature."""

    def __init__(self, fn, label, breakpoints=(), nonneg=True):
        self._fn = fn
        self.label = label
        self.breakpoints = tuple(breakpoints)
        self.nonneg = nonneg

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        shape = x.shape[:1] if x.ndim == 2 else x.shape
        return np.broadcast_to(np.asarray(self._fn(x), dtype=float), shape).copy()

    def __repr__(self):
        return f"Coefficient({self.label!r})"


def _args(spec, n_min, n_max):
    parts = spec.split(":")
    name, raw = parts[0].strip().lower(), parts[1:]
    if not n_min <= len(raw) <= n_max:
        raise PresetError(f"preset {spec!r} expects between {n_min} and {n_max} arguments")
    try:
        vals = [float(v) for v in raw]
    except ValueError as exc:
        raise PresetError(f"non-numeric argument in preset {spec!r}") from exc
    return name, vals


_ARITY = {
    "zero": (0, 0),
    "constant": (1, 1),
    "linear": (0, 1),
    "affine": (2, 2),
    "power": (1, 2),
    "indicator": (2, 3),
    "step": (1, 2),
    "ramp": (1, 3),
    "quadratic": (0, 1),
    "exp": (1, 1),
}


def coefficient(spec) -> Coefficient:
    """Parse a coefficient preset.

    ``linear[:s]`` is ``s x``. ``power:p[:k]`` is ``k |x|**p``.
    ``indicator:lo:hi[:h]`` is ``h 1_[lo,hi]``. ``step:k[:x0]`` is
    ``k 1_{x > x0}``. ``ramp:k[:x0[:p]]`` is ``k ((x - x0)_+)**p``.
    ``quadratic[:k]`` is ``k |x|^2`` (row-wise for 2D points).
    ``exp:eta`` is ``exp(eta x)``.
    """
    if isinstance(spec, Coefficient):
        return spec
    if callable(spec):
        return Coefficient(spec, getattr(spec, "__name__", "callable"), nonneg=False)
    if isinstance(spec, (int, float)):
        spec = f"constant:{spec}"
    name = spec.split(":")[0].strip().lower()
    if name == "table":
        return _table(spec)
    if name not in _ARITY:
        raise PresetError(f"unknown coefficient preset {spec!r}")
    name, a = _args(spec, *_ARITY[name])
    if name == "zero":
        return Coefficient(lambda x: 0.0, spec)
    if name == "constant":
        c = a[0]
        return Coefficient(lambda x: c, spec, nonneg=c >= 0)
    if name == "linear":
        s = a[0] if a else 1.0
        return Coefficient(lambda x: s * x, spec, nonneg=False)
    if name == "affine":
        c0, c1 = a
        return Coefficient(lambda x: c0 + c1 * x, spec, nonneg=False)
    if name == "power":
        p = a[0]
        k = a[1] if len(a) > 1 else 1.0
        return Coefficient(lambda x: k * np.abs(x) ** p, spec, nonneg=k >= 0)
    if name == "indicator":
        lo, hi = a[0], a[1]
        h = a[2] if len(a) > 2 else 1.0
        return Coefficient(lambda x: h * ((x >= lo) & (x <= hi)), spec, breakpoints=(lo, hi), nonneg=h >= 0)
    if name == "step":
        k = a[0]
        x0 = a[1] if len(a) > 1 else 2.0
        return Coefficient(lambda x: k * (x > x0), spec, breakpoints=(x0,), nonneg=k >= 0)
    if name == "ramp":
        k = a[0]
        x0 = a[1] if len(a) > 1 else 2.0
        p = a[2] if len(a) > 2 else 1.0
        return Coefficient(lambda x: k * np.maximum(x - x0, 0.0) ** p, spec, breakpoints=(x0,), nonneg=k >= 0)
    if name == "quadratic":
        k = a[0] if a else 1.0

        def quad(x):
            x = np.asarray(x, dtype=float)
            return k * (np.sum(x**2, axis=-1) if x.ndim == 2 else x**2)

        return Coefficient(quad, spec)
    eta = a[0]
    return Coefficient(lambda x: np.exp(eta * x), spec)


def _table(spec):
    """``table:x0,y0;x1,y1;...``: linear interpolation, constant beyond the ends."""
    body = spec.split(":", 1)[1] if ":" in spec else ""
    try:
        pts = np.array([[float(v) for v in pair.split(",")] for pair in body.split(";") if pair.strip()])
    except ValueError as exc:
        raise PresetError(f"malformed table {spec!r}") from exc
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
        raise PresetError(f"table {spec!r} needs at least two x,y pairs")
    xs, ys = pts[:, 0], pts[:, 1]
    if np.any(np.diff(xs) <= 0):
        raise PresetError(f"table {spec!r} needs increasing x values")
    return Coefficient(lambda x: np.interp(x, xs, ys), spec, nonneg=bool(np.all(ys >= 0)))


class Kernel:
    """Even mutation kernel on the real line.

    Subclasses provide ``density``. ``cell_mass(lo, hi)`` returns the exact
    mass on an interval when a closed form exists, otherwise None.
    """

    mass: float = 1.0
    radius: float = np.inf

    def density(self, z):
        raise NotImplementedError

    def cell_mass(self, lo, hi):
        return None

    def scaled(self, factor):
        """Same kernel with its mass multiplied by ``factor``."""
        raise NotImplementedError

    def lower_bound(self):
        """Return ``(J_star, r)`` with ``J >= J_star`` on ``[-r, r]``."""
        raise NotImplementedError


class BumpKernel(Kernel):
    """Smooth compactly supported bump ``exp(-1/(1 - (z/h)^2))``, normalized."""

    _UNIT = 0.44399381616807943  # integral of exp(-1/(1-z^2)) over [-1, 1]

    def __init__(self, half_width=1.0, mass=1.0):
        if half_width <= 0 or mass < 0:
            raise PresetError("bump needs half_width > 0 and mass >= 0")
        self.half_width = float(half_width)
        self.mass = float(mass)
        self.radius = self.half_width

    def density(self, z):
        u = np.asarray(z, dtype=float) / self.half_width
        out = np.zeros_like(u)
        inside = np.abs(u) < 1
        out[inside] = np.exp(-1.0 / (1.0 - u[inside] ** 2))
        return self.mass * out / (self._UNIT * self.half_width)

    def scaled(self, factor):
        return BumpKernel(self.half_width, self.mass * factor)

    def lower_bound(self):
        r = 0.5 * self.half_width
        return float(self.density(r)), r

    def __repr__(self):
        return f"BumpKernel(half_width={self.half_width}, mass={self.mass})"


class UniformKernel(Kernel):
    """Uniform density ``mass / (2h)`` on ``[-h, h]``."""

    def __init__(self, half_width=1.0, mass=1.0):
        if half_width <= 0 or mass < 0:
            raise PresetError("uniform kernel needs half_width > 0 and mass >= 0")
        self.half_width = float(half_width)
        self.mass = float(mass)
        self.radius = self.half_width

    def density(self, z):
        z = np.asarray(z, dtype=float)
        return self.mass / (2 * self.half_width) * (np.abs(z) <= self.half_width)

    def scaled(self, factor):
        return UniformKernel(self.half_width, self.mass * factor)

    def lower_bound(self):
        return self.mass / (2 * self.half_width), self.half_width

    def __repr__(self):
        return f"UniformKernel(half_width={self.half_width}, mass={self.mass})"


class GaussianKernel(Kernel):
    """Centered Gaussian with standard deviation ``sigma``, truncated at ``cutoff`` sigmas.

    Cell masses are exact integrals of the Gaussian, so the discrete kernel
    keeps its mass even when ``sigma`` is below the grid spacing.
    """

    def __init__(self, sigma=1.0, mass=1.0, cutoff=8.0):
        if sigma <= 0 or mass < 0:
            raise PresetError("gaussian needs sigma > 0 and mass >= 0")
        self.sigma = float(sigma)
        self.mass = float(mass)
        self.cutoff = float(cutoff)
        self.radius = self.cutoff * self.sigma

    def density(self, z):
        z = np.asarray(z, dtype=float) / self.sigma
        out = np.exp(-0.5 * z**2) / (np.sqrt(2 * np.pi) * self.sigma)
        return self.mass * out * (np.abs(z) <= self.cutoff)

    def cell_mass(self, lo, hi):
        c = self.cutoff
        a = np.clip(np.asarray(lo, dtype=float) / self.sigma, -c, c)
        b = np.clip(np.asarray(hi, dtype=float) / self.sigma, -c, c)
        return self.mass * np.maximum(ndtr(b) - ndtr(a), 0.0)

    def tail_deficit(self):
        """Mass removed by the truncation."""
        return self.mass * 2.0 * ndtr(-self.cutoff)

    def scaled(self, factor):
        return GaussianKernel(self.sigma, self.mass * factor, self.cutoff)

    def lower_bound(self):
        r = self.sigma
        return float(self.density(r)), r

    def __repr__(self):
        return f"GaussianKernel(sigma={self.sigma}, mass={self.mass})"


class ZeroKernel(Kernel):
    mass = 0.0
    radius = 0.0

    def density(self, z):
        return np.zeros_like(np.asarray(z, dtype=float))

    def scaled(self, factor):
        return self

    def lower_bound(self):
        return 0.0, 0.0


def kernel(spec) -> Kernel:
    """Parse ``bump[:h[:mass]]``, ``uniform[:h[:mass]]``, ``gaussian[:sigma[:mass]]`` or ``zero``."""
    if isinstance(spec, Kernel):
        return spec
    name = spec.split(":")[0].strip().lower()
    arity = {"bump": (0, 2), "uniform": (0, 2), "gaussian": (0, 2), "zero": (0, 0)}
    if name not in arity:
        raise PresetError(f"unknown kernel preset {spec!r}")
    name, a = _args(spec, *arity[name])
    h = a[0] if a else 1.0
    mass = a[1] if len(a) > 1 else 1.0
    if name == "bump":
        return BumpKernel(h, mass)
    if name == "uniform":
        return UniformKernel(h, mass)
    if name == "gaussian":
        return GaussianKernel(h, mass)
    return ZeroKernel()
