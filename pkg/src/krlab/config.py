"""Run configuration: an INI file with typed, validated sections.

Example::

    [model]
    type = renewal
    r = constant:2
    K = constant:1
    y_max = 20

    [grid]
    n = 1000

Lists of numbers are comma separated; lists of presets are whitespace
separated (preset strings contain ``:`` and ``,``).
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field

import numpy as np

from .eigen import SolverConfig
from .models import PRESETS, ModelError, Preset, make_model
from .presets import PresetError, coefficient, kernel

OUT_ENV = "KRLAB_OUT_DIR"


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


def _bool(v):
    v = v.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _floats(v):
    return tuple(float(x) for x in v.split(",") if x.strip())


def _ints(v):
    return tuple(int(x) for x in v.split(",") if x.strip())


def _words(v):
    return tuple(v.split())


def _matrix(v):
    rows = [r for r in v.split(";") if r.strip()]
    return [[float(x) for x in r.split(",")] for r in rows]


_MODEL_KEYS = {
    "renewal": {"r": str, "r_O": str, "K": str, "y_max": float},
    "diffusion": {"b": str, "c": str, "x_lo": float, "x_hi": float},
    "mitosis": {"a": str, "K": str, "x0": float, "weight": str, "k_floor": float},
    "mutation": {"J": str, "W": str, "R": float, "A_set": _floats, "beta": float, "weight": str},
    "singular": {"d": int, "M": _floats, "sigma": _floats, "eps": float, "W": str, "R": float},
    "matrix": {"A": _matrix, "weights": _floats, "weight_m": _floats},
}

_RENAME = {"r": "r_O", "x_lo": "lo", "x_hi": "hi"}

_SCHEMA = {
    "grid": {"n": _ints, "q": int, "levels": int, "n_axis": int},
    "solver": {"method": str, "tol": float, "T_step": float, "max_iter": int, "shift_margin": float, "psi0": str},
    "certify": {
        "T": float,
        "gamma_L": _floats,
        "A": float,
        "n_A": int,
        "A_span": float,
        "isolation": _bool,
        "lam_probe": float,
        "doblin": _bool,
    },
    "simulate": {
        "f0": str,
        "T_end": float,
        "dt": float,
        "observables": _words,
        "cesaro": _floats,
        "lattice_j0": int,
        "t_skip": float,
        "split_tol": float,
    },
    "output": {"dir": str, "prefix": str},
    "sweep": {"n": _ints, "eps": _floats, "workers": int, "oracle": _bool},
}

_METHODS = ("resolvent", "power", "dense")


@dataclass
class RunConfig:
    model_type: str
    model_params: dict
    preset: str | None
    grid: dict = field(default_factory=dict)
    solver: SolverConfig = field(default_factory=SolverConfig)
    method: str = "resolvent"
    psi0: str = "ones"
    certify: dict = field(default_factory=dict)
    simulate: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    source: str = ""

    def resolutions(self):
        """Grid sizes requested in ``[grid] n`` (``[None]`` when absent)."""
        ns = self.grid.get("n")
        return list(ns) if ns else [None]

    def model(self, n=None, **override):
        """Model object at resolution ``n`` (``None`` keeps the configured size)."""
        params = dict(self.model_params)
        params.update(override)
        kind = self.model_type
        g = self.grid
        if kind == "mitosis":
            if "levels" in g:
                params["levels"] = g["levels"]
            if "q" in g:
                params["q"] = g["q"]
            if n is not None:
                params["q"] = max(1, n // params.get("levels", 8))
        elif kind == "singular":
            if "n_axis" in g:
                params["n_axis"] = g["n_axis"]
            if n is not None:
                params["n_axis"] = n
        elif kind != "matrix" and n is not None:
            params["n"] = n
        try:
            return make_model(kind, params)
        except (ModelError, PresetError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc

    def out_dir(self, cli_out=None):
        """``--out`` beats the ``KRLAB_OUT_DIR`` environment variable, which beats ``[output] dir``."""
        return cli_out or os.environ.get(OUT_ENV) or self.output.get("dir", ".")


def _typed(section, key, raw, conv):
    try:
        return conv(raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} ({exc})") from exc


def _check_presets(kind, params):
    try:
        for k in ("r_O", "K", "b", "c", "a", "W"):
            if k in params and isinstance(params[k], str):
                coefficient(params[k])
        if kind == "mutation" and "J" in params:
            kernel(params["J"])
    except PresetError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(path) -> RunConfig:
    """Read and validate a config file; unknown sections and keys are errors."""
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(interpolation=None, strict=True)
    cp.optionxform = str
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return parse_parser(cp, source=str(path))


def parse_string(text) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, strict=True)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return parse_parser(cp)


def parse_parser(cp, source="") -> RunConfig:
    unknown = set(cp.sections()) - set(_SCHEMA) - {"model"}
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    if not cp.has_section("model"):
        raise ConfigError("missing section [model]")
    m = dict(cp["model"])
    preset_name = m.pop("preset", None)
    kind = m.pop("type", None)
    params = {}
    if preset_name is not None:
        if preset_name not in PRESETS:
            raise ConfigError(f"unknown preset {preset_name!r}")
        p: Preset = PRESETS[preset_name]
        if kind is not None and kind != p.kind:
            raise ConfigError(f"type={kind!r} conflicts with preset {preset_name!r} of type {p.kind!r}")
        kind = p.kind
        params.update(p.params)
    if kind is None:
        raise ConfigError("[model] needs type or preset")
    if kind not in _MODEL_KEYS:
        raise ConfigError(f"unknown model type {kind!r}")
    for key, raw in m.items():
        if key not in _MODEL_KEYS[kind]:
            raise ConfigError(f"unknown key {key!r} in [model] for type {kind}")
        params[_RENAME.get(key, key)] = _typed("model", key, raw, _MODEL_KEYS[kind][key])
    if kind == "matrix" and "A" not in params:
        raise ConfigError("matrix model needs A")
    _check_presets(kind, params)

    sec = {}
    for name, schema in _SCHEMA.items():
        vals = {}
        if cp.has_section(name):
            for key, raw in cp[name].items():
                if key not in schema:
                    raise ConfigError(f"unknown key {key!r} in [{name}]")
                vals[key] = _typed(name, key, raw, schema[key])
        sec[name] = vals

    s = sec["solver"]
    method = s.pop("method", "resolvent")
    if method not in _METHODS:
        raise ConfigError(f"[solver] method must be one of {', '.join(_METHODS)}")
    psi0 = s.pop("psi0", "ones")
    if psi0 not in ("ones", "renewal"):
        raise ConfigError("[solver] psi0 must be 'ones' or 'renewal'")
    try:
        solver = SolverConfig(**s)
    except ValueError as exc:
        raise ConfigError(f"[solver] {exc}") from exc

    g = sec["grid"]
    if any(v < 1 for v in g.get("n", ())) or any(g.get(k, 1) < 1 for k in ("q", "levels", "n_axis")):
        raise ConfigError("[grid] sizes must be positive")
    if kind == "mitosis" and "q" not in g and "n" not in g and "q" not in params:
        raise ConfigError("geometric_ratio required: set [grid] q for a mitosis model")
    c = sec["certify"]
    if "T" in c and not c["T"] > 0:
        raise ConfigError("[certify] T must be positive")
    if any(not 0 <= v < 1 for v in c.get("gamma_L", ())):
        raise ConfigError("[certify] gamma_L values must lie in [0, 1)")
    sim = sec["simulate"]
    for k in ("T_end", "dt"):
        if k in sim and not sim[k] > 0:
            raise ConfigError(f"[simulate] {k} must be positive")
    try:
        for spec in sim.get("observables", ()):
            coefficient(spec)
    except PresetError as exc:
        raise ConfigError(str(exc)) from exc

    cfg = RunConfig(
        model_type=kind,
        model_params=params,
        preset=preset_name,
        grid=g,
        solver=solver,
        method=method,
        psi0=psi0,
        certify=c,
        simulate=sim,
        output=sec["output"],
        sweep=sec["sweep"],
        source=source,
    )
    cfg.model(cfg.resolutions()[0])  # fail early on invalid model parameters
    return cfg


def initial_state(spec, gen, trip, seed=None):
    """Initial condition from a preset string.

    ``f1`` (principal eigenvector), ``ones``, ``point:j`` (unit mass at node
    ``j``), ``random`` (uniform on [0, 1), seeded), ``octave`` (ones on the
    first dyadic octave) or any coefficient preset evaluated at the nodes.
    """
    grid = gen.grid
    if spec == "f1":
        return trip.f1.copy()
    if spec == "ones":
        return np.ones(grid.n)
    if spec == "random":
        return np.random.default_rng(seed).random(grid.n)
    if spec == "octave":
        q = grid.geometric_ratio
        if q is None:
            raise ConfigError("f0 = octave needs a dyadic grid")
        f = np.zeros(grid.n)
        f[:q] = 1.0
        return f
    if spec.startswith("point:"):
        try:
            j = int(spec.split(":")[1])
        except ValueError as exc:
            raise ConfigError(f"bad point preset {spec!r}") from exc
        if not 0 <= j < grid.n:
            raise ConfigError(f"point index {j} outside the grid")
        f = np.zeros(grid.n)
        f[j] = 1.0 / grid.quad_weights[j]
        return f
    try:
        nodes = grid.nodes
        return coefficient(spec)(nodes)
    except PresetError as exc:
        raise ConfigError(f"unknown initial condition {spec!r}") from exc
