"""Batch command line front-end.

Usage::

    krlab {build,eig,certify,simulate,oracle,sweep} --config run.ini [--out DIR] [--seed N] [--quiet]

Each command writes ``<prefix>report.txt`` (flat ``key = value`` lines; a
numeric field checked against a tolerance is followed by ``<key>.tol``) and
plot-ready CSV files into the output directory.

Exit codes: 0 ok, 2 solver failure, 3 geometry violation, 4 certificate
failure, 5 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, initial_state, parse_config
from .eigen import DENSE_LIMIT, SolverError, check_geometry, cosine, dense_spectrum, principal_triplet
from .ergodic import (
    PeriodError,
    conservation_check,
    cesaro_test,
    default_dt,
    detect_period,
    fit_decay_rate,
    lattice_support_check,
    simulate_rescaled,
)
from .harris import (
    CertificateError,
    DoblinError,
    HarrisError,
    LyapunovError,
    assemble_certificate,
    certify,
    certify_isolation,
    check_harris,
    check_lyapunov,
    doblin_witness,
)
from .models import (
    MitosisModel,
    ModelError,
    MutationSelectionModel,
    RenewalModel,
    SingularMSModel,
    Kappa0Error,
    RootError,
    build,
    euler_lotka_root,
    is_non_mixing,
    kappa0_mutation,
    kappa0_singular,
    mitosis_period,
    renewal_psi0,
)
from .operators import NotMetzlerError, semigroup_kernel
from .presets import coefficient

EXIT_OK, EXIT_SOLVER, EXIT_GEOMETRY, EXIT_CERT, EXIT_CONFIG = 0, 2, 3, 4, 5
GEOMETRY_DENSE_MAX = 512
CONSERVATION_TOL = 1e-8
PERIOD_RTOL = 0.02


class Report:
    """Ordered flat key-value report."""

    def __init__(self):
        self.items = []

    def add(self, key, value, tol=None):
        self.items.append((key, value))
        if tol is not None:
            self.items.append((f"{key}.tol", tol))

    def check(self, key, ok):
        self.add(f"check.{key}", "pass" if ok else "fail")
        return ok

    def write(self, path):
        with open(path, "w") as fh:
            for k, v in self.items:
                fh.write(f"{k} = {_fmt(v)}\n")

    def text(self):
        return "\n".join(f"{k} = {_fmt(v)}" for k, v in self.items)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (complex, np.complexfloating)):
        return f"{v.real!r}{v.imag:+.17g}j"
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


class Context:
    def __init__(self, cfg: RunConfig, out, seed, quiet):
        self.cfg = cfg
        self.out = out
        self.seed = seed
        self.quiet = quiet
        self.prefix = cfg.output.get("prefix", "")
        os.makedirs(out, exist_ok=True)

    def path(self, name):
        return os.path.join(self.out, self.prefix + name)


def _psi0(ctx, gen):
    if ctx.cfg.psi0 == "renewal":
        return renewal_psi0(gen, ctx.cfg.certify.get("T", 1.0))
    return None


def _triplet(ctx, gen):
    cfg = ctx.cfg
    return principal_triplet(gen, method=cfg.method, psi0=_psi0(ctx, gen), cfg=cfg.solver)


def _model_oracles(rep, model, trip, tag=""):
    """Closed-form or semi-analytic reference values for the model class."""
    if isinstance(model, RenewalModel):
        try:
            root = euler_lotka_root(model)
            rep.add(f"lam1_oracle{tag}", root)
            rep.add(f"lam1_oracle_source{tag}", "euler-lotka bisection")
            rep.add(f"lam1_minus_oracle{tag}", trip.lam - root)
        except RootError as exc:
            rep.add(f"lam1_oracle{tag}", f"unavailable ({exc})")
    elif isinstance(model, MutationSelectionModel):
        try:
            a, k0 = kappa0_mutation(model)
            rep.add(f"kappa0{tag}", k0)
            rep.add(f"kappa0_a{tag}", a)
            rep.add(f"kappa0_source{tag}", "(a - 1) beta, a = min over A_beta of int J(x-y)/W(y) dy")
            rep.check(f"lam1_ge_kappa0{tag}", trip.lam >= k0)
        except Kappa0Error as exc:
            rep.add(f"kappa0{tag}", f"unavailable ({exc})")
    elif isinstance(model, SingularMSModel):
        k = kappa0_singular(model)
        for key, v in k.items():
            rep.add(f"{key}{tag}", v)
        rep.add(f"kappa0_source{tag}", "theta kappa1, theta = (1 - zeta^2)^(1/d)")
        rep.check(f"lam1_ge_kappa0{tag}", trip.lam >= k["kappa0"])
    elif isinstance(model, MitosisModel):
        rep.add(f"non_mixing{tag}", is_non_mixing(model.a, model.x0, model.levels, model.q))
        rep.add(f"period_oracle{tag}", mitosis_period(model.a, 2 * model.x0))


# ------------------------------------------------------------------ commands


def cmd_build(ctx: Context) -> tuple[Report, int]:
    rep = Report()
    rows = []
    for n in ctx.cfg.resolutions():
        gen = build(ctx.cfg.model(n))
        nnz = gen.matrix.nnz if hasattr(gen.matrix, "nnz") else int(np.count_nonzero(gen.matrix))
        rows.append((gen.n, nnz, gen.metzler, gen.c_unif, gen.model_tag))
        rep.add(f"n[{gen.n}].nnz", nnz)
        rep.add(f"n[{gen.n}].metzler", gen.metzler)
        rep.add(f"n[{gen.n}].c_unif", gen.c_unif)
        for k, v in gen.meta.items():
            rep.add(f"n[{gen.n}].{k}", v)
    _write_csv(ctx.path("build.csv"), ["n", "nnz", "metzler", "c_unif", "model"], rows)
    g = gen.grid
    cols = [g.nodes] if g.dim == 1 else [g.nodes[:, k] for k in range(g.dim)]
    head = ["x"] if g.dim == 1 else [f"x{k}" for k in range(g.dim)]
    _write_csv(ctx.path("grid.csv"), head + ["w", "m"], zip(*cols, g.quad_weights, g.weight_m))
    return rep, EXIT_OK


def cmd_eig(ctx: Context) -> tuple[Report, int]:
    """Principal triplet at each configured resolution; exit 3 on geometry violations."""
    rep = Report()
    rows = []
    code = EXIT_OK
    rep.add("method", ctx.cfg.method)
    for n in ctx.cfg.resolutions():
        model = ctx.cfg.model(n)
        gen = build(model)
        t0 = time.perf_counter()
        trip = _triplet(ctx, gen)
        elapsed = time.perf_counter() - t0
        geo = check_geometry(gen, trip, dense_max=GEOMETRY_DENSE_MAX)
        tag = f"[{gen.n}]"
        rep.add(f"lam1{tag}", trip.lam, trip.tol)
        rep.add(f"primal_residual{tag}", trip.primal_residual, trip.tol)
        rep.add(f"dual_residual{tag}", trip.dual_residual, trip.tol)
        rep.add(f"lam1_dual{tag}", trip.lam_dual, 10 * trip.tol * (1 + abs(trip.lam)))
        rep.add(f"iterations{tag}", trip.iterations)
        rep.add(f"seconds{tag}", elapsed)
        rep.add(f"multiplicity{tag}", geo.multiplicity if geo.multiplicity else "unchecked")
        _model_oracles(rep, model, trip, tag)
        if not rep.check(f"geometry{tag}", geo.ok):
            for i, v in enumerate(geo.violations):
                rep.add(f"violation{tag}.{i}", v)
            code = EXIT_GEOMETRY
        rows.append((gen.n, trip.lam, trip.primal_residual, trip.dual_residual, trip.lam_dual, trip.iterations, trip.tol))
        np.savetxt(ctx.path(f"eigvec_{gen.n}.csv"), np.column_stack([trip.f1, trip.phi1]), delimiter=",",
                   header="f1,phi1", comments="", fmt="%.17g")
    _write_csv(ctx.path("eig.csv"), ["n", "lam1", "primal_residual", "dual_residual", "lam1_dual", "iterations", "tol"], rows)
    return rep, code


def _certificate_fields(rep, cert, prefix="cert"):
    for k in ("T", "gamma_L", "K", "A", "gamma_H", "alpha", "rate_per_time", "r_A"):
        rep.add(f"{prefix}.{k}", getattr(cert, k))


def _certify(ctx, gen, trip, rep):
    c = ctx.cfg.certify
    T = c.get("T", 1.0)
    gls = c.get("gamma_L")
    if c.get("doblin"):
        K = semigroup_kernel(gen, T)
        psi0 = np.ones(gen.n) if _psi0(ctx, gen) is None else _psi0(ctx, gen)
        w = doblin_witness(K, gen.grid, psi0, trip.phi1, trip.lam, T)
        rep.add("doblin.gamma", w.gamma)
        rep.add("doblin.R0", w.R0)
    if "A" in c:
        gL = gls[0] if gls else 0.5
        K = semigroup_kernel(gen, T)
        ly = check_lyapunov(np.exp(-trip.lam * T) * K, gen.grid, trip.phi1, gL)
        h = check_harris(K, gen.grid, trip.phi1, c["A"], trip.lam, T)
        cert = assemble_certificate(gL, ly.K, c["A"], h.gamma_H, T, h.g_A, trip.phi1, gen.grid)
    else:
        cert = certify(gen, trip, T, gamma_L=gls, n_A=c.get("n_A", 60), A_span=c.get("A_span", 1e4))
    return cert


def cmd_certify(ctx: Context) -> tuple[Report, int]:
    rep = Report()
    gen = build(ctx.cfg.model(ctx.cfg.resolutions()[0]))
    trip = _triplet(ctx, gen)
    rep.add("n", gen.n)
    rep.add("lam1", trip.lam, trip.tol)
    cert = _certify(ctx, gen, trip, rep)
    _certificate_fields(rep, cert)
    rep.check("alpha_lt_1", cert.alpha < 1)
    if cert.sweep:
        _write_csv(ctx.path("certificate_sweep.csv"), ["gamma_L", "K", "A", "gamma_H", "alpha"], cert.sweep)
    c = ctx.cfg.certify
    if c.get("isolation"):
        iso = certify_isolation(gen, trip, lam_probe=c.get("lam_probe"), gamma_L=c.get("gamma_L"),
                                n_A=c.get("n_A", 60), rate=cert.rate_per_time, A_span=c.get("A_span", 1e4))
        rep.add("isolation.lam_probe", iso.lam_probe)
        rep.add("isolation.alpha_res", iso.alpha_res)
        rep.add("isolation.eps", iso.eps)
        if gen.n <= GEOMETRY_DENSE_MAX:
            sp = dense_spectrum(gen)
            others = sp.eigs[np.abs(sp.eigs - trip.lam) > 1e-8 * (1 + abs(trip.lam))]
            dist = float(np.min(np.abs(others - trip.lam))) if others.size else np.inf
            rep.add("isolation.nearest_other_eigenvalue", dist)
            rep.check("isolation_confirmed_by_oracle", dist > iso.eps)
    return rep, EXIT_OK


def cmd_simulate(ctx: Context) -> tuple[Report, int]:
    cfg = ctx.cfg
    s = cfg.simulate
    rep = Report()
    model = cfg.model(cfg.resolutions()[0])
    gen = build(model)
    trip = _triplet(ctx, gen)
    f0 = initial_state(s.get("f0", "ones"), gen, trip, ctx.seed)
    period_guess = None
    if isinstance(model, MitosisModel):
        period_guess = mitosis_period(model.a, 2 * model.x0)
    T_end = s.get("T_end", 20.0)
    dt = s.get("dt", default_dt(period_guess))
    specs = s.get("observables", ("constant:1",))
    obs = np.vstack([coefficient(sp)(gen.grid.nodes) for sp in specs])
    traj = simulate_rescaled(gen, trip, f0, T_end, dt, observables=obs)
    traj.to_csv(ctx.path("trajectory.csv"))
    rep.add("lam1", trip.lam, trip.tol)
    rep.add("T_end", T_end)
    rep.add("dt", dt)
    drift = conservation_check(traj)
    rep.add("conservation_drift", drift, CONSERVATION_TOL)
    rep.check("conservation", drift <= CONSERVATION_TOL)
    fit = fit_decay_rate(traj)
    rep.add("rate", fit.rate)
    rep.add("rate.prefactor", fit.prefactor)
    rep.add("rate.r2", fit.r2)
    rep.add("rate.window", f"{fit.window[0]}:{fit.window[1]}")
    rep.add("rate.saturated", fit.saturated)
    for k, sp in enumerate(specs):
        try:
            pe = detect_period(traj, k, t_skip=s.get("t_skip"))
            rep.add(f"period[{k}]", pe.period)
            rep.add(f"period[{k}].uncertainty", pe.uncertainty)
            rep.add(f"period_zero_crossing[{k}]", pe.zero_crossing_period)
            if period_guess is not None and is_non_mixing(model.a, model.x0, model.levels, model.q):
                rel = abs(pe.period - period_guess) / period_guess
                rep.add(f"period_rel_error[{k}]", rel, PERIOD_RTOL)
                rep.check(f"period[{k}]", rel <= PERIOD_RTOL)
        except PeriodError as exc:
            rep.add(f"period[{k}]", f"none ({exc})")
    if period_guess is not None:
        rep.add("period_oracle", period_guess)
    for T in s.get("cesaro", ()):
        rep.add(f"cesaro_error[{T}]", cesaro_test(gen, trip, f0, T))
    if "lattice_j0" in s:
        lat = lattice_support_check(gen, s["lattice_j0"], min(T_end, 3.0), dt)
        rep.add("lattice_leak", lat.leak, 1e-10)
        rep.check("lattice_support", lat.ok)
    if "T" in cfg.certify and not fit.saturated:
        try:
            cert = _certify(ctx, gen, trip, rep)
            rep.add("cert.rate_per_time", cert.rate_per_time)
            rep.check("measured_rate_ge_certified", fit.rate >= cert.rate_per_time)
        except (CertificateError, HarrisError, LyapunovError, DoblinError) as exc:
            rep.add("cert.rate_per_time", f"none ({exc})")
    return rep, EXIT_OK


def cmd_oracle(ctx: Context) -> tuple[Report, int]:
    rep = Report()
    gen = build(ctx.cfg.model(ctx.cfg.resolutions()[0]))
    if gen.n > DENSE_LIMIT:
        raise ConfigError(f"dense oracle cap exceeded: n={gen.n} > {DENSE_LIMIT}")
    sp = dense_spectrum(gen)
    trip = _triplet(ctx, gen)
    dense = principal_triplet(gen, method="dense")
    tol = 1e-8 * (1 + abs(sp.lam1))
    rep.add("n", gen.n)
    rep.add("lam1_dense", sp.lam1)
    rep.add(f"lam1_{ctx.cfg.method}", trip.lam)
    rep.add("lam1_difference", abs(trip.lam - sp.lam1), tol)
    rep.check("lam1_agreement", abs(trip.lam - sp.lam1) <= tol)
    cf = cosine(trip.f1, dense.f1, gen.grid)
    rep.add("eigvec_cosine", cf, 1e-8)
    rep.check("eigvec_agreement", cf >= 1 - 1e-8)
    rep.add("lam2", sp.lam2)
    rep.add("gap", sp.gap)
    rep.add("multiplicity", sp.multiplicity)
    rep.check("simple", sp.multiplicity == 1)
    rep.add("boundary_set_size", len(sp.boundary_set))
    _write_csv(ctx.path("spectrum.csv"), ["re", "im"], ((e.real, e.imag) for e in sp.eigs))
    return rep, EXIT_OK


def _sweep_one(args):
    cfg, n, override, with_oracle, psi0_needed = args
    model = cfg.model(n, **override)
    gen = build(model)
    row = {"n": gen.n, **override}
    try:
        trip = principal_triplet(gen, method=cfg.method, cfg=cfg.solver)
    except SolverError as exc:
        row["error"] = str(exc)
        return row
    row.update(lam1=trip.lam, primal_residual=trip.primal_residual, dual_residual=trip.dual_residual, tol=trip.tol)
    if isinstance(model, SingularMSModel):
        row["kappa0"] = kappa0_singular(model)["kappa0"]
    elif isinstance(model, MutationSelectionModel):
        try:
            row["kappa0"] = kappa0_mutation(model)[1]
        except Kappa0Error:
            row["kappa0"] = np.nan
    elif isinstance(model, RenewalModel):
        row["lam1_oracle"] = euler_lotka_root(model)
    if with_oracle and gen.n <= GEOMETRY_DENSE_MAX:
        row["lam1_dense"] = dense_spectrum(gen).lam1
    return row


def cmd_sweep(ctx: Context) -> tuple[Report, int]:
    """Independent runs over the cartesian product of ``[sweep]`` lists, fanned out over processes."""
    cfg = ctx.cfg
    sw = cfg.sweep
    ns = list(sw.get("n", cfg.resolutions()))
    eps = list(sw.get("eps", [None]))
    if eps != [None] and cfg.model_type != "singular":
        raise ConfigError("[sweep] eps applies to singular models only")
    jobs = []
    for n, e in itertools.product(ns, eps):
        override = {} if e is None else {"eps": e}
        jobs.append((cfg, n, override, sw.get("oracle", False), False))
    workers = sw.get("workers", 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(j) for j in jobs]
    keys = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    _write_csv(ctx.path("sweep.csv"), keys, ([r.get(k, "") for k in keys] for r in rows))
    rep = Report()
    rep.add("runs", len(rows))
    failed = [r for r in rows if "error" in r]
    rep.add("failed_runs", len(failed))
    if "kappa0" in keys:
        passing = [r for r in rows if "lam1" in r and r["lam1"] >= r.get("kappa0", np.inf)]
        if "eps" in keys:
            best = max((r["eps"] for r in passing), default=None)
            rep.add("largest_passing_eps", best if best is not None else "none")
    return rep, EXIT_SOLVER if failed else EXIT_OK


COMMANDS = {
    "build": cmd_build,
    "eig": cmd_eig,
    "certify": cmd_certify,
    "simulate": cmd_simulate,
    "oracle": cmd_oracle,
    "sweep": cmd_sweep,
}


def make_parser():
    p = argparse.ArgumentParser(prog="krlab", description="Principal eigentriplets and ergodic certificates for positive semigroups.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="INI run configuration")
    p.add_argument("--out", default=None, help="output directory (overrides KRLAB_OUT_DIR and [output] dir)")
    p.add_argument("--seed", type=int, default=0, help="seed for random initial conditions")
    p.add_argument("--quiet", action="store_true", help="do not print the report")
    p.add_argument("--version", action="version", version=f"krlab {__version__}")
    return p


def run(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
        ctx = Context(cfg, cfg.out_dir(args.out), args.seed, args.quiet)
        rep, code = COMMANDS[args.command](ctx)
    except (ConfigError, ModelError, NotMetzlerError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (CertificateError, HarrisError, LyapunovError, DoblinError) as exc:
        print(f"certificate failure: {exc}", file=sys.stderr)
        return EXIT_CERT
    rep.add("command", args.command)
    rep.add("exit_code", code)
    rep.write(ctx.path("report.txt"))
    if not args.quiet:
        print(rep.text())
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
