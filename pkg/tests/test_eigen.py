import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from krlab.eigen import (
    DENSE_LIMIT,
    SolverConfig,
    SolverError,
    check_geometry,
    cosine,
    dense_spectrum,
    dense_spectrum_oracle,
    dual_eigenvector,
    normalize_triplet,
    power_iterate,
    principal_triplet,
    resolvent_iterate,
)
from krlab.models import (
    PRESETS,
    MutationSelectionModel,
    RenewalModel,
    build_matrix,
    build_mutation_selection,
    build_renewal,
)
from krlab.operators import WeightedGrid, pairing, step_semigroup


def unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v)


# ---------------------------------------------------------------- power iteration


def test_power_symmetric_chain():
    lam, f, res, _ = power_iterate(build_matrix([[-1.0, 1.0], [1.0, -1.0]]))
    assert lam == pytest.approx(0.0, abs=1e-10)
    assert np.allclose(unit(f), unit([1, 1]), atol=1e-10)
    assert res <= 1e-10


def test_power_two_by_two():
    lam, f, _, _ = power_iterate(build_matrix([[0.0, 2.0], [1.0, -1.0]]))
    assert lam == pytest.approx(1.0, abs=1e-10)
    assert np.allclose(unit(f), unit([2, 1]), atol=1e-9)


def test_power_renewal_constant():
    gen = build_renewal(RenewalModel("constant:2", "constant:1", 20.0, 400))
    lam, f, _, _ = power_iterate(gen)
    assert lam == pytest.approx(1.0, abs=1e-6)
    assert np.all(f >= 0)


def test_power_rejects_negative_start():
    with pytest.raises(ValueError):
        power_iterate(build_matrix([[-1.0]]), f0=np.array([-1.0]))


def test_power_max_iter():
    gen = build_renewal(RenewalModel("constant:2", "constant:1", 20.0, 200))
    with pytest.raises(SolverError):
        power_iterate(gen, max_iter=2)


def test_power_scale_invariant_start():
    gen = build_mutation_selection(MutationSelectionModel(n=100))
    a = power_iterate(gen, f0=np.ones(100))
    b = power_iterate(gen, f0=7.5 * np.ones(100))
    assert a[0] == pytest.approx(b[0], abs=1e-12)
    assert np.allclose(a[1], b[1], rtol=1e-12)


# ---------------------------------------------------------------- resolvent iteration


def test_resolvent_diagonal():
    lam, f, _, _ = resolvent_iterate(build_matrix([[-2.0, 0.0], [0.0, -1.0]]))
    assert lam == pytest.approx(-1.0, abs=1e-12)
    assert np.allclose(unit(f), [0.0, 1.0], atol=1e-10)


def test_resolvent_two_by_two():
    lam, _, _, _ = resolvent_iterate(build_matrix([[0.0, 2.0], [1.0, -1.0]]))
    assert lam == pytest.approx(1.0, abs=1e-10)


def test_resolvent_agrees_with_power_on_mutation():
    gen = build_mutation_selection(MutationSelectionModel(n=200))
    tol = 1e-10
    lp = power_iterate(gen, tol=tol)[0]
    lr = resolvent_iterate(gen, tol=tol)[0]
    assert abs(lp - lr) <= 10 * tol


# ---------------------------------------------------------------- dual


def test_dual_symmetric_equals_primal():
    A = np.array([[-3.0, 1.0, 0.5], [1.0, -2.0, 1.0], [0.5, 1.0, -1.0]])
    trip = principal_triplet(build_matrix(A))
    assert np.allclose(unit(trip.phi1), unit(trip.f1), atol=1e-9)


def test_dual_conservative_chain_is_constant():
    A = np.array([[-1.0, 0.5, 0.2], [0.6, -0.5, 0.3], [0.4, 0.0, -0.5]])
    gen = build_matrix(A)
    phi, mu, _ = dual_eigenvector(gen, 0.0)
    assert mu == pytest.approx(0.0, abs=1e-10)
    assert np.allclose(phi / phi.max(), 1.0, atol=1e-9)


def test_dual_renewal_matches_dense_left_vector():
    gen = build_renewal(RenewalModel("constant:2", "constant:1", 20.0, 300))
    trip = principal_triplet(gen)
    vals, vecs = np.linalg.eig(gen.dense().T)
    k = np.argmax(vals.real)
    left = np.abs(np.real(vecs[:, k]))
    # adjoint in the weighted pairing equals the transpose on a uniform grid
    assert cosine(trip.phi1, left, gen.grid) >= 1 - 1e-8


# ---------------------------------------------------------------- normalization


def test_normalize_example():
    g = WeightedGrid([0.0, 1.0], [1.0, 1.0], [1.0, 1.0])
    t = normalize_triplet(0.0, np.array([2.0, 2.0]), np.array([3.0, 3.0]), g)
    assert np.allclose(t.phi1, [1.0, 1.0])
    assert np.allclose(t.f1, [0.5, 0.5])


def test_normalize_zero_pairing():
    g = WeightedGrid([0.0, 1.0], [1.0, 1.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        normalize_triplet(0.0, np.array([1.0, 0.0]), np.array([0.0, 1.0]), g)


def test_normalize_idempotent():
    gen = build_mutation_selection(MutationSelectionModel(n=120))
    t = principal_triplet(gen)
    again = normalize_triplet(t.lam, t.f1, t.phi1, gen.grid, gen)
    assert np.array_equal(again.phi1, t.phi1)
    assert np.allclose(again.f1, t.f1, rtol=1e-15)
    assert pairing(t.f1, t.phi1, gen.grid) == pytest.approx(1.0, abs=1e-14)
    assert t.phi1.max() == 1.0


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(T_step=0.0)
    with pytest.raises(ValueError):
        SolverConfig(tol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(shift_margin=-1.0)


def test_unknown_method():
    with pytest.raises(ValueError):
        principal_triplet(build_matrix([[-1.0]]), method="lanczos")


# ---------------------------------------------------------------- dense oracle


def test_dense_symmetric_chain():
    rep = dense_spectrum_oracle(build_matrix([[-1.0, 1.0], [1.0, -1.0]]))
    assert np.allclose(np.sort(rep.eigs.real), [-2.0, 0.0], atol=1e-14)
    assert rep.gap == pytest.approx(2.0)
    assert rep.simple


def test_dense_cycle():
    rep = dense_spectrum(PRESETS["cycle-3"].build())
    ref = [0.0, -1.5 + 0.5j * np.sqrt(3), -1.5 - 0.5j * np.sqrt(3)]
    assert np.allclose(np.sort_complex(rep.eigs), np.sort_complex(ref), atol=1e-12)
    assert rep.boundary_set.size == 1 and abs(rep.boundary_set[0]) < 1e-12
    assert abs(rep.lam2.imag) == pytest.approx(np.sqrt(3) / 2, abs=1e-12)


def test_dense_cap():
    gen = build_matrix(-np.eye(5))
    with pytest.raises(ValueError):
        dense_spectrum(gen, cap=4)
    assert DENSE_LIMIT == 2048


@pytest.mark.slow
def test_dense_nonmixing_mitosis_boundary_pairs():
    target = 2 * np.pi / np.log(2)
    dist = []
    for n in (256, 512):
        rep = dense_spectrum(PRESETS["mitosis-nonmixing"].build(n), tol_bnd=1.0)
        pairs = rep.boundary_set[rep.boundary_set.imag > 1]
        assert pairs.size >= 1
        k = np.argmin(np.abs(pairs.imag - target))
        assert abs(pairs[k].imag - target) / target < 0.03
        dist.append(rep.lam1 - pairs[k].real)
    assert dist[1] < dist[0]


# ---------------------------------------------------------------- geometry


def test_geometry_symmetric_chain_passes():
    gen = build_matrix([[-1.0, 1.0], [1.0, -1.0]])
    rep = check_geometry(gen, principal_triplet(gen))
    assert rep.ok and rep.multiplicity == 1


def test_geometry_reducible_reported():
    gen = build_matrix(np.diag([-1.0, -1.0]))
    trip = principal_triplet(gen, method="dense")
    rep = check_geometry(gen, trip)
    assert not rep.ok
    assert rep.multiplicity == 2


def test_geometry_mutation_passes():
    gen = build_mutation_selection(MutationSelectionModel(n=400))
    rep = check_geometry(gen, principal_triplet(gen))
    assert rep.ok, rep.violations


# ---------------------------------------------------------------- properties


def _irreducible(rng, n):
    A = rng.random((n, n)) + 0.05
    np.fill_diagonal(A, -rng.random(n) * n)
    return A


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2**31 - 1))
def test_oracle_equivalence_random(n, seed):
    rng = np.random.default_rng(seed)
    gen = build_matrix(_irreducible(rng, n), weights=rng.random(n) + 0.5)
    lam, f, _, _ = power_iterate(gen)
    rep = dense_spectrum(gen)
    assert abs(lam - rep.lam1) <= 1e-8 * (1 + abs(rep.lam1))
    ref = principal_triplet(gen, method="dense")
    assert cosine(f, ref.f1, gen.grid) >= 1 - 1e-8


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 10), st.integers(0, 2**31 - 1), st.floats(-5.0, 5.0))
def test_shift_equivariance(n, seed, c):
    rng = np.random.default_rng(seed)
    A = _irreducible(rng, n)
    a = principal_triplet(build_matrix(A))
    b = principal_triplet(build_matrix(A + c * np.eye(n)))
    assert b.lam - a.lam == pytest.approx(c, abs=1e-9 * (1 + abs(a.lam) + abs(c)))
    assert np.allclose(a.f1, b.f1, rtol=1e-7, atol=1e-10)
    assert np.allclose(a.phi1, b.phi1, rtol=1e-7, atol=1e-10)


def test_conservation_at_fixed_point():
    gen = build_mutation_selection(MutationSelectionModel(n=150))
    t = principal_triplet(gen)
    T = 2.0
    lhs = pairing(step_semigroup(gen, t.f1, T), t.phi1, gen.grid)
    assert lhs == pytest.approx(np.exp(t.lam * T), rel=1e-9)


@pytest.mark.parametrize("name", ["renewal-constant", "mutation-bump", "diffusion-dirichlet", "mitosis-mixing"])
def test_power_matches_dense_presets(name):
    p = PRESETS[name]
    n = 128 if p.kind == "mitosis" else 150
    gen = p.build(n)
    lam, f, _, _ = power_iterate(gen)
    ref = principal_triplet(gen, method="dense")
    assert abs(lam - ref.lam) <= 1e-8 * (1 + abs(ref.lam))
    assert cosine(f, ref.f1, gen.grid) >= 1 - 1e-8


def test_triplet_residuals_within_tolerance():
    gen = build_mutation_selection(MutationSelectionModel(n=200))
    t = principal_triplet(gen, tol=1e-10)
    assert t.primal_residual <= t.tol
    assert t.dual_residual <= 1e-8
    assert np.all(t.f1 > 0) and np.all(t.phi1 > 0)
