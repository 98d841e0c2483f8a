import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given
from hypothesis import strategies as st

from thinfrac.barriers import U_xy
from thinfrac.core_types import DomainError, GridSpec, ScalarField, make_params
from thinfrac.regions import ball_mask, box_mask, full_mask, interior_mask
from thinfrac.weighted_operator import (HarmonicSolver, StencilWeights, apply_La, dirichlet_form, harnack_ratio,
                                        solve_dirichlet, solve_linearized, ssor_pcg, stiffness_matrix)

s_values = st.sampled_from([0.2, 0.35, 0.5, 0.65, 0.8])


def small_grid(n=1, h=0.125):
    return GridSpec.box(n, h, 1.0 if n == 1 else 0.5)


@given(s_values)
def test_stiffness_is_a_weighted_laplacian(s):
    spec = small_grid()
    w = StencilWeights.for_weight(spec, 1 - 2 * s)
    L = stiffness_matrix(w, full_mask(spec))
    assert abs(L - L.T).max() < 1e-15
    assert np.allclose(L @ np.ones(L.shape[0]), 0.0)
    lam_min = spla.eigsh(L.astype(float), k=1, which="SA", return_eigenvectors=False)[0]
    assert lam_min > -1e-10


def test_thin_conductance():
    spec = small_grid(h=0.25)
    a = 0.4
    w = StencilWeights.for_weight(spec, a)
    assert w.cond[0][0, 0] == pytest.approx((0.125) ** a / (2 * 1.4))
    assert w.cond[0][0, 2] == pytest.approx(0.5 ** a)
    assert w.cond[1][0, 1] == pytest.approx(0.375 ** a)
    assert np.array_equal(w.thin_flux, w.cond[1][:, 0])


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_energy_of_linear_function(s):
    # u = x on the box: exact value is 2X * 2 Y^(1+a) / (1+a); the quadrature is O(h)
    a = 1 - 2 * s
    spec = GridSpec(1, 1 / 64, (1.0, 1.0))
    x, _ = spec.mesh()
    w = StencilWeights.for_weight(spec, a)
    D = dirichlet_form(w, stiffness_matrix(w, full_mask(spec)), x)
    assert D == pytest.approx(4.0 / (1 + a), rel=0.05)


@given(s_values, st.integers(0, 2 ** 31 - 1))
def test_dirichlet_principle(s, seed):
    spec = small_grid()
    p = make_params(s)
    region = ball_mask(spec, None, 1.0)
    x, y = spec.mesh()
    g = ScalarField(spec, np.cos(2 * x) + y)
    u = solve_dirichlet(g, p, region, method="direct")
    w = StencilWeights.for_weight(spec, p.a)
    L = stiffness_matrix(w, region)
    inner = interior_mask(region)
    rng = np.random.default_rng(seed)
    v = np.asarray(u.values).copy()
    v[inner] += 1e-2 * rng.normal(size=inner.sum())
    assert dirichlet_form(w, L, u.values) <= dirichlet_form(w, L, v) + 1e-14


@given(s_values, st.floats(-3, 3))
def test_constants_are_reproduced(s, c):
    spec = small_grid()
    u = solve_dirichlet(ScalarField(spec, np.full(spec.shape, c)), make_params(s), full_mask(spec))
    assert np.allclose(u.values, c, atol=1e-8 * max(1, abs(c)))


@given(s_values, st.integers(0, 2 ** 31 - 1))
def test_maximum_principle(s, seed):
    spec = small_grid()
    rng = np.random.default_rng(seed)
    g = ScalarField(spec, rng.uniform(-1, 1, spec.shape))
    region = ball_mask(spec, None, 1.0)
    u = solve_dirichlet(g, make_params(s), region, method="direct")
    bd = region & ~interior_mask(region)
    lo, hi = g.values[bd].min(), g.values[bd].max()
    inner = interior_mask(region)
    assert u.values[inner].min() >= lo - 1e-12 and u.values[inner].max() <= hi + 1e-12


def test_cg_matches_direct_and_even_symmetry():
    spec = small_grid(h=1 / 32)
    p = make_params(0.3)
    x, y = spec.mesh()
    g = ScalarField(spec, x ** 2 + y)
    region = ball_mask(spec, None, 1.0)
    a = solve_dirichlet(g, p, region, method="direct")
    b = solve_dirichlet(g, p, region, tol=1e-12)
    assert np.max(np.abs(a.values - b.values)) < 1e-9
    assert np.allclose(a.values, a.values[::-1], atol=1e-12)
    assert b.meta["iterations"] > 0


def test_ssor_pcg_solves_spd():
    spec = small_grid()
    w = StencilWeights.for_weight(spec, 0.0)
    solver = HarmonicSolver(w, full_mask(spec))
    rhs = np.arange(solver.A.shape[0], dtype=float)
    x, it, res = ssor_pcg(solver.A, rhs, 1e-12)
    assert np.linalg.norm(solver.A @ x - rhs) <= 1e-9 * np.linalg.norm(rhs)


def test_solver_rejects_bad_input():
    spec = small_grid()
    w = StencilWeights.for_weight(spec, 0.0)
    with pytest.raises(DomainError):
        HarmonicSolver(w, full_mask(spec), method="lu")
    empty = np.zeros(spec.shape, dtype=bool)
    with pytest.raises(DomainError):
        HarmonicSolver(w, empty)


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_apply_La_second_order_on_U(s):
    p = make_params(s)
    errs = []
    for h in (1 / 32, 1 / 64, 1 / 128):
        spec = GridSpec.box(1, h, 1.0)
        x, y = spec.mesh()
        r = apply_La(ScalarField(spec, U_xy(x, y, s)), p)
        keep = box_mask(spec, [-0.5, 0.25], [0.5, 0.75]) & r.meta["evaluated"]
        errs.append(np.max(np.abs(r.values[keep])))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.8)


def test_apply_La_exact_on_linear_profile():
    spec = GridSpec.box(1, 1 / 16, 1.0)
    _, y = spec.mesh()
    r = apply_La(ScalarField(spec, np.broadcast_to(y, spec.shape)), make_params(0.5))
    assert np.max(np.abs(r.values)) < 1e-10
    assert not r.meta["evaluated"][:, 0].any()


def test_linearized_keeps_constants():
    spec = GridSpec.box(1, 1 / 16, 1.0)
    p = make_params(0.5)
    g = ScalarField(spec, np.ones(spec.shape))
    for bc in ("dirichlet", "neumann"):
        h = solve_linearized(g, p, ball_mask(spec, None, 1.0), tube_bc=bc)
        assert np.allclose(h.values[ball_mask(spec, None, 1.0) & ~h.meta["tube"]], 1.0, atol=1e-8)
    with pytest.raises(DomainError):
        solve_linearized(g, p, ball_mask(spec, None, 1.0), tube_bc="robin")


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_harnack_ratio_is_one_on_the_vertical_profile(s):
    spec = GridSpec.box(1, 1 / 32, 1.0)
    x, y = spec.mesh()
    f = ScalarField(spec, 3.0 * y ** (2 * s) + 0 * x)
    assert harnack_ratio(f, make_params(s), [0.0], 0.5) == pytest.approx(1.0, rel=1e-12)
