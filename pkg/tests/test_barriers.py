import math

import numpy as np
import pytest
from scipy.optimize import minimize_scalar
from hypothesis import given
from hypothesis import strategies as st

from thinfrac.barriers import (H_xy, La_V, La_fd, PolarPoint, U_tau_xy, U_xy, V_field, certify_subsolution,
                               check_directional_bounds, check_monotone, eval_U, eval_U_tau, eval_V, gamma_V,
                               hodograph_estimate, hodograph_of_V, hodograph_of_field, random_admissible,
                               sample_B1, sample_B2_plus, signed_distance, trap_constant)
from thinfrac.core_types import (BarrierSpec, DegenerateError, DomainError, ExtentError, GridSpec, ScalarField,
                                 make_params)

s_values = st.sampled_from([0.2, 0.25, 0.5, 0.75, 0.9])
coord = st.floats(-2, 2)


@given(coord, coord, s_values)
def test_vectorized_matches_polar(tau, eta, s):
    p = PolarPoint.from_xy(tau, eta)
    # theta carries an absolute rounding error ~ulp(pi), amplified near the contact set theta = pi
    gap = math.pi - abs(p.theta)
    rel = 1e-12 + 2 * s * 4.5e-16 / gap if gap > 0 else 0.0
    floor = (p.rho * (2.3e-16) ** 2) ** s
    assert U_xy(tau, eta, s) == pytest.approx(eval_U(p, s), rel=rel, abs=max(floor, 1e-300))
    assert U_xy(tau, eta, s) == pytest.approx(H_xy(tau, eta) ** (2 * s), rel=1e-12, abs=1e-300)
    if p.rho > 1e-3 and abs(p.theta) < math.pi - 1e-3:
        assert U_tau_xy(tau, eta, s) == pytest.approx(eval_U_tau(p, s), rel=1e-9)


@given(coord, st.floats(0.01, 2), s_values, st.floats(0.1, 10))
def test_homogeneity_and_evenness(tau, eta, s, lam):
    assert U_xy(lam * tau, lam * eta, s) == pytest.approx(lam ** s * U_xy(tau, eta, s), rel=1e-10)
    assert U_xy(tau, -eta, s) == U_xy(tau, eta, s)


def test_zero_on_the_contact_set_and_no_cancellation():
    assert np.all(U_xy(np.array([-1.0, -0.1]), 0.0, 0.5) == 0)
    # tau << 0 with tiny eta: (rho + tau)/2 ~ eta^2 / (4|tau|)
    assert U_xy(-1e8, 1.0, 1.0) == pytest.approx(1 / (4e8), rel=1e-10)
    with pytest.raises(DegenerateError):
        eval_U_tau(PolarPoint(0.0, 0.0), 0.5)
    with pytest.raises(DomainError):
        PolarPoint(-1.0, 0.0)


@given(st.floats(-1, 1), st.floats(0.05, 1), s_values)
def test_U_tau_is_the_derivative(tau, eta, s):
    d = 1e-6
    fd = (U_xy(tau + d, eta, s) - U_xy(tau - d, eta, s)) / (2 * d)
    assert U_tau_xy(tau, eta, s) == pytest.approx(fd, rel=1e-5, abs=1e-7)


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_U_is_a_harmonic_off_the_thin_space(s):
    X = sample_B1(1, 500, 0, y_min=0.1)
    scale = np.minimum(np.hypot(X[:, 0], X[:, 1]), X[:, 1])
    la = La_fd(lambda Z: U_xy(Z[:, 0], Z[:, 1], s), X, scale, a=1 - 2 * s)
    assert np.max(np.abs(la)) < 1e-5


# --- signed distance and V -----------------------------------------------------

@given(st.floats(-0.1, 0.1), st.floats(-1, 1), st.floats(-1, 1))
def test_signed_distance_to_a_plane(xi, xp, xn):
    bs = BarrierSpec(np.zeros((1, 1)), np.array([xi]), 0.0, 0.0, 0.1)
    d = signed_distance(np.array([xp, xn]), bs)
    assert d == pytest.approx((xn - xi * xp) / math.hypot(1, xi), abs=1e-12)


@given(st.floats(-0.1, 0.1), st.floats(-1.3, 1.3), st.floats(-1.3, 1.3))
def test_signed_distance_to_a_parabola(m, xp, xn):
    bs = BarrierSpec(np.array([[m]]), np.zeros(1), 0.0, 0.0, 0.1)
    d = signed_distance(np.array([xp, xn]), bs)
    # the foot point is the nearest point of the graph
    ts = np.linspace(-4, 4, 8001)
    dist = lambda t: math.hypot(t - xp, 0.5 * m * t * t - xn)
    t0 = ts[np.argmin([dist(t) for t in ts])]
    brute = minimize_scalar(dist, bounds=(t0 - 1e-3, t0 + 1e-3), method="bounded",
                            options={"xatol": 1e-12}).fun
    assert abs(d) == pytest.approx(brute, abs=1e-6)
    assert np.sign(d) == np.sign(xn - 0.5 * m * xp ** 2) or abs(d) < 1e-12


def test_signed_distance_errors():
    bs = BarrierSpec.trivial(2)
    with pytest.raises(ExtentError):
        signed_distance(np.array([3.0, 0.0]), bs)
    with pytest.raises(DomainError):
        signed_distance(np.array([0.0, 0.0, 0.0]), bs)
    assert signed_distance(np.array([0.3]), BarrierSpec.trivial(1)) == 0.3


@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(0, 0.5), st.floats(-0.05, 0.05))
def test_trivial_barrier_is_a_translate_of_U(xp, xn, y, t):
    bs = BarrierSpec.trivial(2, t=t)
    assert eval_V(np.array([xp, xn, y]), bs, 0.5) == pytest.approx(U_xy(xn + t, y, 0.5), abs=1e-14)
    assert gamma_V(np.array([xp, xn, y]), bs, 0.5)[0] == 0.0


def test_V_field_dimension_check():
    with pytest.raises(DomainError):
        V_field(GridSpec.box(1, 0.25, 1.0), BarrierSpec.trivial(2), 0.5)
    f = V_field(GridSpec.box(1, 0.25, 1.0), BarrierSpec.trivial(1), 0.5)
    x, y = f.spec.mesh()
    assert np.allclose(f.values, U_xy(x, y, 0.5))


# --- subsolution certification ---------------------------------------------------

@given(st.sampled_from([0.025, 0.05, 0.1]), st.integers(0, 1000))
def test_random_admissible_respects_bounds(mu, seed):
    rng = np.random.default_rng(seed)
    bs = random_admissible(2, mu, rng, cond_min=0.5 * mu)
    assert np.linalg.norm(bs.M, 2) <= mu + 1e-15 and np.linalg.norm(bs.xi_prime) <= mu + 1e-15
    assert abs(bs.zeta) <= mu and bs.condition(0.5) >= 0.5 * mu


def test_random_admissible_unreachable():
    with pytest.raises(DomainError):
        random_admissible(2, 0.05, np.random.default_rng(0), cond_min=1.0, max_tries=50)


def test_samples_avoid_the_free_boundary():
    bs = BarrierSpec(np.array([[0.05]]), np.array([0.02]), 0.03, 0.0, 0.1)
    X = sample_B2_plus(2, 2000, 0, bs, delta_fb=0.02)
    assert X.shape == (2000, 3) and np.all(X[:, -1] >= 0.02) and np.all(np.linalg.norm(X, axis=1) < 2)
    tau = signed_distance(X[:, :-1], bs, check=False)
    assert np.all(np.hypot(tau, X[:, -1]) >= 0.02)


@pytest.mark.parametrize("sign", [1, -1])
def test_certification_branches(sign):
    mu = 0.05
    bs = BarrierSpec(np.zeros((1, 1)), np.zeros(1), sign * mu, 0.0, 0.1)     # cond = +-mu
    rep = certify_subsolution(bs, 0.5, 3000)
    assert rep.metrics["branch"] == ("sub" if sign > 0 else "super") and rep.passed
    assert len(rep.rows) == 3000


def test_certification_vacuous_and_errors():
    bs = BarrierSpec(np.zeros((1, 1)), np.zeros(1), 0.0, 0.0, 0.1)
    rep = certify_subsolution(bs, 0.5, 500, c0=1.0)
    assert rep.metrics["branch"] == "vacuous" and rep.passed
    with pytest.raises(DomainError):
        certify_subsolution(bs, 0.5, np.zeros((4, 2)))
    with pytest.raises(DomainError):
        certify_subsolution(bs, 0.5, np.array([[0.5, 0.5, 0.0]]))


def test_modulated_profile_laplacian_sign():
    # v_zeta = (1 + zeta rho / 4) U has L_a v_zeta of the sign of zeta
    X = sample_B2_plus(2, 1000, 1, delta_fb=0.05)
    for zeta in (0.05, -0.05):
        la = La_V(X, BarrierSpec(np.zeros((1, 1)), np.zeros(1), zeta, 0.0, 0.1), 0.5)
        assert np.all(np.sign(la) == np.sign(zeta))


# --- hodograph of V ----------------------------------------------------------------

@given(st.floats(-0.05, 0.05))
def test_hodograph_of_a_translate(t):
    X = sample_B1(2, 200, 3, y_min=1e-3)
    assert np.allclose(hodograph_of_V(X, BarrierSpec.trivial(2, t=t), 0.5), t, atol=1e-12)


def test_hodograph_bracket_error():
    X = sample_B1(2, 20, 3, y_min=1e-3)
    with pytest.raises(DomainError):
        hodograph_of_V(X, BarrierSpec.trivial(2, t=0.05), 0.5, bracket=0.01)


def test_hodograph_estimate_scales_quadratically():
    X = sample_B1(2, 500, 4, y_min=1e-3)
    est = []
    for mu in (0.025, 0.05, 0.1):
        bs = BarrierSpec(np.array([[0.5 * mu]]), np.array([0.3 * mu]), 0.8 * mu, 0.0, mu)
        est.append(hodograph_estimate(bs, 0.5, X))
        assert 0 < trap_constant(bs, 0.5, X) < 10
        assert check_monotone(bs, 0.5, X) > 0
    slope = np.polyfit(np.log([0.025, 0.05, 0.1]), np.log(est), 1)[0]
    assert slope == pytest.approx(2.0, abs=0.2)


def test_directional_bounds():
    bs = BarrierSpec(np.array([[0.03]]), np.array([0.02]), 0.04, 0.0, 0.1)
    X = sample_B1(2, 1000, 5, y_min=0.05)
    rep = check_directional_bounds(bs, 0.5, X)
    assert rep.passed and rep.metrics["c"] > 0 and rep.metrics["C"] < np.inf
    assert rep.metrics["dyadic_C"] >= 1


# --- hodograph of a field ------------------------------------------------------------

def test_hodograph_of_a_shifted_U():
    spec = GridSpec.box(1, 1 / 32, 1.0)
    x, y = spec.mesh()
    eps, c = 0.125, 0.5                # eps * c = 2h: the shift lands on nodes
    f = ScalarField(spec, U_xy(x + eps * c, y, 0.5))
    ut = hodograph_of_field(f, make_params(0.5), eps)
    v = ut.meta["valid"]
    assert v.any() and np.allclose(ut.values[v], c, atol=1e-9)
    assert np.all(ut.values[~v] == 0)
    with pytest.raises(DomainError):
        hodograph_of_field(f, make_params(0.5), 0.01)
    with pytest.raises(DomainError):
        hodograph_of_field(f, make_params(0.5), 0.0)
