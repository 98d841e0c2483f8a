"""Closed-form profiles and comparison barriers.

``U = (rho^(1/2) cos(theta/2))^(2s)`` in the ``(tau, eta)`` plane, the radially
modulated ``v_zeta = (1 + zeta rho / 4) U`` and its bent version
``V_{M, xi', zeta}`` obtained by letting ``tau`` be the signed distance to the
quadric graph ``S = {x_n = xi'.x' + x'^T M x' / 2}``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core_types import (AnalysisReport, BarrierSpec, ConvergenceError, DegenerateError, DomainError,
                         ExtentError, GridSpec, ProblemParams, ScalarField)

NEWTON_MAXIT = 60
BISECT_ITERS = 64
FD_REL_STEP = 1e-2


@dataclass(frozen=True)
class PolarPoint:
    rho: float
    theta: float

    def __post_init__(self):
        if not self.rho >= 0:
            raise DomainError("rho", self.rho, "must be >= 0")
        if not -math.pi <= self.theta <= math.pi:
            raise DomainError("theta", self.theta, "must lie in [-pi, pi]")

    @classmethod
    def from_xy(cls, tau: float, eta: float) -> "PolarPoint":
        return cls(math.hypot(tau, eta), math.atan2(eta, tau))

    @property
    def tau(self) -> float:
        return self.rho * math.cos(self.theta)

    @property
    def eta(self) -> float:
        return self.rho * math.sin(self.theta)


def eval_U(p: PolarPoint, s: float) -> float:
    c = math.cos(p.theta / 2.0)
    # cos(pi/2) rounds to 6e-17, not 0: the contact set needs the exact test
    if c <= 0.0 or abs(p.theta) == math.pi:
        return 0.0
    return (math.sqrt(p.rho) * c) ** (2.0 * s)


def eval_U_tau(p: PolarPoint, s: float) -> float:
    """``dU/dtau = cos(theta) U_rho - sin(theta) U_theta / rho``."""
    if p.rho == 0.0:
        raise DegenerateError("U_tau is singular at rho = 0")
    u = eval_U(p, s)
    u_rho = s * u / p.rho
    u_theta = -s * math.tan(p.theta / 2.0) * u
    return math.cos(p.theta) * u_rho - math.sin(p.theta) * u_theta / p.rho


def _half_sum(tau, eta):
    """(rho + tau) / 2 without cancellation for tau < 0."""
    tau = np.asarray(tau, dtype=float)
    eta = np.asarray(eta, dtype=float)
    rho = np.hypot(tau, eta)
    with np.errstate(divide="ignore", invalid="ignore"):
        ae = np.abs(eta)
        neg = ae * (ae / (rho - tau))     # eta^2 would underflow for tiny eta
    out = np.where(tau >= 0, rho + tau, np.where(rho > 0, neg, 0.0))
    return 0.5 * out, rho


def U_xy(tau, eta, s: float):
    """Vectorized ``U(tau, eta) = ((rho + tau)/2)^s`` (even in eta)."""
    q, _ = _half_sum(tau, eta)
    return q ** s


def U_tau_xy(tau, eta, s: float):
    """Vectorized ``U_tau = s U / rho``; 0 on P and at the origin."""
    q, rho = _half_sum(tau, eta)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = s * q ** s / rho
    return np.where(rho > 0, out, 0.0)


def H_xy(tau, eta):
    """``H = rho^(1/2) cos(theta/2)``, so that ``U = H^(2s)``."""
    q, _ = _half_sum(tau, eta)
    return np.sqrt(q)


# --- signed distance to the quadric -----------------------------------------

def _check_ball(x, radius=2.0):
    if np.any(np.linalg.norm(x, axis=-1) > radius * (1 + 1e-12)):
        raise ExtentError(f"signed_distance needs |x| <= {radius}")


def signed_distance(x, bs: BarrierSpec, check: bool = True):
    """Signed distance from ``x`` (shape (..., n)) to ``S``, positive above the graph.

    Newton iteration on the foot point parameter with a bisection fallback.
    """
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 1
    x = np.atleast_2d(x)
    n = bs.n
    if x.shape[-1] != n:
        raise DomainError("x", x.shape, f"last axis must have length n={n}")
    if check:
        _check_ball(x)
    if n == 1:
        out = x[..., 0].copy()
        return float(out[0]) if scalar else out
    xp = x[..., 0]
    xn = x[..., 1]
    xi = float(bs.xi_prime[0])
    m = float(bs.M[0, 0])

    def F(p):
        g = xi * p + 0.5 * m * p * p
        dg = xi + m * p
        return (p - xp) - (xn - g) * dg, g, dg

    p = xp.copy()
    for _ in range(NEWTON_MAXIT):
        f, g, dg = F(p)
        J = 1.0 + dg * dg - (xn - g) * m
        step = f / J
        p = p - step
        if np.all(np.abs(step) <= 1e-15 * (1.0 + np.abs(p))):
            break
    f, g, dg = F(p)
    bad = ~(np.abs(f) <= 1e-13 * (1.0 + np.abs(p)))
    if np.any(bad):
        p = _bisect_foot(F, xp, bad, p)
        f, g, dg = F(p)
        if np.any(np.abs(f[bad]) > 1e-12):
            raise ConvergenceError("foot-point projection did not converge")
    # two polishing steps keep tau smooth at roundoff level
    for _ in range(2):
        f, g, dg = F(p)
        p = p - f / (1.0 + dg * dg - (xn - g) * m)
    g = xi * p + 0.5 * m * p * p
    dist = np.hypot(xp - p, xn - g)
    side = np.sign(xn - (xi * xp + 0.5 * m * xp * xp))
    out = np.where(side < 0, -dist, dist)
    return float(out[0]) if scalar else out


def _bisect_foot(F, xp, bad, p):
    lo = xp - 4.0
    hi = xp + 4.0
    p = p.copy()
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f, _, _ = F(mid)
        go_lo = f > 0
        hi = np.where(go_lo, mid, hi)
        lo = np.where(go_lo, lo, mid)
    p[bad] = (0.5 * (lo + hi))[bad]
    return p


# --- the barrier family ------------------------------------------------------

def v_zeta(tau, eta, zeta: float, s: float):
    rho = np.hypot(tau, eta)
    return (1.0 + 0.25 * zeta * rho) * U_xy(tau, eta, s)


def eval_V(X, bs: BarrierSpec, s: float, check: bool = True):
    """``V_{M, xi', zeta}(x + t e_n, y)`` at points ``X`` of shape (..., n+1)."""
    X = np.asarray(X, dtype=float)
    scalar = X.ndim == 1
    X = np.atleast_2d(X)
    x = X[..., :-1].copy()
    x[..., -1] += bs.t
    tau = signed_distance(x, bs, check=check)
    out = v_zeta(tau, X[..., -1], bs.zeta, s)
    return float(out[0]) if scalar else out


def V_field(spec: GridSpec, bs: BarrierSpec, s: float) -> ScalarField:
    if bs.n != spec.dim_x:
        raise DomainError("bs", bs.n, f"barrier dimension must equal dim_x={spec.dim_x}")
    X = np.stack(spec.mesh(), axis=-1)
    return ScalarField(spec, eval_V(X.reshape(-1, spec.ndim), bs, s, check=False).reshape(spec.shape),
                       {"s": s, "profile": "V"})


def gamma_V(X, bs: BarrierSpec, s: float):
    """``-xi'.x' - x'^T M x'/2 + zeta (x_n^2 + y^2)/(4s)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    xp = X[..., : bs.n - 1]
    g = bs.graph(xp) if bs.n > 1 else 0.0
    return -g + bs.zeta / (4.0 * s) * (X[..., bs.n - 1] ** 2 + X[..., -1] ** 2)


# --- finite differences --------------------------------------------------------

def _d2(fun, X, ax, h):
    e = np.zeros(X.shape[-1])
    e[ax] = 1.0
    hh = h[..., None] * e
    return (-fun(X + 2 * hh) + 16 * fun(X + hh) - 30 * fun(X) + 16 * fun(X - hh) - fun(X - 2 * hh)) / (12 * h * h)


def _d1(fun, X, ax, h):
    e = np.zeros(X.shape[-1])
    e[ax] = 1.0
    hh = h[..., None] * e
    return (-fun(X + 2 * hh) + 8 * fun(X + hh) - 8 * fun(X - hh) + fun(X - 2 * hh)) / (12 * h)


def _local_scale(X, bs: BarrierSpec):
    tau = signed_distance(X[..., :-1] + bs.t * np.eye(bs.n)[-1], bs, check=False)
    rho = np.hypot(tau, X[..., -1])
    return np.minimum(np.minimum(rho, np.abs(X[..., -1])), 1.0), rho


def La_fd(fun, X, scale, rel_step: float = FD_REL_STEP, a: float = 0.0):
    """Fourth-order central differences of ``Laplace f + (a/y) f_y``."""
    h = rel_step * scale
    out = np.zeros(X.shape[0])
    for ax in range(X.shape[-1]):
        out += _d2(fun, X, ax, h)
    out += a / X[:, -1] * _d1(fun, X, X.shape[-1] - 1, h)
    return out


def La_V(X, bs: BarrierSpec, s: float, rel_step: float = FD_REL_STEP):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    scale, _ = _local_scale(X, bs)
    return La_fd(lambda Z: eval_V(Z, bs, s, check=False), X, scale, rel_step, a=1.0 - 2.0 * s)


def sample_B2_plus(n: int, count: int, seed: int, bs: BarrierSpec | None = None, delta_fb: float = 1e-2,
                   radius: float = 2.0) -> np.ndarray:
    """Uniform points of ``B_radius cap {y >= delta_fb}`` at distance >= delta_fb from F(V)."""
    rng = np.random.default_rng(seed)
    bs = BarrierSpec.trivial(n) if bs is None else bs
    out = []
    need = count
    # leave room for the difference stencil inside B_2
    r_eff = radius * (1 - 1e-3)
    while need > 0:
        Z = rng.uniform(-r_eff, r_eff, size=(4 * need + 16, n + 1))
        Z[:, -1] = np.abs(Z[:, -1])
        Z = Z[(np.linalg.norm(Z, axis=1) < r_eff) & (Z[:, -1] >= delta_fb)]
        x = Z[:, :-1].copy()
        x[:, -1] += bs.t
        Z = Z[np.linalg.norm(x, axis=1) <= 2.0]
        x = Z[:, :-1].copy()
        x[:, -1] += bs.t
        tau = signed_distance(x, bs, check=False)
        Z = Z[np.hypot(tau, Z[:, -1]) >= delta_fb]
        out.append(Z[:need])
        need -= len(out[-1])
    return np.concatenate(out)


def certify_subsolution(bs: BarrierSpec, s: float, sample, delta_fb: float = 1e-2, c0: float = 0.0,
                        rel_step: float = FD_REL_STEP) -> AnalysisReport:
    """Sample ``L_a V`` on ``B_2^+(V)`` and check its sign against the curvature condition.

    ``cond = zeta/(1-a) - tr M``.  If ``cond >= c0 mu^2`` the sampled minimum
    of ``L_a V / |y|^(1-a)`` must be >= 0 (subsolution branch); if
    ``cond <= -c0 mu^2`` the maximum must be <= 0 (supersolution branch).
    Otherwise the check is vacuous.  ``sample`` is an (N, n+1) array or an
    integer count of random points (seed 0).
    """
    if isinstance(sample, (int, np.integer)):
        X = sample_B2_plus(bs.n, int(sample), 0, bs, delta_fb)
    else:
        X = np.atleast_2d(np.asarray(sample, dtype=float))
    if X.shape[-1] != bs.n + 1:
        raise DomainError("sample", X.shape, f"points need n+1={bs.n + 1} coordinates")
    scale, rho = _local_scale(X, bs)
    if np.any(rho < delta_fb) or np.any(X[:, -1] <= 0):
        raise DomainError("sample", "near F(V)", f"points must have y > 0 and distance >= {delta_fb} from F(V)")
    if np.any(2 * rel_step * scale >= X[:, -1]):
        raise DegenerateError("difference stencil crosses the thin space")
    la = La_fd(lambda Z: eval_V(Z, bs, s, check=False), X, scale, rel_step, a=1.0 - 2.0 * s)
    wy = X[:, -1] ** (2.0 * s)
    ratio = la / wy
    cond = bs.condition(s)
    mu2 = bs.mu ** 2
    rep = AnalysisReport("subsolution")
    rep.metrics.update({"condition": cond, "mu": bs.mu, "points": len(X),
                        "min_ratio": float(ratio.min()), "max_ratio": float(ratio.max()),
                        "c0_hat": float(ratio.min() / mu2) if cond > 0 else float(-ratio.max() / mu2)})
    if cond >= c0 * mu2:
        rep.metrics["branch"] = "sub"
        rep.verdict("sign", ratio.min() >= 0.0, float(ratio.min()))
    elif cond <= -c0 * mu2:
        rep.metrics["branch"] = "super"
        rep.verdict("sign", ratio.max() <= 0.0, float(-ratio.max()))
    else:
        rep.metrics["branch"] = "vacuous"
        rep.notes.append("condition inside (-c0 mu^2, c0 mu^2): no sign asserted")
    rep.rows = [{"point": tuple(map(float, x)), "LaV": float(v), "y_weight": float(w), "margin": float(r)}
                for x, v, w, r in zip(X, la, wy, ratio)]
    return rep


def empirical_c0(reports) -> float:
    """Smallest c such that every sampled barrier with ``|cond| >= c mu^2`` had the right sign."""
    worst = -math.inf
    for rep in reports:
        cond = rep.metrics["condition"]
        mu2 = rep.metrics["mu"] ** 2
        ok = rep.metrics["min_ratio"] >= 0 if cond > 0 else rep.metrics["max_ratio"] <= 0
        if not ok:
            worst = max(worst, abs(cond) / mu2)
    return worst


def random_admissible(n: int, mu: float, rng, cond_min: float | None = None, cond_max: float | None = None,
                      s: float = 0.5, max_tries: int = 10_000) -> BarrierSpec:
    """Uniformly drawn ``(M, xi', zeta)`` in ``V_mu`` with ``cond`` in ``[cond_min, cond_max]``."""
    for _ in range(max_tries):
        A = rng.uniform(-1, 1, size=(n - 1, n - 1))
        A = 0.5 * (A + A.T)
        nA = np.linalg.norm(A, 2) if A.size else 1.0
        M = A / max(nA, 1e-300) * mu * rng.uniform(0, 1) if A.size else A
        xi = rng.normal(size=n - 1)
        if xi.size:
            xi = xi / np.linalg.norm(xi) * mu * rng.uniform(0, 1)
        zeta = rng.uniform(-mu, mu)
        bs = BarrierSpec(M, xi, zeta, 0.0, mu)
        c = bs.condition(s)
        if (cond_min is None or c >= cond_min) and (cond_max is None or c <= cond_max):
            return bs
    raise DomainError("cond", (cond_min, cond_max), "no admissible barrier found")


# --- hodograph of the barrier -----------------------------------------------------

def _bisect_decreasing(phi, lo, hi, iters=BISECT_ITERS):
    """Root of a decreasing function on [lo, hi], vectorized."""
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        pos = phi(mid) > 0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
    return 0.5 * (lo + hi)


def hodograph_of_V(X, bs: BarrierSpec, s: float, bracket: float = 1.0):
    """``Vt`` with ``U(x, y) = V(x - Vt e_n, y)``, by bisection on the e_n shift."""
    X = np.asarray(X, dtype=float)
    scalar = X.ndim == 1
    X = np.atleast_2d(X)
    n = bs.n
    target = U_xy(X[:, n - 1], X[:, -1], s)
    en = np.zeros(n + 1)
    en[n - 1] = 1.0

    def phi(t):
        return eval_V(X - t[:, None] * en, bs, s, check=False) - target

    lo = np.full(len(X), -bracket)
    hi = np.full(len(X), bracket)
    if np.any(phi(lo) < 0) or np.any(phi(hi) > 0):
        raise DomainError("bracket", bracket, "no sign change of V(x - t e_n) - U within the bracket")
    t = _bisect_decreasing(phi, lo, hi)
    return float(t[0]) if scalar else t


def sample_B1(n: int, count: int, seed: int, radius: float = 1.0, y_min: float = 0.0) -> np.ndarray:
    """Points of ``B_radius cap {y > y_min}`` (off P)."""
    rng = np.random.default_rng(seed)
    out = []
    need = count
    while need > 0:
        Z = rng.uniform(-radius, radius, size=(4 * need + 16, n + 1))
        Z[:, -1] = np.abs(Z[:, -1])
        Z = Z[(np.linalg.norm(Z, axis=1) < radius) & (Z[:, -1] > y_min)]
        out.append(Z[:need])
        need -= len(out[-1])
    return np.concatenate(out)


def hodograph_estimate(bs: BarrierSpec, s: float, X) -> float:
    """``max |Vt - gamma_V|`` over the points ``X``."""
    return float(np.max(np.abs(hodograph_of_V(X, bs, s) - gamma_V(X, bs, s))))


def trap_constant(bs: BarrierSpec, s: float, X) -> float:
    """Smallest C with ``U(x + (gamma_V -+ C mu^2) e_n, y)`` trapping V at ``X``.

    Uses the shift sigma with ``V(X) = U(X + sigma e_n)``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = bs.n
    target = eval_V(X, bs, s, check=False)

    def phi(t):
        return target - U_xy(X[:, n - 1] + t, X[:, -1], s)

    sigma = _bisect_decreasing(phi, np.full(len(X), -1.0), np.full(len(X), 1.0))
    return float(np.max(np.abs(sigma - gamma_V(X, bs, s))) / bs.mu ** 2)


def check_monotone(bs: BarrierSpec, s: float, X, delta: float = 1e-3) -> float:
    """``min (V(x + delta e_n) - V(x))`` over ``X``: positive iff monotone there."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    en = np.zeros(bs.n + 1)
    en[bs.n - 1] = delta
    return float(np.min(eval_V(X + en, bs, s, check=False) - eval_V(X, bs, s, check=False)))


def check_directional_bounds(bs: BarrierSpec, s: float, sample, rel_step: float = FD_REL_STEP,
                             seed: int = 0) -> AnalysisReport:
    """Fit ``c, C`` in ``c U_tau(d/2, y) <= V_{x_n} <= C U_tau(d, y)`` with ``d = x_n - g(x')``.

    ``V_{x_n}`` is evaluated at the sample point itself by fourth-order
    central differences.  Also samples the dyadic ratio
    ``U_tau(t1, eta)/U_tau(t2, eta)`` over ``|t1 - t2| <= |(t2, eta)|/2``.
    """
    X = np.atleast_2d(np.asarray(sample, dtype=float))
    n = bs.n
    xp = X[:, : n - 1]
    g = bs.graph(xp) if n > 1 else np.zeros(len(X))
    d = X[:, n - 1] + bs.t - g
    keep = d > 0
    X, d = X[keep], d[keep]
    scale, _ = _local_scale(X, bs)
    Vn = _d1(lambda Z: eval_V(Z, bs, s, check=False), X, n - 1, rel_step * scale)
    lower = U_tau_xy(0.5 * d, X[:, -1], s)
    upper = U_tau_xy(d, X[:, -1], s)
    c = float(np.min(Vn / lower))
    C = float(np.max(Vn / upper))
    rng = np.random.default_rng(seed)
    t2 = rng.uniform(-1, 1, 4000)
    eta = rng.uniform(1e-3, 1, 4000)
    t1 = t2 + rng.uniform(-0.5, 0.5, 4000) * np.hypot(t2, eta)
    dyadic = float(np.max(U_tau_xy(t1, eta, s) / U_tau_xy(t2, eta, s)))
    rep = AnalysisReport("directional_bounds")
    rep.metrics.update({"c": c, "C": C, "dyadic_C": dyadic, "points": int(len(X))})
    rep.verdict("lower", c > 0, c)
    rep.verdict("upper", math.isfinite(C), C)
    return rep


# --- hodograph of a computed field -----------------------------------------------

def hodograph_of_field(f: ScalarField, p: ProblemParams, eps: float, tol: float = 1e-10,
                       clamp: bool = True) -> ScalarField:
    """``ut`` with ``U(x, y) = f(x - eps ut e_n, y)`` on nodes off ``P``.

    ``f`` is linearly interpolated along ``e_n``; nodes on ``P`` (where U = 0)
    or too close to the grid edge for the bracket are set to 0 and marked
    invalid in ``meta['valid']``.  Raises when ``f`` is not trapped by
    ``U(. -+ eps e_n)`` at some node.
    """
    if eps <= 0:
        raise DomainError("eps", eps, "must be > 0")
    spec = f.spec
    ax = spec.dim_x - 1
    X = spec.mesh()
    target = U_xy(X[ax], X[-1], p.s)
    coords = spec.axis_coords(ax)
    valid = (target > 0) & (X[ax] - eps >= coords[0]) & (X[ax] + eps <= coords[-1])
    vals = np.moveaxis(f.values, ax, -1)  # interpolate along the last axis
    tgt = np.moveaxis(target, ax, -1)
    xn = np.moveaxis(X[ax], ax, -1)
    ok = np.moveaxis(valid, ax, -1)
    rows = vals.reshape(-1, vals.shape[-1])
    flat_t = tgt.reshape(-1, vals.shape[-1])
    flat_x = xn.reshape(-1, vals.shape[-1])
    flat_ok = ok.reshape(-1, vals.shape[-1])
    r_idx, c_idx = np.nonzero(flat_ok)
    x0 = coords[0]

    def sample(t):
        pos = (flat_x[r_idx, c_idx] - eps * t - x0) / spec.h
        i = np.clip(np.floor(pos).astype(int), 0, len(coords) - 2)
        w = pos - i
        return (1 - w) * rows[r_idx, i] + w * rows[r_idx, i + 1]

    tv = flat_t[r_idx, c_idx]

    def phi(t):
        return sample(t) - tv

    one = np.ones_like(tv)
    lo_v, hi_v = phi(-one), phi(one)
    scale = max(1.0, f.sup_norm())
    if np.any(lo_v < -tol * scale) or np.any(hi_v > tol * scale):
        bad = int(np.sum((lo_v < -tol * scale) | (hi_v > tol * scale)))
        raise DomainError("f", f"{bad} nodes", f"not trapped between U(x -+ {eps} e_n, y)")
    t = _bisect_decreasing(phi, -one, one)
    if clamp:
        t = np.clip(t, -1.0, 1.0)
    out = np.zeros(rows.shape)
    out[r_idx, c_idx] = t
    out = np.moveaxis(out.reshape(vals.shape), -1, ax)
    return ScalarField(spec, out, {"valid": valid, "eps": eps, "s": p.s})
