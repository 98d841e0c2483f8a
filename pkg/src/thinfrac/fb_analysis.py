"""Free boundary extraction and the quantitative checks run on computed fields."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .barriers import U_xy
from .core_types import AnalysisReport, DegenerateError, DomainError, GridSpec, ProblemParams, ScalarField
from .energy import interpolate, rescale
from .regions import ball_mask

TAU0 = 0.25          # largest-scale relative flatness above which decay is not tested
MIN_SCALE_CELLS = 8  # radii below 8h are excluded
N_DIRECTIONS = 64


@dataclass(frozen=True)
class FreeBoundarySet:
    plus_points: np.ndarray
    minus_points: np.ndarray
    h: float = float("nan")

    def __post_init__(self):
        for name in ("plus_points", "minus_points"):
            v = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, v.reshape(-1, v.shape[-1] if v.ndim > 1 else 1) if v.size else
                               np.zeros((0, v.shape[-1] if v.ndim > 1 else 1)))

    @property
    def empty(self) -> bool:
        return len(self.plus_points) == 0 and len(self.minus_points) == 0

    def all_points(self) -> np.ndarray:
        return np.vstack([self.plus_points, self.minus_points])


def _crossings(trace, coords, h):
    """Boundary points of ``{trace > 0}`` along each thin axis.

    On a cell with ``u_i <= 0 < u_j`` the interpolant of ``u+`` is positive
    exactly on ``(x_i, x_j]``, so the point is the non-positive node ``x_i``.
    """
    nd = trace.ndim
    pts = []
    for ax in range(nd):
        lo = [slice(None)] * nd
        hi = [slice(None)] * nd
        lo[ax] = slice(0, -1)
        hi[ax] = slice(1, None)
        a, b = trace[tuple(lo)], trace[tuple(hi)]
        up = (a <= 0) & (b > 0)        # crossing at the low node
        dn = (a > 0) & (b <= 0)        # crossing at the high node
        for mask, shift in ((up, 0), (dn, 1)):
            idx = np.argwhere(mask)
            if idx.size:
                idx[:, ax] += shift
                pts.append(np.stack([coords[k][idx[:, k]] for k in range(nd)], axis=1))
    if not pts:
        return np.zeros((0, nd))
    return np.unique(np.round(np.vstack(pts) / h) * h, axis=0)


def extract_fb(f: ScalarField, tol_zero: float | None = None) -> FreeBoundarySet:
    """Points of ``F+`` and ``F-`` on the thin layer; ``|u| <= tol_zero`` counts as 0."""
    tol = 1e-12 * f.sup_norm() if tol_zero is None else float(tol_zero)
    if tol < 0:
        raise DomainError("tol_zero", tol_zero, "must be >= 0")
    spec = f.spec
    tr = np.where(np.abs(f.trace) <= tol, 0.0, f.trace)
    coords = [spec.axis_coords(i) for i in range(spec.dim_x)]
    return FreeBoundarySet(_crossings(tr, coords, spec.h), _crossings(-tr, coords, spec.h), spec.h)


def separation_gap(fb: FreeBoundarySet) -> float:
    if len(fb.plus_points) == 0 or len(fb.minus_points) == 0:
        return math.inf
    return float(cdist(fb.plus_points, fb.minus_points).min())


# --- growth -------------------------------------------------------------------------

def thin_sup(f: ScalarField, x0, r: float) -> float:
    """``sup`` of ``u+`` over the thin ball of radius ``r`` about ``x0``."""
    spec = f.spec
    m = ball_mask(spec, x0, r)[..., 0]
    return float(np.max(np.maximum(f.trace[m], 0.0))) if m.any() else 0.0


def growth_exponent(f: ScalarField, x0, radii):
    """Least-squares ``log sup u+ = log C + beta log r``; returns ``(beta, C, max residual)``."""
    radii = np.asarray(sorted(radii), dtype=float)
    if radii.size < 4:
        raise DomainError("radii", radii.tolist(), "need at least 4 dyadic levels")
    spec = f.spec
    for r in radii:
        if not spec.contains(np.r_[np.atleast_1d(x0) + r, 0.0]) or not spec.contains(
                np.r_[np.atleast_1d(x0) - r, 0.0]):
            from .core_types import ExtentError

            raise ExtentError(f"thin ball of radius {r} leaves the grid")
    sups = np.array([thin_sup(f, x0, r) for r in radii])
    if np.any(sups <= 0):
        raise DegenerateError(f"sup of u+ vanishes at r = {radii[sups <= 0].tolist()}")
    A = np.stack([np.ones_like(radii), np.log(radii)], axis=1)
    coef, *_ = np.linalg.lstsq(A, np.log(sups), rcond=None)
    resid = float(np.max(np.abs(A @ coef - np.log(sups))))
    return float(coef[1]), float(math.exp(coef[0])), resid


def nondegeneracy(f: ScalarField, p: ProblemParams, x0, radii) -> AnalysisReport:
    """Fitted ``c`` in ``sup u+ >= c r^s`` per radius, with the minimum as the constant."""
    rows = [{"r": r, "sup": thin_sup(f, x0, r), "c_r": thin_sup(f, x0, r) / r ** p.s} for r in radii]
    c = min(row["c_r"] for row in rows)
    rep = AnalysisReport("nondegeneracy", rows=rows)
    rep.metrics["c"] = c
    rep.verdict("bounded_below", c > 0, c)
    return rep


# --- (H3) ---------------------------------------------------------------------------

def h3_ratio_U(theta, s):
    """Closed form of ``U d_F^s / d_Z^{2s}`` for ``U`` at polar angle ``theta``."""
    theta = np.asarray(theta, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):      # the unused branch blows up at theta = 0
        return np.where(theta <= 0.5 * np.pi, np.cos(0.5 * theta) ** (2 * s),
                        (2 * np.sin(0.5 * theta)) ** (-2 * s))


def check_H3(f: ScalarField, p: ProblemParams, sample, c_min: float = 0.05,
             tol_zero: float | None = None) -> AnalysisReport:
    """Infimum over ``sample`` of ``u d(., F)^s / d(., {u = 0})^{2s}``."""
    spec = f.spec
    tol = 1e-12 * f.sup_norm() if tol_zero is None else tol_zero
    if np.min(f.values) < -tol:
        raise DomainError("f", float(np.min(f.values)), "one-phase check needs f >= 0")
    X = np.atleast_2d(np.asarray(sample, dtype=float))
    fb = extract_fb(f, tol)
    rep = AnalysisReport("H3")
    F = fb.plus_points
    if len(F) == 0:
        rep.metrics.update({"inf_ratio": math.inf, "points": len(X)})
        rep.verdict("H3", True, math.inf)
        rep.notes.append("no free boundary in range: vacuous")
        return rep
    Fpts = np.hstack([F, np.zeros((len(F), 1))])
    Z = np.argwhere(np.abs(np.asarray(f.values)) <= tol)
    Zpts = np.stack([spec.axis_coords(k)[Z[:, k]] for k in range(spec.ndim)], axis=1)
    Xa = X.copy()
    Xa[:, -1] = np.abs(Xa[:, -1])
    dF = cdist(Xa, Fpts).min(axis=1)
    dZ = cdist(Xa, Zpts).min(axis=1)
    u = interpolate(f, Xa)
    keep = dF > 0
    ratio = np.full(len(X), np.inf)
    ratio[keep] = u[keep] * dF[keep] ** p.s / np.maximum(dZ[keep], 1e-300) ** (2 * p.s)
    inf_ratio = float(np.min(ratio))
    for k in range(len(X)):
        rep.rows.append({"point": tuple(X[k].tolist()), "u": float(u[k]), "d_zero": float(dZ[k]),
                         "d_fb": float(dF[k]), "ratio": float(ratio[k])})
    rep.metrics.update({"inf_ratio": inf_ratio, "c_min": c_min, "points": len(X)})
    rep.verdict("H3", inf_ratio >= c_min, inf_ratio - c_min)
    return rep


# --- flatness -----------------------------------------------------------------------

def inverse_U(v, y, s):
    """``t`` with ``U(t, y) = v`` for ``v > 0`` (exact: ``t = q - y^2 / (4q)``, ``q = v^(1/s)``)."""
    q = np.power(np.maximum(v, 1e-300), 1.0 / s)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(q > 0, q - y ** 2 / (4.0 * np.where(q > 0, q, 1.0)), -np.inf)


def shift_bounds(values, z, y, s, tol: float = 0.0):
    """Per node, the shifts ``sigma`` with ``U(z + sigma, y)`` below / above the value.

    ``U(z + sigma, y) <= v`` iff ``sigma <= hi`` and ``U(z + sigma, y) >= v``
    iff ``sigma >= lo``.
    """
    v = np.asarray(values, dtype=float)
    pos = v > tol
    hi = np.where(pos, inverse_U(v, y, s) - z, -np.inf)
    lo = np.where(pos, hi, -np.inf)
    thin_zero = ~pos & (y == 0) & (v >= -tol)
    hi = np.where(thin_zero, -z, hi)       # U(t, 0) = 0 for t <= 0
    return lo, hi


def _flatness_along(f, p, mask, x0, nu, free_center):
    spec = f.spec
    X = spec.mesh()
    z = sum(nu[k] * (X[k] - x0[k]) for k in range(spec.dim_x))
    y = np.broadcast_to(X[-1], spec.shape)
    tol = 1e-12 * max(f.sup_norm(), 1.0)
    lo, hi = shift_bounds(np.asarray(f.values)[mask], z[mask], y[mask], p.s, tol)
    need_hi = -np.min(hi)              # eps >= -sigma_hi
    need_lo = np.max(lo)               # eps >= sigma_lo
    if free_center:
        shift = 0.5 * (np.max(lo) + np.min(hi))
        eps = 0.5 * (np.max(lo) - np.min(hi))
    else:
        shift = 0.0
        eps = max(need_hi, need_lo)
    return max(float(eps), 0.0), float(shift)


def directions(n: int, count: int = N_DIRECTIONS) -> np.ndarray:
    if n == 1:
        return np.array([[1.0], [-1.0]])
    ang = 2 * np.pi * np.arange(count) / count
    return np.stack([np.sin(ang), np.cos(ang)], axis=1)


def flatness(f: ScalarField, p: ProblemParams, x0, r: float, dirs=None, free_center: bool = False,
             refine_iter: int = 40):
    """Smallest ``eps`` with ``U(z - eps, y) <= f <= U(z + eps, y)`` on ``B_r(x0)``, ``z = (x - x0).nu``.

    Returns ``(eps, nu, shift)``; ``eps = inf`` when no shift ``<= 1`` traps ``f``
    (for example where ``f <= 0`` off the thin layer).  With ``free_center``
    the profile may also be translated along ``nu`` by ``shift``.
    """
    spec = f.spec
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if not (spec.contains(np.r_[x0 + r, r]) and spec.contains(np.r_[x0 - r, 0.0])):
        from .core_types import ExtentError

        raise ExtentError(f"flatness ball B_{r}({x0.tolist()}) leaves the grid")
    mask = ball_mask(spec, x0, r)
    refine = dirs is None and spec.dim_x == 2
    dirs = directions(spec.dim_x) if dirs is None else np.atleast_2d(dirs)
    best = (math.inf, dirs[0], 0.0)
    for nu in dirs:
        e, sh = _flatness_along(f, p, mask, x0, nu, free_center)
        if e < best[0]:
            best = (e, np.asarray(nu, float), sh)
    if refine and math.isfinite(best[0]):
        # golden-section on the arc around the best sampled direction
        a0 = math.atan2(best[1][0], best[1][1])
        step = 2 * np.pi / len(dirs)
        g = (math.sqrt(5) - 1) / 2

        def val(t):
            return _flatness_along(f, p, mask, x0, np.array([math.sin(t), math.cos(t)]), free_center)[0]

        lo_, hi_ = a0 - step, a0 + step
        c, d = hi_ - g * (hi_ - lo_), lo_ + g * (hi_ - lo_)
        fc, fd = val(c), val(d)
        for _ in range(refine_iter):
            if fc <= fd:
                hi_, d, fd = d, c, fc
                c = hi_ - g * (hi_ - lo_)
                fc = val(c)
            else:
                lo_, c, fc = c, d, fd
                d = lo_ + g * (hi_ - lo_)
                fd = val(d)
        t = 0.5 * (lo_ + hi_)
        nu = np.array([math.sin(t), math.cos(t)])
        e, sh = _flatness_along(f, p, mask, x0, nu, free_center)
        if e < best[0]:
            best = (e, nu, sh)
    eps, nu, sh = best
    if eps > 1.0:
        eps = math.inf
    return eps, nu, sh


def aligned_target(f: ScalarField, r: float) -> GridSpec:
    """Unit-ball grid whose nodes pull back onto source nodes (no interpolation)."""
    k = max(int(round(r / f.spec.h)), 1)
    return GridSpec.box(f.spec.dim_x, 1.0 / k, 1.0)


def flatness_decay(f: ScalarField, p: ProblemParams, x0, radii=None, eta: float = 0.5, r0: float = 0.5,
                   levels: int = 6, tau0: float = TAU0, free_center: bool = True) -> AnalysisReport:
    """Relative flatness ``eps(r) / r`` on the rescaled fields ``u_r`` at ``x0``.

    ``gamma_k = log(e_{k+1} / e_k) / log(eta)`` for consecutive usable
    scales; the fitted ``gamma`` is their minimum.  Pass iff at least 3
    usable scales and ``gamma > 0``.  Largest-scale flatness above ``tau0``
    gives the verdict "hypothesis not met" instead of a failure.
    """
    if not 0 < eta < 1:
        raise DomainError("eta", eta, "must lie in (0, 1)")
    radii = [r0 * eta ** k for k in range(levels)] if radii is None else list(radii)
    spec = f.spec
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    rep = AnalysisReport("flatness_decay")
    usable = [r for r in radii if r >= MIN_SCALE_CELLS * spec.h * (1 - 1e-9)]
    excluded = [r for r in radii if r not in usable]
    if excluded:
        rep.notes.append(f"excluded scales below {MIN_SCALE_CELLS}h: {excluded}")
    if len(usable) < 3:
        raise DomainError("radii", radii, "fewer than 3 usable scales")
    prev_nu = None
    for r in usable:
        ur = rescale(f, p, x0, r, aligned_target(f, r))
        e, nu, sh = flatness(ur, p, np.zeros(spec.dim_x), 1.0, free_center=free_center)
        drift = float(np.linalg.norm(nu - prev_nu)) if prev_nu is not None else float("nan")
        rep.rows.append({"r": r, "eps": e, "nu": tuple(nu.tolist()), "shift": sh, "drift": drift})
        prev_nu = nu
    e = np.array([row["eps"] for row in rep.rows])
    machine = 1e-10
    drifts = [row["drift"] for row in rep.rows[1:]]
    drift_ok = all(d2 <= d1 + 1e-12 for d1, d2 in zip(drifts, drifts[1:]))
    rep.metrics.update({"scales": len(usable), "eps_top": float(e[0]), "tau0": tau0, "eta": eta,
                        "drift_max": max(drifts) if drifts else 0.0})
    if not np.all(np.isfinite(e)) or e[0] > tau0:
        rep.metrics["gamma"] = float("nan")
        rep.metrics["status"] = "hypothesis not met"
        rep.notes.append("hypothesis not met: initial flatness above tau0")
        return rep
    if np.all(e <= machine):
        rep.metrics["gamma"] = math.inf
        rep.metrics["status"] = "vacuous"
        rep.verdict("gamma_positive", True, math.inf)
        rep.verdict("drift_decreasing", drift_ok, 0.0)
        return rep
    ee = np.maximum(e, machine)
    gam = np.log(ee[1:] / ee[:-1]) / math.log(eta)
    for row, g in zip(rep.rows[1:], gam):
        row["gamma_k"] = float(g)
    gamma = float(np.min(gam))
    rep.metrics["gamma"] = gamma
    rep.metrics["status"] = "tested"
    rep.verdict("gamma_positive", gamma > 0, gamma)
    rep.verdict("drift_decreasing", drift_ok, 0.0 if drift_ok else -1.0)
    return rep


def thick_sign(f: ScalarField, x0, r: float) -> float:
    """``min u`` off the thin layer on ``B_r(x0)`` (one-phase separation in the thick space)."""
    m = ball_mask(f.spec, x0, r)
    m[..., 0] = False
    return float(np.min(f.values[m])) if m.any() else math.inf
