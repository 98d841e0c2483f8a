"""Discrete ``J`` and ``J~``, the natural rescaling, and almost-minimality checks.

``J(u, B) = int_B |y|^a |grad u|^2 + lambda+ |{u(.,0) > 0}| + lambda- |{u(.,0) < 0}|``
with the Dirichlet part over the full (reflected) ball, evaluated with the
same edge conductances as :mod:`weighted_operator`, so that the discrete
a-harmonic replacement is the exact minimizer of the quadratic part.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates

from .core_types import (AnalysisReport, BarrierSpec, DomainError, ExtentError, GridSpec, ProblemParams,
                         ScalarField)
from .regions import ball_mask, interior_mask
from .weighted_operator import HarmonicSolver, StencilWeights, dirichlet_form, stiffness_matrix


@dataclass(frozen=True)
class EnergyBreakdown:
    dirichlet: float
    phase_plus: float
    phase_minus: float
    tilt: float = 0.0

    @property
    def total(self) -> float:
        return self.dirichlet + self.phase_plus + self.phase_minus + self.tilt


def _cell_fraction(u0, u1):
    """Fraction of [0, 1] where the linear interpolant of (u0, u1) is > 0."""
    both = (u0 > 0) & (u1 > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        f01 = np.where((u0 > 0) & (u1 <= 0), u0 / (u0 - u1), 0.0)
        f10 = np.where((u1 > 0) & (u0 <= 0), u1 / (u1 - u0), 0.0)
    return np.where(both, 1.0, f01 + f10)


def _triangle_fraction(a, b, c):
    """Fraction of a triangle where the linear interpolant of its vertex values is > 0."""
    out = np.where((a > 0) & (b > 0) & (c > 0), 1.0, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        for o, p, q in ((a, b, c), (b, c, a), (c, a, b)):
            t = (o / (o - p)) * (o / (o - q))
            out += np.where((o > 0) & (p <= 0) & (q <= 0), t, 0.0)
            out += np.where((o <= 0) & (p > 0) & (q > 0), 1.0 - t, 0.0)
    return out


def positive_measure(trace: np.ndarray, thin_region: np.ndarray, h: float) -> float:
    """Measure of ``{u(., 0) > 0}`` over the thin region, sub-grid at sign changes.

    ``n = 1``: the linear interpolant between neighbouring region nodes is
    integrated exactly.  ``n = 2``: over cells with all four corners in the
    region, the piecewise-linear interpolant on each diagonal split is
    integrated exactly and the two splits are averaged.
    """
    trace = np.asarray(trace, dtype=float)
    thin_region = np.asarray(thin_region, dtype=bool)
    if trace.ndim == 1:
        both = thin_region[:-1] & thin_region[1:]
        return float(np.sum(_cell_fraction(trace[:-1], trace[1:])[both])) * h
    u00, u10, u01, u11 = trace[:-1, :-1], trace[1:, :-1], trace[:-1, 1:], trace[1:, 1:]
    cell = thin_region[:-1, :-1] & thin_region[1:, :-1] & thin_region[:-1, 1:] & thin_region[1:, 1:]
    frac = 0.25 * (_triangle_fraction(u00, u10, u11) + _triangle_fraction(u00, u11, u01)
                   + _triangle_fraction(u00, u10, u01) + _triangle_fraction(u10, u11, u01))
    return float(np.sum(frac[cell])) * h * h


def phase_measures(trace, thin_region, h):
    return positive_measure(trace, thin_region, h), positive_measure(-np.asarray(trace), thin_region, h)


def energy(f: ScalarField, p: ProblemParams, region: np.ndarray | None = None,
           tilt_mu: float | None = None) -> EnergyBreakdown:
    """Discrete ``J`` (or ``J~`` when ``tilt_mu`` is given) of ``f`` on ``region``."""
    spec = f.spec
    region = np.ones(spec.shape, dtype=bool) if region is None else np.asarray(region, dtype=bool)
    if tilt_mu is not None and tilt_mu < 0:
        raise DomainError("tilt_mu", tilt_mu, "must be >= 0")
    w = StencilWeights.for_weight(spec, p.a)
    L = stiffness_matrix(w, region)
    dirichlet = dirichlet_form(w, L, f.values)
    plus, minus = phase_measures(f.trace, region[..., 0], spec.h)
    tilt = 0.0
    if tilt_mu is not None:
        y = np.broadcast_to(spec.coords()[-1], spec.shape)
        # both halves of the ball: factor 2 on the stored half
        tilt = float(2.0 * 2.0 * tilt_mu ** 2 * np.sum((f.values * y)[region]) * spec.h ** spec.ndim)
    return EnergyBreakdown(max(dirichlet, 0.0), p.lambda_plus * plus, p.lambda_minus * minus, tilt)


# --- interpolation and rescaling ------------------------------------------------

def interpolate(f: ScalarField, points: np.ndarray, order: int = 1) -> np.ndarray:
    """Multilinear interpolation of ``f`` at physical points (y read as |y|)."""
    spec = f.spec
    P = np.atleast_2d(np.asarray(points, dtype=float)).copy()
    P[:, -1] = np.abs(P[:, -1])
    idx = np.empty_like(P.T)
    for ax in range(spec.ndim):
        c = spec.axis_coords(ax)
        k = (P[:, ax] - c[0]) / spec.h
        if np.any(k < -1e-9) or np.any(k > c.size - 1 + 1e-9):
            raise ExtentError("interpolation point outside the source grid")
        idx[ax] = np.clip(k, 0, c.size - 1)
    return map_coordinates(np.asarray(f.values), idx, order=order, mode="nearest")


def rescale(f: ScalarField, p: ProblemParams, x0, r: float, target: GridSpec) -> ScalarField:
    """``u_r(x, y) = u(r x + x0, r y) / r^s`` sampled on ``target``."""
    if r <= 0:
        raise DomainError("r", r, "must be > 0")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.size != f.spec.dim_x or target.dim_x != f.spec.dim_x:
        raise DomainError("x0", x0.tolist(), "dimension mismatch")
    X = np.stack(target.mesh(), axis=-1).reshape(-1, target.ndim)
    P = X * r
    P[:, :-1] += x0
    src = f.spec
    for ax in range(src.ndim):
        c = src.axis_coords(ax)
        if P[:, ax].min() < c[0] - 1e-9 * src.h or P[:, ax].max() > c[-1] + 1e-9 * src.h:
            raise ExtentError(f"pulled-back target leaves the source grid along axis {ax}")
    vals = interpolate(f, P) / r ** p.s
    meta = dict(f.meta)
    meta.update({"rescale_x0": tuple(x0.tolist()), "rescale_r": r})
    return ScalarField(target, vals.reshape(target.shape), meta)


def rescaled_grid(h: float, dim_x: int = 1, half_width: float = 1.0) -> GridSpec:
    return GridSpec.box(dim_x, h, half_width)


# --- almost-minimality certification -----------------------------------------------

COMPETITORS = ("harmonic_replacement", "positive_truncation", "barrier_min")
RATIO_ROUNDOFF = 1e-12   # J_u / J_v - 1 below this is a tie in floating point


def cutoff(spec: GridSpec, x0, r: float) -> np.ndarray:
    """``eta = 1`` on ``B_{r/2}``, linear ramp to 0 at ``3r/4``."""
    c = spec.coords()
    x0 = np.atleast_1d(x0)
    d = np.sqrt(sum((c[i] - x0[i]) ** 2 for i in range(spec.dim_x)) + c[-1] ** 2)
    return np.broadcast_to(np.clip((0.75 * r - d) / (0.25 * r), 0.0, 1.0), spec.shape)


def _competitors(f: ScalarField, p: ProblemParams, x0, r: float, kinds, region, barriers):
    spec = f.spec
    inner = interior_mask(region)
    out = []
    u = np.asarray(f.values)
    if "harmonic_replacement" in kinds:
        w = StencilWeights.for_weight(spec, p.a)
        v = HarmonicSolver(w, region, method="direct").solve(np.where(region, u, 0.0))
        out.append(("harmonic_replacement", np.where(region, v, u)))
    if "positive_truncation" in kinds:
        eta2 = cutoff(spec, x0, r) ** 2
        amp = float(np.max(np.abs(u[region]))) if region.any() else 0.0
        for c in (0.05, 0.2, 0.5):
            v = np.sign(u) * np.maximum(np.abs(u) - c * amp * eta2, 0.0)
            out.append((f"positive_truncation[c={c}]", np.where(inner, v, u)))
    if "barrier_min" in kinds:
        from .barriers import V_field

        for bs in barriers or ():
            V = V_field(spec, bs, p.s).values
            out.append((f"barrier_min[t={bs.t:g},zeta={bs.zeta:g}]", np.where(inner, np.minimum(u, V), u)))
    return out


def default_barriers(n: int, mu: float = 0.05):
    """A small family of translated ``V`` used as ``min(f, V)`` competitors."""
    from .core_types import MU0

    mu = min(mu, MU0)
    out = []
    for t in (-0.05, 0.0, 0.05):
        for zeta in (-mu, mu):
            out.append(BarrierSpec(np.zeros((n - 1, n - 1)), np.zeros(n - 1), zeta, t, mu))
    return out


def certify_almost_min(f: ScalarField, p: ProblemParams, centers, radii, competitors=COMPETITORS,
                       barriers=None) -> AnalysisReport:
    """Compare ``J(f, B_r)`` with competitor energies on every ball.

    Per ball, ``kappa_min = max(0, J_u / J_v - 1) / r^alpha`` maximized over
    the competitor family; the verdict passes iff every ball has
    ``kappa_min <= p.kappa``.  The family is finite, so a pass certifies
    ``f`` against that family only.
    """
    spec = f.spec
    kinds = tuple(competitors)
    for k in kinds:
        if k not in COMPETITORS:
            raise DomainError("competitors", k, f"choose from {COMPETITORS}")
    if "barrier_min" in kinds and barriers is None:
        barriers = default_barriers(spec.dim_x)
    rep = AnalysisReport("almost_min")
    worst = 0.0
    for x0 in centers:
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        for r in radii:
            pt = np.concatenate([x0, [0.0]])
            if not (spec.contains(pt + np.r_[[r] * spec.dim_x, r]) and spec.contains(pt - np.r_[[r] * spec.dim_x, 0])):
                raise ExtentError(f"ball B_{r}({x0.tolist()}) leaves the grid")
            region = ball_mask(spec, x0, r)
            Ju = energy(f, p, region).total
            for name, v in _competitors(f, p, x0, r, kinds, region, barriers):
                Jv = energy(f.replace(values=v), p, region).total
                if Jv > 0:
                    excess = Ju / Jv - 1.0
                    km = max(0.0, excess if excess > RATIO_ROUNDOFF else 0.0) / r ** p.alpha
                else:
                    km = 0.0 if Ju == 0 else math.inf
                worst = max(worst, km)
                rep.rows.append({"center": tuple(x0.tolist()), "r": r, "competitor": name, "J_u": Ju,
                                 "J_v": Jv, "kappa_min": km, "verdict": "pass" if km <= p.kappa else "fail"})
    rep.metrics.update({"kappa_min": worst, "kappa": p.kappa, "alpha": p.alpha, "balls": len(rep.rows),
                        "family": ",".join(kinds)})
    rep.verdict("almost_min", worst <= p.kappa, p.kappa - worst)
    rep.notes.append("certified against a finite competitor family only")
    return rep


def certificate_csv(rep: AnalysisReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["center", "r", "competitor", "J_u", "J_v", "kappa_min", "verdict"])
    for row in rep.rows:
        c = " ".join(repr(float(v)) for v in row["center"])
        w.writerow([c, repr(float(row["r"])), row["competitor"], repr(row["J_u"]), repr(row["J_v"]),
                    repr(row["kappa_min"]), row["verdict"]])
    return buf.getvalue()


# --- almost-Caccioppoli -------------------------------------------------------------

def weighted_l2(f: ScalarField, p: ProblemParams, region) -> float:
    """``int_B u^2 |y|^a`` over the full ball (trapezoid in y, thin layer by its half cell)."""
    spec = f.spec
    y = spec.axis_coords(spec.ndim - 1)
    wy = np.empty_like(y)
    wy[1:] = y[1:] ** p.a * spec.h
    # exact integral of y^a over [0, h/2]
    wy[0] = (0.5 * spec.h) ** (1 + p.a) / (1 + p.a)
    wts = np.broadcast_to(wy, spec.shape) * spec.h ** spec.dim_x
    return float(2.0 * np.sum((f.values ** 2 * wts)[region]))


def caccioppoli_fit(f: ScalarField, p: ProblemParams, x0, radii) -> AnalysisReport:
    """Constants in ``D(u, B_{r/2}) <= C1 r^(n+alpha) + C2 r^-2 int_{B_r} u^2 |y|^a``.

    ``C2(r) = D(r/2) / (r^-2 L2(r))`` is the constant needed at each radius
    with ``C1 = 0``; the common ``C2`` is the smallest of them and ``C1``
    absorbs the remainder at the other radii.  Stable means
    ``max C2(r) / min C2(r) <= 2``.
    """
    spec = f.spec
    w = StencilWeights.for_weight(spec, p.a)
    rows = []
    for r in radii:
        half = ball_mask(spec, x0, 0.5 * r)
        D = dirichlet_form(w, stiffness_matrix(w, half), f.values)
        L2 = weighted_l2(f, p, ball_mask(spec, x0, r)) / r ** 2
        rows.append({"r": r, "dirichlet_half": D, "l2_over_r2": L2, "C2_r": D / L2 if L2 > 0 else math.inf})
    c2 = np.array([row["C2_r"] for row in rows])
    C2 = float(np.min(c2))
    n = spec.dim_x
    C1 = max(max(0.0, row["dirichlet_half"] - C2 * row["l2_over_r2"]) / row["r"] ** (n + p.alpha)
             for row in rows)
    spread = float(np.max(c2) / np.min(c2)) if np.all(np.isfinite(c2)) and C2 > 0 else math.inf
    rep = AnalysisReport("caccioppoli", rows=rows)
    rep.metrics.update({"C1": C1, "C2": C2, "C2_spread": spread})
    rep.verdict("finite", math.isfinite(C1) and math.isfinite(C2), 0.0 if math.isfinite(C2) else -math.inf)
    rep.verdict("stable", spread <= 2.0, 2.0 - spread)
    for row in rows:
        row["bound"] = C1 * row["r"] ** (n + p.alpha) + C2 * row["l2_over_r2"]
    return rep
