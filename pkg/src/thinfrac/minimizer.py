"""Discrete minimizers of ``J`` by smoothed-phase continuation, plus blow-ups.

The Dirichlet part is exactly quadratic and the phase term lives on the
thin layer only, so the off-thin unknowns are eliminated once (Schur
complement onto the interior thin nodes).  Every iterate is then the
a-harmonic extension of its trace and the descent runs on a small dense
problem.

Stages of :func:`minimize_energy`:

1. continuation in the smoothing width ``eps`` of
   ``chi_eps(t) = (1 + tanh(t / eps)) / 2``, each stage solved by projected
   Barzilai-Borwein descent with Armijo backtracking (monotone);
2. a discrete polish on the exact (unsmoothed) ``J``: every thin node is
   either pinned to 0 or free, the free values are the exact constrained
   minimizer, and single-node toggles are accepted while ``J`` drops.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .barriers import U_xy
from .core_types import (ConvergenceError, DomainError, ExtentError, GridSpec, ProblemParams, ScalarField,
                         load_field, save_field)
from .energy import energy, phase_measures, rescale
from .regions import ball_mask, interior_mask
from .weighted_operator import StencilWeights, stiffness_matrix

FLIP_GUARD = 0.2
ARMIJO = 1e-4
MAX_INNER = 20_000
_BLOCK = 64


@dataclass(frozen=True)
class ContinuationSchedule:
    eps0: float = 0.25
    factor: float = 0.5
    eps_min: float | None = None      # None: h^s at run time
    inner_tol: float = 1e-8
    max_outer: int = 40
    polish: bool = True
    starts: int = 3         # polish starts: the continuation output plus the best threshold pins

    def __post_init__(self):
        if not 0 < self.factor < 1:
            raise DomainError("factor", self.factor, "must lie in (0, 1)")
        if self.eps_min is not None and not self.eps0 > self.eps_min > 0:
            raise DomainError("eps_min", self.eps_min, "need eps0 > eps_min > 0")
        if self.eps0 <= 0:
            raise DomainError("eps0", self.eps0, "must be > 0")
        if self.inner_tol <= 0 or self.max_outer < 1:
            raise DomainError("inner_tol", self.inner_tol, "need inner_tol > 0 and max_outer >= 1")

    def widths(self, eps_min: float) -> list:
        out = [self.eps0]
        while out[-1] > eps_min * (1 + 1e-12):
            out.append(max(out[-1] * self.factor, eps_min))
        return out


class ReducedProblem:
    """Dirichlet energy on ``region`` as a quadratic in the interior thin values.

    ``D(w) = 2 h^(n-1) (w.S w + 2 b.w + c)`` after minimizing over the
    off-thin interior for fixed thin values ``w``.
    """

    def __init__(self, boundary: np.ndarray, p: ProblemParams, spec: GridSpec, region: np.ndarray):
        self.spec, self.p = spec, p
        region = np.asarray(region, dtype=bool)
        self.region = region
        inner = interior_mask(region)
        thin = np.zeros(spec.shape, dtype=bool)
        thin[..., 0] = True
        T = inner & thin
        if not T.any():
            raise DomainError("region", "no thin interior", "region must contain a thin segment")
        O = inner & ~thin
        B = region & ~inner
        self.T, self.O, self.B = T, O, B
        self.weights = StencilWeights.for_weight(spec, p.a)
        L = stiffness_matrix(self.weights, region)
        it, io, ib = (np.flatnonzero(m.ravel()) for m in (T, O, B))
        self._it, self._io, self._ib = it, io, ib
        self.data = np.array(np.broadcast_to(boundary, spec.shape), dtype=float)
        g = self.data.ravel()[ib]
        self.g = g
        Lr = L.tocsr()
        L_TT = Lr[it][:, it].toarray()
        L_TO = Lr[it][:, io].tocsr()
        L_OB = Lr[io][:, ib].tocsr()
        self._L_OT = Lr[io][:, it].tocsc()
        self.lu = splu(Lr[io][:, io].tocsc()) if io.size else None
        S = L_TT.copy()
        if self.lu is not None:
            for k in range(0, it.size, _BLOCK):
                cols = self._L_OT[:, k:k + _BLOCK].toarray()
                S[:, k:k + _BLOCK] -= L_TO @ self.lu.solve(cols)
        self.S = 0.5 * (S + S.T)
        LOBg = L_OB @ g
        z = self.lu.solve(LOBg) if self.lu is not None else np.zeros(0)
        self._LOBg = LOBg
        self.b = Lr[it][:, ib] @ g - (L_TO @ z if io.size else 0.0)
        self.c = float(g @ (Lr[ib][:, ib] @ g) - LOBg @ z)
        self.scale = 2.0 * spec.h ** (spec.dim_x - 1)
        # thin-layer bookkeeping
        self.thin_index = np.flatnonzero(T[..., 0].ravel())
        self.base_trace = np.where(region[..., 0], np.asarray(boundary)[..., 0], 0.0)
        self.thin_region = region[..., 0]

    @property
    def size(self) -> int:
        return self._it.size

    def dirichlet(self, w) -> float:
        return float(self.scale * (w @ (self.S @ w) + 2 * self.b @ w + self.c))

    def dirichlet_grad(self, w) -> np.ndarray:
        return 2.0 * self.scale * (self.S @ w + self.b)

    def trace(self, w) -> np.ndarray:
        t = self.base_trace.copy().ravel()
        t[self.thin_index] = w
        return t.reshape(self.base_trace.shape)

    def exact_energy(self, w) -> float:
        plus, minus = phase_measures(self.trace(w), self.thin_region, self.spec.h)
        return self.dirichlet(w) + self.p.lambda_plus * plus + self.p.lambda_minus * minus

    def extend(self, w) -> np.ndarray:
        """Full-grid field: boundary data, thin values ``w``, a-harmonic elsewhere."""
        out = self.data.ravel().copy()
        out[self._it] = w
        if self.lu is not None:
            out[self._io] = -self.lu.solve(self._L_OT @ w + self._LOBg)
        return out.reshape(self.spec.shape)

    def pattern_solve(self, free: np.ndarray) -> np.ndarray:
        """Exact Dirichlet minimizer with thin values pinned to 0 off ``free``."""
        w = np.zeros(self.size)
        F = np.flatnonzero(free)
        if F.size:
            w[F] = sla.solve(self.S[np.ix_(F, F)], -self.b[F], assume_a="pos")
        return w

    def thin_runs(self, length: int) -> list:
        """Per node, runs of up to ``length`` consecutive nodes along each thin axis."""
        shp = self.base_trace.shape
        pos = -np.ones(int(np.prod(shp)), dtype=int)
        pos[self.thin_index] = np.arange(self.size)
        pos = pos.reshape(shp)
        runs = [[] for _ in range(self.size)]
        for flat in self.thin_index:
            start = np.unravel_index(flat, shp)
            i = pos[start]
            for ax in range(len(shp)):
                run = [i]
                for k in range(1, length):
                    q = list(start)
                    q[ax] += k
                    if q[ax] >= shp[ax] or pos[tuple(q)] < 0:
                        break
                    run.append(pos[tuple(q)])
                    runs[i].append(tuple(run))
        return runs

    def thin_neighbours(self) -> list:
        """Adjacency among interior thin nodes (list of index arrays)."""
        shp = self.base_trace.shape
        pos = -np.ones(int(np.prod(shp)), dtype=int)
        pos[self.thin_index] = np.arange(self.size)
        pos = pos.reshape(shp)
        nbrs = [[] for _ in range(self.size)]
        for ax in range(len(shp)):
            lo = [slice(None)] * len(shp)
            hi = [slice(None)] * len(shp)
            lo[ax] = slice(0, -1)
            hi[ax] = slice(1, None)
            a, b = pos[tuple(lo)].ravel(), pos[tuple(hi)].ravel()
            for i, j in zip(a, b):
                if i >= 0 and j >= 0:
                    nbrs[i].append(j)
                    nbrs[j].append(i)
        return [np.array(sorted(v), dtype=int) for v in nbrs]


def _chi(t, eps):
    return 0.5 * (1.0 + np.tanh(t / eps))


def _dchi(t, eps):
    return 0.5 / eps / np.cosh(np.clip(t / eps, -350, 350)) ** 2


def _dchi_step(a, b, eps):
    """``chi(a) - chi(b)`` without cancellation."""
    A = np.clip(a / eps, -350, 350)
    B = np.clip(b / eps, -350, 350)
    return 0.5 * np.sinh(np.clip(A - B, -700, 700)) / (np.cosh(A) * np.cosh(B))


def _smoothed(rp: ReducedProblem, eps: float, mass: float):
    lp, lm = rp.p.lambda_plus, rp.p.lambda_minus

    def fun(w):
        return rp.dirichlet(w) + mass * float(np.sum(lp * _chi(w, eps) + lm * _chi(-w, eps)))

    def grad(w):
        return rp.dirichlet_grad(w) + mass * (lp * _dchi(w, eps) - lm * _dchi(-w, eps))

    def delta(w, dw, gd):
        # J(w + dw) - J(w) without cancelling two O(1) totals; gd = dirichlet gradient at w
        wn = w + dw
        dphase = lp * _dchi_step(wn, w, eps) + lm * _dchi_step(-wn, -w, eps)
        return float(rp.scale * (dw @ (rp.S @ dw)) + gd @ dw + mass * np.sum(dphase))

    return fun, grad, delta


def _projected_bb(fun, grad, delta, dgrad, w, lo, hi, mass, tol, max_iter, step):
    """Monotone projected BB descent; gradient measured per unit thin mass."""
    J = fun(w)
    g = grad(w) / mass
    hist = [J]
    conv = False
    for it in range(max_iter):
        pg = float(np.max(np.abs(w - np.clip(w - g, lo, hi)))) if w.size else 0.0
        if pg <= tol:
            conv = True
            break
        alpha = step
        sgn = np.sign(w)
        for _ in range(60):
            wn = np.clip(w - alpha * g, lo, hi)
            flips = np.count_nonzero(np.sign(wn) != sgn)
            dJ = delta(w, wn - w, dgrad(w))
            # increments below the resolution of J itself cannot be ranked
            floor = 4 * np.finfo(float).eps * abs(J)
            if flips <= FLIP_GUARD * w.size + 1 and dJ <= ARMIJO * mass * float(g @ (wn - w)) + floor:
                break
            alpha *= 0.5
        else:
            break
        if dJ > floor:
            raise AssertionError("descent step increased the smoothed energy")
        Jn = J + dJ
        gn = grad(wn) / mass
        sv, yv = wn - w, gn - g
        sy = float(sv @ yv)
        step = float(sv @ sv) / sy if sy > 0 else 2 * alpha
        step = min(max(step, 1e-14), 1e14)
        w, g, J = wn, gn, Jn
        hist.append(J)
    pg = float(np.max(np.abs(w - np.clip(w - g, lo, hi)))) if w.size else 0.0
    return w, {"iterations": it, "pg_inf": pg, "converged": conv or pg <= tol, "history": hist, "step": step}


class _PatternState:
    """Exact constrained minimizer for a pinned/free split, updated one node at a time.

    ``K`` holds the inverse of ``S`` restricted to the free nodes (zero
    elsewhere), so adding or pinning a node is a rank-one update.
    """

    def __init__(self, rp: ReducedProblem, free: np.ndarray):
        self.rp = rp
        self.reset(free)

    def reset(self, free):
        rp = self.rp
        self.free = np.asarray(free, dtype=bool).copy()
        F = np.flatnonzero(self.free)
        self.K = np.zeros((rp.size, rp.size))
        if F.size:
            self.K[np.ix_(F, F)] = sla.inv(rp.S[np.ix_(F, F)], check_finite=False)
        self.w = -self.K @ rp.b
        self.w[~self.free] = 0.0
        self.J = rp.exact_energy(self.w)

    def trial(self, i):
        """(J, w, update) after toggling node ``i``; update is applied by :meth:`accept`."""
        rp = self.rp
        if self.free[i]:
            kcol = self.K[:, i].copy()
            kii = kcol[i]
            if kii <= 0:
                return math.inf, None, None
            w = self.w - (self.w[i] / kii) * kcol
            w[i] = 0.0
            upd = ("pin", kcol, kii)
        else:
            u = self.K @ rp.S[:, i]
            delta = rp.S[i, i] - rp.S[i] @ u
            if delta <= 0:
                return math.inf, None, None
            wi = -(rp.b[i] + rp.S[i] @ self.w) / delta
            v = u.copy()
            v[i] -= 1.0
            w = self.w - wi * v
            upd = ("free", v, delta)
        return rp.exact_energy(w), w, upd

    def copy(self):
        other = object.__new__(_PatternState)
        other.rp, other.free, other.K, other.w, other.J = self.rp, self.free.copy(), self.K.copy(), self.w, self.J
        return other

    def accept(self, i, J, w, upd):
        kind, vec, d = upd
        if kind == "pin":
            self.K -= np.outer(vec, vec) / d
            self.K[i, :] = 0.0
            self.K[:, i] = 0.0
        else:
            self.K += np.outer(vec, vec) / d
        self.free[i] = not self.free[i]
        self.w, self.J = w, J


def _try_move(st: _PatternState, nodes):
    trial = st.copy() if len(nodes) > 1 else st
    for k, i in enumerate(nodes):
        Jt, w, upd = trial.trial(i)
        if w is None:
            return math.inf, None
        if k == len(nodes) - 1 and Jt >= st.J:
            return Jt, None
        if trial is st:
            trial = st.copy()
        trial.accept(i, Jt, w, upd)
    return trial.J, trial


def threshold_starts(rp: ReducedProblem, w: np.ndarray, count: int = 2, levels: int = 32) -> list:
    """Start patterns for the polish: ``w`` itself plus the best pins ``{|w| <= theta}``.

    ``theta`` runs over up to ``levels`` quantiles of ``|w|``; the ``count - 1``
    lowest exact energies are kept.
    """
    starts = [w]
    if count <= 1 or rp.size == 0:
        return starts
    mags = np.unique(np.abs(w))
    if mags.size > levels:
        mags = np.quantile(mags, np.linspace(0, 1, levels), method="nearest")
    scored = []
    for theta in np.r_[-1.0, mags]:
        free = np.abs(w) > theta
        cand = rp.pattern_solve(free)
        scored.append((rp.exact_energy(cand), float(theta), cand))
    scored.sort(key=lambda c: (c[0], c[1]))
    return starts + [c[2] for c in scored[:count - 1]]


def polish_patterns(rp: ReducedProblem, w: np.ndarray, max_sweeps: int = 10_000, refresh: int = 50,
                    block: int = 4):
    """Local search over pinned/free thin patterns on the exact ``J``.

    Moves toggle one node or a run of up to ``block`` consecutive nodes in
    the same state along a thin axis (a single pinned node between positive
    neighbours saves no measure, so zero sets only nucleate as runs).
    Frontier nodes (state differs from a neighbour, or next to the region
    boundary) are tried first; the search only stops after a sweep over
    every node finds no improving move.
    """
    st = _PatternState(rp, np.abs(w) > 0)
    nbrs = rp.thin_neighbours()
    runs = rp.thin_runs(block)
    deg = np.array([v.size for v in nbrs])
    edge = deg < deg.max() if rp.size > 1 else np.ones(rp.size, dtype=bool)
    toggles = 0
    full = False
    for sweep in range(max_sweeps):
        if full:
            cand = list(range(rp.size))
        else:
            cand = [i for i in range(rp.size) if edge[i] or np.any(st.free[nbrs[i]] != st.free[i])]
        improved = False
        for i in cand:
            moves = [(i,)]
            for run in runs[i]:
                if np.all(st.free[list(run)] == st.free[i]):
                    moves.append(run)
            for mv in moves:
                Jt, trial = _try_move(st, mv)
                if trial is not None and Jt < st.J - 1e-13 * max(1.0, abs(st.J)):
                    st = trial
                    toggles += 1
                    improved = True
                    if toggles % refresh == 0:
                        st.reset(st.free)
                    break
        if improved:
            full = False
        elif full:
            break
        else:
            full = True
    st.reset(st.free)
    return st.w, {"toggles": toggles, "sweeps": sweep + 1, "J": st.J}


def _as_array(boundary, spec):
    if isinstance(boundary, ScalarField):
        return np.asarray(boundary.values)
    return np.broadcast_to(np.asarray(boundary, dtype=float), spec.shape)


def minimize_energy(boundary: ScalarField, p: ProblemParams, region: np.ndarray | None = None,
                    sched: ContinuationSchedule | None = None, checkpoint=None, resume=None) -> ScalarField:
    """Minimize the discrete ``J`` with the values of ``boundary`` on the region boundary.

    Nodes outside ``region`` (default: the largest centred ball) keep the
    boundary values.
    Thin values are kept in the box ``[min(g, 0), max(g, 0)]`` spanned by the
    boundary data ``g`` and zero (maximum principle).  ``checkpoint`` is a
    path written after every outer sweep; ``resume`` a dump to start from.
    """
    spec = boundary.spec
    sched = sched or ContinuationSchedule()
    region = ball_mask(spec, None, min(spec.extent)) if region is None else np.asarray(region, dtype=bool)
    data = _as_array(boundary, spec)
    rp = ReducedProblem(data, p, spec, region)
    eps_min = sched.eps_min if sched.eps_min is not None else spec.h ** p.s
    if not sched.eps0 > eps_min:
        eps_min = 0.5 * sched.eps0
    g = data[rp.B]
    lo, hi = min(float(g.min()), 0.0), max(float(g.max()), 0.0)
    mass = spec.h ** spec.dim_x
    if resume is not None:
        start = resume if isinstance(resume, ScalarField) else load_field(resume)
        w = np.clip(np.asarray(start.values).ravel()[rp._it], lo, hi)
    else:
        w = np.clip(np.linalg.solve(rp.S, -rp.b), lo, hi)
    step = mass / max(float(np.max(np.diag(rp.S))) * 2 * rp.scale, 1e-300)
    eps_hist, J_hist, inner = [], [], []
    widths = sched.widths(eps_min)
    outer = 0
    converged = False
    while outer < sched.max_outer:
        eps = widths[min(outer, len(widths) - 1)]
        fun, grad, delta = _smoothed(rp, eps, mass)
        w, info = _projected_bb(fun, grad, delta, rp.dirichlet_grad, w, lo, hi, mass, sched.inner_tol,
                                MAX_INNER, step)
        step = info.pop("step")
        eps_hist.append(eps)
        J_hist.append(info["history"][-1])
        inner.append({k: v for k, v in info.items() if k != "history"} | {"monotone": bool(
            np.all(np.diff(info["history"]) <= 4 * np.finfo(float).eps * abs(info["history"][0])))})
        outer += 1
        if checkpoint is not None:
            save_field(checkpoint, ScalarField(spec, rp.extend(w), {"s": p.s, "eps": eps, "outer": outer}))
        if eps <= eps_min * (1 + 1e-12) and info["converged"]:
            converged = True
            break
    meta = {"s": p.s, "lambda_plus": p.lambda_plus, "lambda_minus": p.lambda_minus, "eps_min": eps_min,
            "eps_history": tuple(eps_hist), "J_eps_history": tuple(J_hist), "outer": outer,
            "inner_iterations": tuple(d["iterations"] for d in inner),
            "pg_inf": inner[-1]["pg_inf"], "monotone": all(d["monotone"] for d in inner)}
    smooth = ScalarField(spec, rp.extend(w), meta | {"stage": "continuation", "J": rp.exact_energy(w)})
    if not converged:
        raise ConvergenceError(f"continuation did not reach eps_min={eps_min:.3g} with gradient <= "
                               f"{sched.inner_tol:g} in {sched.max_outer} sweeps", residual=meta["pg_inf"],
                               best=smooth, diagnostics=meta)
    if not sched.polish:
        return smooth
    best_w, best_J, toggles = w, smooth.meta["J"], 0
    for start in threshold_starts(rp, w, sched.starts):
        wp, pinfo = polish_patterns(rp, start)
        toggles += pinfo["toggles"]
        if pinfo["J"] < best_J:
            best_w, best_J = wp, pinfo["J"]
    out = meta | {"stage": "polished", "J": best_J, "J_continuation": smooth.meta["J"], "toggles": toggles}
    wp = best_w
    return ScalarField(spec, rp.extend(wp), out)


# --- lambda calibration -------------------------------------------------------------

def calibrate_lambda(s: float, h: float, radius: float = 1.0) -> float:
    """``lambda+`` that makes the discrete ``U`` stationary under translation.

    ``Q(k)`` is the Dirichlet energy on the half disc of ``radius`` with
    data ``U`` and thin zeros at ``x <= k h``; stationarity of
    ``Q(k) + lambda (R - k h)`` at ``k = 0`` gives the centred difference
    ``lambda = (Q(1) - Q(-1)) / (2h)``.
    """
    from .core_types import make_params

    p = make_params(s, 1.0)
    spec = GridSpec.box(1, h, radius)
    x, y = spec.mesh()
    rp = ReducedProblem(U_xy(x, y, s), p, spec, ball_mask(spec, None, radius))
    xt = spec.axis_coords(0)[rp.thin_index]
    Q = {k: rp.dirichlet(rp.pattern_solve(xt > k * h + 1e-12 * h)) for k in (-1, 1)}
    return (Q[1] - Q[-1]) / (2 * h)


# --- boundary data presets ----------------------------------------------------------

PRESETS = ("U", "U-tilt", "two-phase", "file")


def boundary_preset(name: str, spec: GridSpec, s: float, tilt: float = 0.0, nu=None, path=None,
                    amplitude: float = 1.0) -> ScalarField:
    """Boundary data on ``spec``; only values on the region boundary matter.

    ``U-tilt``: for n = 2, ``U(x . nu, y)`` with ``nu = (sin t, cos t)`` (or an
    explicit ``nu``); for n = 1 the extension point is rotated by ``t`` in the
    ``(x, y)`` plane before evaluating ``U`` (there is no other direction).
    """
    X = spec.mesh()
    y = X[-1]
    if name == "U":
        v = U_xy(X[spec.dim_x - 1], y, s)
    elif name == "U-tilt":
        if spec.dim_x == 1:
            c, sn = math.cos(tilt), math.sin(tilt)
            xr = c * X[0] + sn * y
            yr = c * y - sn * X[0]
            v = U_xy(xr, np.abs(yr), s)
        else:
            nu = np.array([math.sin(tilt), math.cos(tilt)]) if nu is None else np.asarray(nu, float)
            if nu.size != 2 or abs(np.linalg.norm(nu) - 1) > 1e-12:
                raise DomainError("nu", np.asarray(nu).tolist(), "must be a unit vector in R^2")
            v = U_xy(nu[0] * X[0] + nu[1] * X[1], y, s)
    elif name == "two-phase":
        xn = X[spec.dim_x - 1]
        v = U_xy(xn, y, s) - U_xy(-xn, y, s)
    elif name == "file":
        if path is None:
            raise DomainError("path", None, "preset 'file' needs a path")
        f = load_field(path)
        if f.spec != spec:
            raise DomainError("path", str(path), "stored grid does not match the run grid")
        return f.replace(s=s, preset="file")
    else:
        raise DomainError("preset", name, f"choose from {PRESETS}")
    return ScalarField(spec, amplitude * v, {"s": s, "preset": name})


# --- gauge noise --------------------------------------------------------------------

def _test_balls(spec: GridSpec, region):
    R = min(spec.extent)
    radii = [R / 2 ** k for k in range(1, 5) if R / 2 ** k >= 4 * spec.h]
    centers = [np.zeros(spec.dim_x)]
    return centers, radii


def inject_gauge_noise(f: ScalarField, p: ProblemParams, seed: int, amplitude: float, region=None,
                       centers=None, radii=None, bumps: int = 6, max_halvings: int = 60) -> ScalarField:
    """``f + phi`` with ``phi`` a-harmonic off the thin layer and 0 on the region boundary.

    The thin part of ``phi`` is a sum of random Gaussian bumps.  ``phi`` is
    halved until ``D(f + phi, B_r) - D(f, B_r) <= kappa r^alpha J(f, B_r)``
    holds on every test ball.
    """
    if amplitude < 0:
        raise DomainError("amplitude", amplitude, "must be >= 0")
    if amplitude == 0:
        return f
    spec = f.spec
    region = ball_mask(spec, None, min(spec.extent)) if region is None else region
    c0, r0 = _test_balls(spec, region)
    centers = c0 if centers is None else centers
    radii = r0 if radii is None else radii
    rng = np.random.default_rng(seed)
    inner = interior_mask(region)
    thin_inner = inner[..., 0]
    xs = [spec.axis_coords(i) for i in range(spec.dim_x)]
    Xt = np.meshgrid(*xs, indexing="ij")
    R = min(spec.extent)
    bump = np.zeros(thin_inner.shape)
    for _ in range(bumps):
        ctr = rng.uniform(-0.5 * R, 0.5 * R, spec.dim_x)
        width = rng.uniform(0.05, 0.2) * R
        sgn = rng.choice([-1.0, 1.0])
        d2 = sum((Xt[i] - ctr[i]) ** 2 for i in range(spec.dim_x))
        bump += sgn * np.exp(-d2 / (2 * width ** 2))
    bump = np.where(thin_inner, bump, 0.0)
    data = np.zeros(spec.shape)
    data[..., 0] = bump
    fixed = np.zeros(spec.shape, dtype=bool)
    fixed[..., 0] = True
    from .weighted_operator import HarmonicSolver

    solver = HarmonicSolver(StencilWeights.for_weight(spec, p.a), region, fixed=fixed, method="direct")
    phi = solver.solve(data)
    phi /= max(float(np.max(np.abs(phi))), 1e-300)
    w = StencilWeights.for_weight(spec, p.a)
    balls = []
    for x0 in centers:
        for r in radii:
            m = ball_mask(spec, x0, r)
            balls.append((r, m, energy(f, p, m)))
    amp = amplitude
    for _ in range(max_halvings):
        g = np.asarray(f.values) + amp * phi
        ok = True
        for r, m, Jf in balls:
            L = stiffness_matrix(w, m)
            inc = 2 * spec.h ** (spec.dim_x - 1) * (g.ravel() @ (L @ g.ravel())) - Jf.dirichlet
            if inc > p.kappa * r ** p.alpha * Jf.total:
                ok = False
                break
        if ok:
            return f.replace(values=g, noise_seed=seed, noise_amplitude=amp)
        amp *= 0.5
    raise DomainError("amplitude", amplitude, "no nonzero perturbation fits the gauge budget")


# --- blow-ups -----------------------------------------------------------------------

@dataclass
class BlowupSequence:
    fields: list
    radii: list
    cauchy: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.fields)

    def __len__(self):
        return len(self.fields)

    def __getitem__(self, k):
        return self.fields[k]


def blowup_sequence(f: ScalarField, p: ProblemParams, x0, radii, target: GridSpec | None = None,
                    half_width: float = 1.0) -> BlowupSequence:
    """Rescalings ``u_r`` at ``x0`` on one target grid, with consecutive sup distances."""
    radii = [float(r) for r in radii]
    if any(r2 >= r1 for r1, r2 in zip(radii, radii[1:])):
        raise DomainError("radii", radii, "must be strictly decreasing")
    if target is None:
        k = max(4, int(math.floor(min(radii) * half_width / f.spec.h)))
        target = GridSpec.box(f.spec.dim_x, half_width / k, half_width)
    fields = [rescale(f, p, x0, r, target) for r in radii]
    d = [float(np.max(np.abs(a.values - b.values))) for a, b in zip(fields, fields[1:])]
    return BlowupSequence(fields, radii, d)
