"""The weighted operator ``div(|y|^a grad u)`` and its a-harmonic solvers.

Finite-volume form of ``int |y|^a |grad u|^2`` on the stored half grid:

* edges along ``y`` between layers ``j`` and ``j+1`` carry ``((j + 1/2) h)^a``;
* edges along ``x_i`` at layer ``j >= 1`` carry ``(j h)^a``;
* edges along ``x_i`` on the thin layer carry the exact average of ``y^a``
  over the half face ``[0, h/2]``, i.e. ``(h/2)^a / (2 (1 + a))``.

The node weight ``|0|^a`` is never evaluated, so the stiffness matrix is SPD
for every ``a`` in ``(-1, 1)``.  With this convention the half-domain
quadratic form is ``h^(n-1) sum_e c_e (u_p - u_q)^2`` and the full (reflected)
Dirichlet energy is twice that.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from dataclasses import dataclass
from scipy.sparse.linalg import splu, spsolve_triangular

from .core_types import (AnalysisReport, ConvergenceError, DegenerateError, DomainError,
                         GridSpec, ProblemParams, ScalarField)
from .regions import ball_mask, interior_mask, tube_mask

W_MIN = 1e-12
MAX_ITER = 100_000
DEFAULT_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class StencilWeights:
    """Edge conductances per axis; ``cond[ax]`` has length ``N_ax - 1`` along ``ax``."""
    spec: GridSpec
    cond: tuple

    @classmethod
    def for_weight(cls, spec: GridSpec, a: float) -> "StencilWeights":
        h = spec.h
        ny = spec.shape[-1]
        j = np.arange(ny, dtype=float)
        vert = ((j[:-1] + 0.5) * h) ** a
        horiz = np.empty(ny)
        horiz[0] = (0.5 * h) ** a / (2.0 * (1.0 + a))
        horiz[1:] = (j[1:] * h) ** a
        cond = []
        for ax in range(spec.ndim):
            shp = list(spec.shape)
            shp[ax] -= 1
            base = vert if ax == spec.ndim - 1 else horiz
            cond.append(np.broadcast_to(base, shp).copy())
        return cls(spec, tuple(cond))

    def scaled(self, factors) -> "StencilWeights":
        """Multiply each axis' conductances by ``factors[ax]`` (same shapes)."""
        return StencilWeights(self.spec, tuple(c * f for c, f in zip(self.cond, factors)))

    @property
    def thin_flux(self) -> np.ndarray:
        """Coefficient of the upward flux out of each thin node."""
        return self.cond[-1][..., 0]


def edge_midpoints(spec: GridSpec, ax: int) -> list:
    """Coordinates of the midpoints of edges along ``ax`` (broadcast-ready)."""
    c = spec.coords()
    m = c[ax]
    sl = [slice(None)] * spec.ndim
    lo = m[tuple(sl[:ax] + [slice(0, -1)] + sl[ax + 1:])]
    hi = m[tuple(sl[:ax] + [slice(1, None)] + sl[ax + 1:])]
    c[ax] = 0.5 * (lo + hi)
    return c


def stiffness_matrix(weights: StencilWeights, mask: np.ndarray) -> sp.csr_matrix:
    """Weighted graph Laplacian over all grid nodes, using edges inside ``mask``."""
    spec = weights.spec
    N = int(np.prod(spec.shape))
    idx = np.arange(N).reshape(spec.shape)
    rows, cols, vals = [], [], []
    for ax, c in enumerate(weights.cond):
        sl_lo = [slice(None)] * spec.ndim
        sl_hi = [slice(None)] * spec.ndim
        sl_lo[ax] = slice(0, -1)
        sl_hi[ax] = slice(1, None)
        p = idx[tuple(sl_lo)]
        q = idx[tuple(sl_hi)]
        keep = mask[tuple(sl_lo)] & mask[tuple(sl_hi)]
        p, q, w = p[keep], q[keep], c[keep]
        rows += [p, q, p, q]
        cols += [p, q, q, p]
        vals += [w, w, -w, -w]
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    return sp.csr_matrix((vals, (rows, cols)), shape=(N, N))


def dirichlet_form(weights: StencilWeights, L: sp.csr_matrix, u: np.ndarray) -> float:
    """Full reflected energy ``int_{B} |y|^a |grad u|^2`` of node values ``u``."""
    v = np.ravel(u)
    h = weights.spec.h
    return float(2.0 * h ** (weights.spec.dim_x - 1) * v @ (L @ v))


def apply_La(f: ScalarField, p: ProblemParams) -> ScalarField:
    """Central differences of ``Laplace f + (a/y) d_y f``.

    Only nodes with ``y > 0`` and a full stencil are evaluated; the rest are 0
    and marked ``False`` in ``meta['evaluated']``.
    """
    spec = f.spec
    v = f.values
    h = spec.h
    out = np.zeros_like(v)
    core = tuple([slice(1, -1)] * spec.ndim)
    lap = np.zeros(tuple(m - 2 for m in spec.shape))
    for ax in range(spec.ndim):
        lo = [slice(1, -1)] * spec.ndim
        hi = [slice(1, -1)] * spec.ndim
        lo[ax] = slice(0, -2)
        hi[ax] = slice(2, None)
        lap += (v[tuple(hi)] - 2.0 * v[core] + v[tuple(lo)]) / h ** 2
        if ax == spec.ndim - 1:
            y = spec.axis_coords(ax)[1:-1]
            lap += p.a / y * (v[tuple(hi)] - v[tuple(lo)]) / (2.0 * h)
    out[core] = lap
    evaluated = np.zeros(spec.shape, dtype=bool)
    evaluated[core] = True
    return ScalarField(spec, out, {"evaluated": evaluated, "op": "L_a"})


class _SSORPreconditioner:
    def __init__(self, A: sp.csr_matrix, omega: float = 1.5):
        d = A.diagonal()
        self.omega = omega
        self.d = d
        self.lower = (sp.tril(A, -1) + sp.diags(d / omega)).tocsr()
        self.upper = (sp.triu(A, 1) + sp.diags(d / omega)).tocsr()
        self.scale = (2.0 - omega) / omega

    def __call__(self, r):
        z = spsolve_triangular(self.lower, r, lower=True)
        z = self.scale * self.d * z
        return spsolve_triangular(self.upper, z, lower=False)


def ssor_pcg(A: sp.csr_matrix, b: np.ndarray, tol: float, x0=None, max_iter: int = MAX_ITER,
             omega: float = 1.5):
    """Conjugate gradients preconditioned by symmetric SOR; relative residual stop."""
    bnorm = float(np.max(np.abs(b))) if b.size else 0.0
    if bnorm == 0.0:
        return np.zeros_like(b), 0, 0.0
    # unit right-hand side: tiny or subnormal data must not stall the relative test
    b = b / bnorm
    M = _SSORPreconditioner(A, omega)
    x = np.zeros_like(b) if x0 is None else x0 / bnorm
    r = b - A @ x
    z = M(r)
    pdir = z.copy()
    rz = r @ z
    for it in range(1, max_iter + 1):
        Ap = A @ pdir
        alpha = rz / (pdir @ Ap)
        x += alpha * pdir
        r -= alpha * Ap
        res = np.max(np.abs(r))
        if res <= tol:
            return x * bnorm, it, res
        z = M(r)
        rz_new = r @ z
        pdir = z + (rz_new / rz) * pdir
        rz = rz_new
    raise ConvergenceError(f"SSOR-PCG did not reach tol={tol} in {max_iter} iterations",
                           residual=res, best=x * bnorm)


class HarmonicSolver:
    """Dirichlet solver for the flux balance on a fixed mask.

    Interior nodes follow :func:`regions.interior_mask`; every other node of
    the mask carries Dirichlet data.  Extra Dirichlet nodes (for example a
    constrained thin set) can be passed via ``fixed``.
    """

    def __init__(self, weights: StencilWeights, mask: np.ndarray, fixed=None, method: str = "ssor-cg"):
        if method not in ("ssor-cg", "direct"):
            raise DomainError("method", method, "use 'ssor-cg' or 'direct'")
        self.weights = weights
        self.spec = weights.spec
        self.mask = np.asarray(mask, dtype=bool)
        inner = interior_mask(self.mask)
        if fixed is not None:
            inner &= ~np.asarray(fixed, dtype=bool)
        self.inner = inner
        self.boundary = self.mask & ~inner
        if not inner.any():
            raise DomainError("region", "empty", "mask has no interior nodes")
        self.L = stiffness_matrix(weights, self.mask)
        fi = np.flatnonzero(inner.ravel())
        fb = np.flatnonzero(self.boundary.ravel())
        self._fi, self._fb = fi, fb
        self.A = self.L[fi][:, fi].tocsr()
        self.B = self.L[fi][:, fb].tocsr()
        self.method = method
        self._lu = splu(self.A.tocsc()) if method == "direct" else None
        self.stats = {}

    def solve(self, data: np.ndarray, tol: float = DEFAULT_TOL) -> np.ndarray:
        """Return full-grid values: data on boundary nodes, a-harmonic inside."""
        data = np.asarray(data, dtype=float)
        g = data.ravel()[self._fb]
        rhs = -(self.B @ g)
        if self._lu is not None:
            x = self._lu.solve(rhs)
            it = 1
        else:
            if not np.any(rhs):
                x, it = np.zeros_like(rhs), 0
            else:
                x, it, _ = ssor_pcg(self.A, rhs, tol)
        res = float(np.max(np.abs(self.A @ x - rhs))) if rhs.size else 0.0
        scale = max(float(np.max(np.abs(rhs))) if rhs.size else 0.0, 1e-300)
        if res > max(tol, 1e-13) * scale and res > 1e-14:
            raise ConvergenceError(f"flux-balance residual {res:.3e} exceeds tol", residual=res, best=x)
        self.stats = {"iterations": it, "residual": res / scale}
        out = np.where(self.mask, data, 0.0).ravel().copy()
        out[self._fi] = x
        return out.reshape(self.spec.shape)

    def energy(self, u: np.ndarray) -> float:
        return dirichlet_form(self.weights, self.L, u)


def _boundary_array(boundary, spec: GridSpec) -> np.ndarray:
    if isinstance(boundary, ScalarField):
        return np.asarray(boundary.values)
    return np.broadcast_to(np.asarray(boundary, dtype=float), spec.shape)


def solve_dirichlet(boundary: ScalarField, p: ProblemParams, region: np.ndarray, tol: float = DEFAULT_TOL,
                    method: str = "ssor-cg", fixed=None) -> ScalarField:
    """a-harmonic replacement of ``boundary`` on ``region`` (flux-balance form).

    Values of ``boundary`` are read on the discrete boundary of ``region``
    (and on ``fixed`` nodes); outside ``region`` the result is 0.
    """
    spec = boundary.spec
    solver = HarmonicSolver(StencilWeights.for_weight(spec, p.a), region, fixed=fixed, method=method)
    v = solver.solve(_boundary_array(boundary, spec), tol)
    meta = dict(boundary.meta)
    meta.update(solver.stats)
    meta["s"] = p.s
    return ScalarField(spec, v, meta)


def linearized_weights(spec: GridSpec, p: ProblemParams, w_min: float = W_MIN) -> StencilWeights:
    """Conductances of ``div(U_n^2 |y|^a grad h)``, ``U_n`` at edge midpoints, floored."""
    from .barriers import U_tau_xy

    base = StencilWeights.for_weight(spec, p.a)
    factors = []
    for ax in range(spec.ndim):
        mid = edge_midpoints(spec, ax)
        xn, y = np.broadcast_arrays(mid[spec.dim_x - 1], mid[-1])
        un = U_tau_xy(xn, y, p.s)
        factors.append(np.broadcast_to(np.maximum(un ** 2, w_min), base.cond[ax].shape))
    return base.scaled(factors)


def solve_linearized(boundary: ScalarField, p: ProblemParams, region: np.ndarray, tol: float = DEFAULT_TOL,
                     r_cut: float | None = None, w_min: float = W_MIN, tube_bc: str = "dirichlet",
                     method: str = "direct") -> ScalarField:
    """Solve ``div(U_n^2 |y|^a grad h) = 0`` on ``region`` minus a tube around L.

    Equivalent to ``div(|y|^a grad(U_n h)) = 0`` where ``U_n`` is
    a-harmonic.  ``tube_bc='dirichlet'`` takes ``boundary`` values on the
    tube's outer layer; ``'neumann'`` leaves the tube as a zero-flux hole.
    """
    spec = boundary.spec
    r_cut = 4.0 * spec.h if r_cut is None else r_cut
    tube = tube_mask(spec, r_cut)
    region = np.asarray(region, dtype=bool)
    weights = linearized_weights(spec, p, w_min)
    data = _boundary_array(boundary, spec)
    if tube_bc == "dirichlet":
        # tube nodes become Dirichlet nodes of the solve
        solver = HarmonicSolver(weights, region, fixed=tube & region, method=method)
    elif tube_bc == "neumann":
        outer_dirichlet = region & ~interior_mask(region)
        mask = region & ~tube
        solver = HarmonicSolver(weights, mask, method=method)
        # nodes next to the hole stay unknowns: only the outer boundary is fixed
        solver = _free_hole(solver, mask, outer_dirichlet, method)
    else:
        raise DomainError("tube_bc", tube_bc, "use 'dirichlet' or 'neumann'")
    v = solver.solve(data, tol)
    meta = dict(boundary.meta)
    meta.update(solver.stats)
    meta.update({"r_cut": r_cut, "tube_bc": tube_bc, "tube": tube})
    return ScalarField(spec, v, meta)


def _free_hole(solver: HarmonicSolver, mask, dirichlet, method) -> HarmonicSolver:
    s = HarmonicSolver.__new__(HarmonicSolver)
    s.weights, s.spec, s.mask = solver.weights, solver.spec, mask
    s.inner = mask & ~dirichlet
    s.boundary = mask & dirichlet
    s.L = solver.L
    fi = np.flatnonzero(s.inner.ravel())
    fb = np.flatnonzero(s.boundary.ravel())
    s._fi, s._fb = fi, fb
    s.A = s.L[fi][:, fi].tocsr()
    s.B = s.L[fi][:, fb].tocsr()
    s.method = method
    s._lu = splu(s.A.tocsc()) if method == "direct" else None
    s.stats = {}
    return s


def radial_slope_at_L(hfield: ScalarField, r_in: float, r_out: float) -> float:
    """Fit ``h ~ c0 + c' x' + b_n x_n + b_y y`` on the annulus ``r_in <= r <= r_out``
    around L and return ``|(b_n, b_y)|``, the radial slope the zero-Neumann
    condition on L would force to vanish."""
    spec = hfield.spec
    X = spec.mesh()
    r = np.hypot(X[spec.dim_x - 1], X[-1])
    sel = (r >= r_in) & (r <= r_out)
    cols = [np.ones(sel.sum())] + [X[i][sel] for i in range(spec.ndim)]
    A = np.stack(cols, axis=1)
    coef, *_ = np.linalg.lstsq(A, hfield.values[sel], rcond=None)
    return float(np.hypot(coef[spec.dim_x], coef[-1]))


def harnack_ratio(f: ScalarField, p: ProblemParams, x0, r: float) -> float:
    """``sup_{B_r(x0) cap {y > 0}} f r^(2s) / (y^(2s) f(x0, r))``."""
    from .energy import interpolate

    spec = f.spec
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    ref = float(interpolate(f, np.concatenate([x0, [r]])[None, :])[0])
    if ref == 0.0:
        raise DegenerateError(f"f vanishes at (x0, y=r) = ({x0.tolist()}, {r})")
    m = ball_mask(spec, x0, r)
    y = spec.coords()[-1]
    m &= np.broadcast_to(y > 0, spec.shape)
    yy = np.broadcast_to(y, spec.shape)[m]
    vals = f.values[m] * r ** (2 * p.s) / (yy ** (2 * p.s) * ref)
    return float(np.max(vals))


def solver_report(f: ScalarField) -> AnalysisReport:
    rep = AnalysisReport("solver")
    for k in ("iterations", "residual"):
        if k in f.meta:
            rep.metrics[k] = f.meta[k]
    return rep
