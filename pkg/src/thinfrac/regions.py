"""Node masks for balls, boxes and tubes on a :class:`GridSpec`."""
from __future__ import annotations

import numpy as np

from .core_types import DomainError, GridSpec

# Relative slack on radii so that nodes exactly on a sphere are included.
_RTOL = 1e-9


def full_mask(spec: GridSpec) -> np.ndarray:
    return np.ones(spec.shape, dtype=bool)


def ball_mask(spec: GridSpec, center=None, r: float = 1.0) -> np.ndarray:
    """Closed ball ``B_r(x0, 0)`` intersected with the stored half ``y >= 0``."""
    center = np.zeros(spec.dim_x) if center is None else np.atleast_1d(np.asarray(center, float))
    if center.size != spec.dim_x:
        raise DomainError("center", center.tolist(), f"needs {spec.dim_x} thin coordinates")
    c = spec.coords()
    d2 = sum((c[i] - center[i]) ** 2 for i in range(spec.dim_x)) + c[-1] ** 2
    return np.broadcast_to(d2 <= (r * (1 + _RTOL)) ** 2, spec.shape).copy()


def box_mask(spec: GridSpec, lo, hi) -> np.ndarray:
    """Closed box ``prod [lo_i, hi_i]`` over all axes (y included as last axis)."""
    c = spec.coords()
    tol = _RTOL * spec.h
    m = np.ones(spec.shape, dtype=bool)
    for i in range(spec.ndim):
        m &= (c[i] >= lo[i] - tol) & (c[i] <= hi[i] + tol)
    return m


def tube_mask(spec: GridSpec, r_cut: float) -> np.ndarray:
    """Nodes within ``r_cut`` of ``L = {x_n = 0, y = 0}`` (a point when n = 1)."""
    c = spec.coords()
    d2 = c[spec.dim_x - 1] ** 2 + c[-1] ** 2
    return np.broadcast_to(d2 < r_cut ** 2, spec.shape).copy()


def interior_mask(mask: np.ndarray) -> np.ndarray:
    """Nodes of ``mask`` all of whose stored neighbours lie in ``mask``.

    A thin node (``j = 0``) has no stored lower neighbour: its reflected
    neighbour is itself at ``j = 1`` and is counted once.  Nodes on the
    outer faces of the grid are never interior.
    """
    mask = np.asarray(mask, dtype=bool)
    inner = mask.copy()
    nd = mask.ndim
    for ax in range(nd):
        lo = [slice(None)] * nd
        hi = [slice(None)] * nd
        # upper neighbour
        lo[ax] = slice(0, -1)
        hi[ax] = slice(1, None)
        up = np.zeros_like(mask)
        up[tuple(lo)] = mask[tuple(hi)]
        inner &= up
        dn = np.zeros_like(mask)
        dn[tuple(hi)] = mask[tuple(lo)]
        if ax == nd - 1:
            first = [slice(None)] * nd
            first[ax] = 0
            dn[tuple(first)] = True
        inner &= dn
    return inner


def thin_mask(spec: GridSpec) -> np.ndarray:
    m = np.zeros(spec.shape, dtype=bool)
    m[..., 0] = True
    return m
