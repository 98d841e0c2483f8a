"""Shared records: problem parameters, grids, node fields, barrier data, reports.

The extension domain is discretized on an isotropic grid whose last axis is
``y >= 0``; the thin space ``{y = 0}`` is the node layer ``j = 0``.  Values at
``y < 0`` are never stored, the even reflection ``u(x, -y) = u(x, y)`` is
implied everywhere.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Mapping, Sequence

import numpy as np

# Admission radius for the barrier class V_mu.
MU0 = 0.1

FIELD_MAGIC = b"THINFRAC-FIELD\0\0"


class DomainError(ValueError):
    """A parameter lies outside its admissible set."""

    def __init__(self, name: str, value: Any, reason: str):
        self.name = name
        self.value = value
        self.reason = reason
        super().__init__(f"{name}={value!r}: {reason}")


class ExtentError(IndexError):
    """A point or a pulled-back grid leaves the stored extent."""


class DegenerateError(ArithmeticError):
    """A normalizing quantity vanishes where the caller required it not to."""


class ConvergenceError(RuntimeError):
    """An iterative procedure stopped before reaching its tolerance."""

    def __init__(self, message: str, residual: float = float("nan"), best=None, diagnostics=None):
        super().__init__(message)
        self.residual = residual
        self.best = best
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class ProblemParams:
    s: float
    a: float
    lambda_plus: float
    lambda_minus: float
    kappa: float = 0.0
    alpha: float = 1.0

    def gauge(self, r):
        """omega(r) = kappa r^alpha."""
        return self.kappa * np.asarray(r, dtype=float) ** self.alpha

    def with_(self, **changes) -> "ProblemParams":
        d = dict(s=self.s, lambda_plus=self.lambda_plus, lambda_minus=self.lambda_minus,
                 kappa=self.kappa, alpha=self.alpha)
        d.update(changes)
        return make_params(**d)


def make_params(s: float, lambda_plus: float = 1.0, lambda_minus: float = 0.0,
                kappa: float = 0.0, alpha: float = 1.0) -> ProblemParams:
    """Validate and build a :class:`ProblemParams`; ``a = 1 - 2s``.

    Raises :class:`DomainError` naming the first offending field.
    """
    checks = [
        ("s", s, 0.0 < s < 1.0, "must lie in (0, 1)"),
        ("lambda_plus", lambda_plus, lambda_plus > 0.0, "must be > 0"),
        ("lambda_minus", lambda_minus, lambda_minus >= 0.0, "must be >= 0"),
        ("kappa", kappa, kappa >= 0.0, "must be >= 0"),
        ("alpha", alpha, 0.0 < alpha <= 1.0, "must lie in (0, 1]"),
    ]
    for name, value, ok, reason in checks:
        if not (isinstance(value, (int, float, np.floating, np.integer)) and math.isfinite(value)):
            raise DomainError(name, value, "must be a finite real")
        if not ok:
            raise DomainError(name, value, reason)
    s = float(s)
    return ProblemParams(s=s, a=1.0 - 2.0 * s, lambda_plus=float(lambda_plus),
                         lambda_minus=float(lambda_minus), kappa=float(kappa), alpha=float(alpha))


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on ``prod_i [-X_i, X_i] x [0, Y]`` with mesh width ``h``.

    ``extent`` holds the half-widths ``(X_1, .., X_n, Y)``; each must be an
    integer multiple of ``h`` (to within 1e-9 relative).
    """
    dim_x: int
    h: float
    extent: tuple

    def __post_init__(self):
        if self.dim_x not in (1, 2):
            raise DomainError("dim_x", self.dim_x, "only n = 1 or n = 2 is supported")
        if not (self.h > 0 and math.isfinite(self.h)):
            raise DomainError("h", self.h, "must be > 0")
        ext = tuple(float(e) for e in self.extent)
        if len(ext) != self.dim_x + 1:
            raise DomainError("extent", self.extent, f"needs {self.dim_x + 1} entries")
        for e in ext:
            k = e / self.h
            if e <= 0 or abs(k - round(k)) > 1e-9 * max(1.0, k):
                raise DomainError("extent", self.extent, "entries must be positive multiples of h")
        object.__setattr__(self, "extent", ext)

    @classmethod
    def box(cls, dim_x: int, h: float, half_width: float, height: float | None = None) -> "GridSpec":
        height = half_width if height is None else height
        return cls(dim_x, h, (half_width,) * dim_x + (height,))

    @property
    def nodes_per_axis(self) -> tuple:
        k = [int(round(e / self.h)) for e in self.extent]
        return tuple(2 * m + 1 for m in k[:-1]) + (k[-1] + 1,)

    @property
    def shape(self) -> tuple:
        return self.nodes_per_axis

    @property
    def ndim(self) -> int:
        return self.dim_x + 1

    def axis_coords(self, axis: int) -> np.ndarray:
        m = self.nodes_per_axis[axis]
        if axis < self.dim_x:
            k = (m - 1) // 2
            return self.h * np.arange(-k, k + 1, dtype=float)
        return self.h * np.arange(m, dtype=float)

    def coords(self) -> list:
        """Broadcast-ready coordinate arrays ``[x_1, .., x_n, y]`` (``np.ix_`` style)."""
        return list(np.ix_(*[self.axis_coords(i) for i in range(self.ndim)]))

    def mesh(self) -> list:
        return np.meshgrid(*[self.axis_coords(i) for i in range(self.ndim)], indexing="ij")

    def origin_index(self) -> tuple:
        return tuple((m - 1) // 2 for m in self.nodes_per_axis[:-1]) + (0,)

    def index_of(self, point: Sequence[float]) -> tuple:
        """Nearest node index of a physical point (y taken as |y|)."""
        point = list(point)
        point[-1] = abs(point[-1])
        idx = []
        for ax, p in enumerate(point):
            c = self.axis_coords(ax)
            i = int(round((p - c[0]) / self.h))
            if i < 0 or i >= c.size:
                raise ExtentError(f"point {tuple(point)} outside grid extent {self.extent}")
            idx.append(i)
        return tuple(idx)

    def contains(self, point: Sequence[float], tol: float = 1e-12) -> bool:
        *x, y = point
        ok = all(abs(xi) <= e + tol for xi, e in zip(x, self.extent[:-1]))
        return ok and abs(y) <= self.extent[-1] + tol


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Node values of an even-in-y extension, stored on ``y >= 0`` only."""
    spec: GridSpec
    values: np.ndarray
    meta: Mapping = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.spec.shape:
            if v.size == int(np.prod(self.spec.shape)):
                v = v.reshape(self.spec.shape)
            else:
                raise DomainError("values", v.shape, f"expected shape {self.spec.shape}")
        if not np.all(np.isfinite(v)):
            raise DomainError("values", "non-finite", "all node values must be finite")
        object.__setattr__(self, "values", _readonly(v))
        object.__setattr__(self, "meta", MappingProxyType(dict(self.meta)))

    @classmethod
    def from_function(cls, spec: GridSpec, func, **meta) -> "ScalarField":
        """Sample ``func(x_1, .., x_n, y)`` (vectorized) on every node."""
        return cls(spec, np.broadcast_to(func(*spec.mesh()), spec.shape), meta)

    def replace(self, values=None, **meta) -> "ScalarField":
        m = dict(self.meta)
        m.update(meta)
        return ScalarField(self.spec, self.values if values is None else values, m)

    @property
    def trace(self) -> np.ndarray:
        """Values on the thin space ``y = 0``."""
        return self.values[..., 0]

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))


def mirror_read(f: ScalarField, i_x: Sequence[int], i_y: int) -> float:
    """Value at ``(i_x, i_y)`` using ``u(x, -y) = u(x, y)`` for negative ``i_y``."""
    i_x = tuple(int(i) for i in np.atleast_1d(i_x))
    shape = f.spec.shape
    if len(i_x) != f.spec.dim_x:
        raise ExtentError(f"expected {f.spec.dim_x} x-indices, got {len(i_x)}")
    j = abs(int(i_y))
    for i, m in zip(i_x + (j,), shape):
        if i < 0 or i >= m:
            raise ExtentError(f"index {i_x + (i_y,)} outside grid of shape {shape}")
    return float(f.values[i_x + (j,)])


@dataclass(frozen=True, eq=False)
class BarrierSpec:
    """Data of ``V_{M, xi', zeta}(x + t e_n, y)`` in the class ``V_mu``.

    For ``n = 1`` the matrix and the tilt are empty and only ``zeta`` acts.
    """
    M: np.ndarray
    xi_prime: np.ndarray
    zeta: float
    t: float = 0.0
    mu: float = MU0

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.M, dtype=float)) if np.size(self.M) else np.zeros((0, 0))
        xi = np.atleast_1d(np.asarray(self.xi_prime, dtype=float)) if np.size(self.xi_prime) else np.zeros(0)
        if M.shape != (xi.size, xi.size):
            raise DomainError("M", M.shape, f"must be {xi.size}x{xi.size} to match xi_prime")
        if not np.allclose(M, M.T, atol=1e-14):
            raise DomainError("M", M.tolist(), "must be symmetric")
        mu = float(self.mu)
        if not 0 < mu <= MU0 + 1e-15:
            raise DomainError("mu", mu, f"must lie in (0, {MU0}]")
        tol = 1e-12 * mu
        normM = float(np.linalg.norm(M, 2)) if M.size else 0.0
        if normM > mu + tol:
            raise DomainError("M", normM, f"||M|| exceeds mu={mu}")
        if float(np.linalg.norm(xi)) > mu + tol:
            raise DomainError("xi_prime", float(np.linalg.norm(xi)), f"|xi'| exceeds mu={mu}")
        if abs(self.zeta) > mu + tol:
            raise DomainError("zeta", self.zeta, f"|zeta| exceeds mu={mu}")
        object.__setattr__(self, "M", _readonly(M))
        object.__setattr__(self, "xi_prime", _readonly(xi))
        object.__setattr__(self, "zeta", float(self.zeta))
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "mu", mu)

    @classmethod
    def trivial(cls, n: int = 2, mu: float = MU0, t: float = 0.0) -> "BarrierSpec":
        return cls(np.zeros((n - 1, n - 1)), np.zeros(n - 1), 0.0, t, mu)

    @property
    def n(self) -> int:
        return self.xi_prime.size + 1

    @property
    def trace_M(self) -> float:
        return float(np.trace(self.M)) if self.M.size else 0.0

    def graph(self, xp: np.ndarray) -> np.ndarray:
        """g(x') = xi'.x' + x'^T M x' / 2 for ``xp`` of shape (..., n-1)."""
        if self.xi_prime.size == 0:
            return np.zeros(np.shape(xp)[:-1])
        return xp @ self.xi_prime + 0.5 * np.einsum("...i,ij,...j->...", xp, self.M, xp)

    def condition(self, s: float) -> float:
        """zeta/(1 - a) - tr M, whose sign selects sub- or supersolution."""
        return self.zeta / (2.0 * s) - self.trace_M


@dataclass
class AnalysisReport:
    """Named scalar metrics plus verdicts, each verdict tied to its margin.

    ``rows`` optionally holds per-sample/per-scale records (list of dicts)
    used by the CSV writers.
    """
    name: str
    metrics: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)
    margins: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def verdict(self, key: str, ok: bool, margin: float) -> bool:
        self.verdicts[key] = bool(ok)
        self.margins[key] = float(margin)
        return bool(ok)

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def summary(self) -> str:
        lines = [f"[{self.name}]"]
        lines += [f"{k}={_fmt(v)}" for k, v in self.metrics.items()]
        lines += [f"verdict.{k}={'pass' if ok else 'fail'} margin={_fmt(self.margins.get(k))}"
                  for k, ok in self.verdicts.items()]
        lines += [f"note={n}" for n in self.notes]
        return "\n".join(lines)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


# --- binary field dump -----------------------------------------------------

def dumps_field(f: ScalarField) -> bytes:
    """Serialize: magic, u32 dim_x, u32 per-axis counts, f64 h, f64 s, f64 values.

    All little-endian; values in C (row-major) order over the stored
    ``y >= 0`` half.  ``s`` comes from ``f.meta['s']`` (NaN when absent).
    """
    spec = f.spec
    s = float(f.meta.get("s", float("nan")))
    head = FIELD_MAGIC + struct.pack("<I", spec.dim_x)
    head += struct.pack(f"<{spec.ndim}I", *spec.nodes_per_axis)
    head += struct.pack("<dd", spec.h, s)
    return head + np.ascontiguousarray(f.values, dtype="<f8").tobytes()


def loads_field(buf: bytes) -> ScalarField:
    if buf[:16] != FIELD_MAGIC:
        raise DomainError("magic", buf[:16], "not a THINFRAC field dump")
    (dim_x,) = struct.unpack_from("<I", buf, 16)
    counts = struct.unpack_from(f"<{dim_x + 1}I", buf, 20)
    off = 20 + 4 * (dim_x + 1)
    h, s = struct.unpack_from("<dd", buf, off)
    off += 16
    n = int(np.prod(counts))
    if len(buf) - off != 8 * n:
        raise DomainError("payload", len(buf) - off, f"expected {8 * n} bytes of node values")
    vals = np.frombuffer(buf, dtype="<f8", count=n, offset=off).reshape(counts)
    ext = tuple(h * (c - 1) / 2 for c in counts[:-1]) + (h * (counts[-1] - 1),)
    spec = GridSpec(dim_x, h, ext)
    meta = {} if math.isnan(s) else {"s": s}
    return ScalarField(spec, vals.astype(float), meta)


def save_field(path, f: ScalarField) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps_field(f))


def load_field(path) -> ScalarField:
    with open(path, "rb") as fh:
        return loads_field(fh.read())
