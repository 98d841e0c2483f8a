import math
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from thinfrac.core_types import (FIELD_MAGIC, AnalysisReport, BarrierSpec, DomainError, ExtentError, GridSpec,
                                 ScalarField, dumps_field, load_field, loads_field, make_params, mirror_read,
                                 save_field)
from thinfrac.regions import ball_mask, box_mask, full_mask, interior_mask, thin_mask, tube_mask


@st.composite
def grids(draw):
    n = draw(st.integers(1, 2))
    k = draw(st.integers(2, 6 if n == 2 else 12))
    h = 1.0 / draw(st.sampled_from([2, 4, 8]))
    ext = tuple(h * draw(st.integers(1, k)) for _ in range(n + 1))
    return GridSpec(n, h, ext)


@st.composite
def fields(draw):
    spec = draw(grids())
    v = draw(arrays(np.float64, spec.shape, elements=st.floats(-1e6, 1e6, allow_nan=False)))
    return ScalarField(spec, v, {"s": draw(st.floats(0.01, 0.99))})


# --- params ----------------------------------------------------------------------

@pytest.mark.parametrize("kw,name", [
    ({"s": 0.0}, "s"), ({"s": 1.0}, "s"), ({"s": float("nan")}, "s"),
    ({"s": 0.5, "lambda_plus": 0.0}, "lambda_plus"), ({"s": 0.5, "lambda_minus": -1.0}, "lambda_minus"),
    ({"s": 0.5, "kappa": -0.1}, "kappa"), ({"s": 0.5, "alpha": 0.0}, "alpha"),
    ({"s": 0.5, "alpha": 1.5}, "alpha"), ({"s": 0.5, "lambda_plus": math.inf}, "lambda_plus"),
])
def test_make_params_rejects(kw, name):
    with pytest.raises(DomainError) as e:
        make_params(**kw)
    assert e.value.name == name


@given(st.floats(0.001, 0.999))
def test_weight_exponent(s):
    p = make_params(s)
    assert p.a == pytest.approx(1 - 2 * s)
    assert p.with_(kappa=2.0).kappa == 2.0 and p.with_(kappa=2.0).s == p.s


def test_gauge():
    p = make_params(0.5, kappa=0.3, alpha=0.5)
    assert p.gauge(0.25) == pytest.approx(0.15)


# --- grids -----------------------------------------------------------------------

def test_grid_validation():
    with pytest.raises(DomainError):
        GridSpec(3, 0.1, (1, 1, 1, 1))
    with pytest.raises(DomainError):
        GridSpec(1, 0.3, (1.0, 1.0))
    with pytest.raises(DomainError):
        GridSpec(1, -1.0, (1.0, 1.0))
    with pytest.raises(DomainError):
        GridSpec(1, 0.25, (1.0,))


@given(grids())
def test_grid_shape_and_origin(spec):
    assert spec.shape == spec.nodes_per_axis
    idx = spec.origin_index()
    pt = [spec.axis_coords(k)[i] for k, i in enumerate(idx)]
    assert np.allclose(pt, 0.0)
    assert spec.index_of(np.zeros(spec.ndim)) == idx
    with pytest.raises(ExtentError):
        spec.index_of([e + 2 * spec.h for e in spec.extent])


def test_field_shape_and_finite():
    spec = GridSpec.box(1, 0.5, 1.0)
    with pytest.raises(DomainError):
        ScalarField(spec, np.zeros((2, 2)))
    with pytest.raises(DomainError):
        ScalarField(spec, np.full(spec.shape, np.nan))
    f = ScalarField(spec, np.ones(spec.shape))
    with pytest.raises(ValueError):
        f.values[0, 0] = 2.0


def test_mirror_read():
    spec = GridSpec.box(1, 0.5, 1.0)
    f = ScalarField.from_function(spec, lambda x, y: x + 10 * y)
    assert mirror_read(f, [1], -2) == mirror_read(f, [1], 2) == f.values[1, 2]
    with pytest.raises(ExtentError):
        mirror_read(f, [9], 0)
    with pytest.raises(ExtentError):
        mirror_read(f, [0, 0], 0)


# --- binary dumps ----------------------------------------------------------------

@given(fields())
def test_dump_roundtrip(f):
    g = loads_field(dumps_field(f))
    assert g.spec == f.spec
    assert np.array_equal(g.values, f.values)
    assert g.meta["s"] == f.meta["s"]


def test_dump_layout(tmp_path):
    spec = GridSpec.box(1, 0.5, 1.0)
    f = ScalarField(spec, np.arange(15.0).reshape(5, 3), {"s": 0.25})
    buf = dumps_field(f)
    assert buf[:16] == FIELD_MAGIC
    assert struct.unpack_from("<I2I", buf, 16) == (1, 5, 3)
    assert struct.unpack_from("<dd", buf, 28) == (0.5, 0.25)
    assert np.array_equal(np.frombuffer(buf, "<f8", offset=44), np.arange(15.0))
    save_field(tmp_path / "a.bin", f)
    assert np.array_equal(load_field(tmp_path / "a.bin").values, f.values)


def test_dump_rejects_garbage():
    spec = GridSpec.box(1, 0.5, 1.0)
    buf = dumps_field(ScalarField(spec, np.zeros(spec.shape)))
    with pytest.raises(DomainError):
        loads_field(b"X" * len(buf))
    with pytest.raises(DomainError):
        loads_field(buf[:-8])


# --- barrier specs and reports ---------------------------------------------------

def test_barrier_spec_bounds():
    BarrierSpec.trivial(2)
    with pytest.raises(DomainError):
        BarrierSpec(np.array([[0.2]]), np.array([0.0]), 0.0, 0.0, 0.1)
    with pytest.raises(DomainError):
        BarrierSpec(np.array([[0.0]]), np.array([0.0]), 0.5, 0.0, 0.1)
    with pytest.raises(DomainError):
        BarrierSpec(np.array([[0.0]]), np.array([0.0]), 0.0, 0.0, 0.5)
    bs = BarrierSpec(np.array([[0.05]]), np.array([0.0]), 0.04, 0.0, 0.1)
    # cond = zeta/(1-a) - tr M with 1 - a = 2s
    assert bs.condition(0.5) == pytest.approx(0.04 - 0.05)


def test_report_verdicts():
    rep = AnalysisReport("x")
    rep.verdict("a", True, 1.0)
    assert rep.passed
    rep.verdict("b", False, -1.0)
    assert not rep.passed
    assert "b" in rep.summary()


# --- regions ---------------------------------------------------------------------

@given(grids(), st.floats(0.1, 2.0))
def test_ball_in_box(spec, r):
    b = ball_mask(spec, None, r)
    lo = [-r] * spec.dim_x + [0.0]
    assert not np.any(b & ~box_mask(spec, lo, [r] * spec.ndim))
    assert np.all(interior_mask(b) <= b)


def test_interior_of_full_grid():
    spec = GridSpec.box(1, 0.25, 1.0)
    inner = interior_mask(full_mask(spec))
    # thin nodes count as interior (reflection), the outer faces never do
    assert inner[1:-1, 0].all() and not inner[0].any() and not inner[:, -1].any()
    assert thin_mask(spec).sum() == spec.shape[0]
    assert tube_mask(spec, 0.3).sum() == 3 + 1
