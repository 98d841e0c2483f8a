"""Command-line experiment runner.

    thinfrac <subcommand> [key=value ...] [--config FILE]

Config files hold one ``key=value`` per line with ``#`` comments; values on
the command line override the file.  Every output file starts with a
``#`` header echoing the effective config and the library version.

Exit codes: 0 ok, 1 parse error, 2 precondition error, 3 solver
non-convergence, 4 a check failed.
"""
from __future__ import annotations

import csv
import io
import math
import os
import sys
from pathlib import Path

SUBCOMMANDS = ("minimize", "certify", "barrier", "hodograph", "analyze", "refine")

COMMON = {
    "s": "0.5",
    "n": "1",
    "h": "0.015625",
    "extent": "1.0",
    "lambda_plus": "auto",      # auto: calibrated so that U is discretely stationary
    "lambda_minus": "default",  # default: lambda_plus for the two-phase preset, else 0; auto: lambda_plus
    "kappa": "0.1",
    "alpha": "0.5",
    "seed": "0",
    "out": "thinfrac_run",
    "threads": "",
}

DEFAULTS = {
    "minimize": {"preset": "U", "tilt": "0", "nu": "", "input": "", "eps0": "0.25", "factor": "0.5",
                 "eps_min": "auto", "inner_tol": "1e-8", "max_outer": "40", "checkpoint": "", "resume": ""},
    "certify": {"input": "", "centers": "0", "radii": "0.125,0.25,0.5",
                "competitors": "harmonic_replacement,positive_truncation,barrier_min"},
    "barrier": {"mu": "0.05", "case": "sub", "count": "20", "points": "10000", "delta_fb": "0.01"},
    "hodograph": {"input": "", "eps": "auto", "mu": "0.05", "zeta": "", "r_cut": "auto"},
    "analyze": {"input": "", "x0": "auto", "radii": "0.0625,0.125,0.25,0.5", "eta": "0.5",
                "flat_radii": "0.5,0.25,0.125", "c_min": "0.05", "h3_points": "200"},
    "refine": {"sub": "minimize", "levels": "3"},
}


class ParseError(Exception):
    pass


def version() -> str:
    from . import __version__

    return __version__


# --- configuration ------------------------------------------------------------------

def parse_lines(lines, source: str) -> dict:
    out = {}
    for k, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{source}:{k}: expected key=value, got {line!r}")
        key, val = (t.strip() for t in line.split("=", 1))
        if not key:
            raise ParseError(f"{source}:{k}: empty key in {line!r}")
        out[key] = val
    return out


def build_config(argv) -> tuple:
    if not argv:
        raise ParseError(f"missing subcommand (one of {', '.join(SUBCOMMANDS)})")
    sub, rest = argv[0], list(argv[1:])
    if sub not in SUBCOMMANDS:
        raise ParseError(f"unknown subcommand {sub!r}")
    file_cfg, cli_cfg = {}, {}
    i = 0
    while i < len(rest):
        tok = rest[i]
        if tok == "--config":
            if i + 1 >= len(rest):
                raise ParseError("--config needs a path")
            path = Path(rest[i + 1])
            if not path.exists():
                raise ParseError(f"config file {str(path)!r} not found")
            file_cfg.update(parse_lines(path.read_text().splitlines(), str(path)))
            i += 2
            continue
        if tok.startswith("--") and "=" in tok:
            tok = tok[2:]
        if "=" not in tok:
            raise ParseError(f"malformed token {tok!r} (expected key=value)")
        cli_cfg.update(parse_lines([tok], "argv"))
        i += 1
    cfg = dict(COMMON)
    cfg.update(DEFAULTS[sub])
    if sub == "refine":
        inner = cli_cfg.get("sub", file_cfg.get("sub", "minimize"))
        if inner not in SUBCOMMANDS or inner == "refine":
            raise ParseError(f"refine: bad sub {inner!r}")
        if inner in ("certify", "analyze"):
            cfg.update(DEFAULTS["minimize"])
        cfg.update(DEFAULTS[inner])
    for src in (file_cfg, cli_cfg):
        for k, v in src.items():
            if k not in cfg:
                raise ParseError(f"unknown key {k!r}")
            cfg[k] = v
    return sub, cfg


def fnum(cfg, key) -> float:
    try:
        return float(cfg[key])
    except ValueError:
        raise ParseError(f"key {key}: {cfg[key]!r} is not a number") from None


def inum(cfg, key) -> int:
    try:
        return int(cfg[key])
    except ValueError:
        raise ParseError(f"key {key}: {cfg[key]!r} is not an integer") from None


def flist(cfg, key) -> list:
    try:
        return [float(t) for t in cfg[key].replace(";", ",").split(",") if t.strip()]
    except ValueError:
        raise ParseError(f"key {key}: {cfg[key]!r} is not a list of numbers") from None


def points(cfg, key, n) -> list:
    """``"0;0.25"`` (n = 1) or ``"0 0;0.25 0"`` (n = 2)."""
    out = []
    for chunk in cfg[key].split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            v = [float(t) for t in chunk.replace(",", " ").split()]
        except ValueError:
            raise ParseError(f"key {key}: bad point {chunk!r}") from None
        if len(v) != n:
            raise ParseError(f"key {key}: point {chunk!r} needs {n} coordinates")
        out.append(v)
    return out


def header(sub: str, cfg: dict) -> str:
    lines = [f"# thinfrac {version()} {sub}"]
    lines += [f"# {k}={cfg[k]}" for k in sorted(cfg)]
    return "\n".join(lines) + "\n"


def write_csv(path: Path, sub: str, cfg: dict, columns, rows) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(row.get(c, "")) for c in columns])
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(header(sub, cfg))
        fh.write(buf.getvalue())
    return path


def fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return " ".join(fmt(x) for x in v)
    try:
        import numpy as np

        if isinstance(v, np.floating):
            return repr(float(v))
        if isinstance(v, np.ndarray):
            return " ".join(fmt(float(x)) for x in v.ravel())
    except ImportError:
        pass
    return str(v)


def read_csv_body(path) -> list:
    """Rows of a CSV written by this module, header block skipped."""
    with open(path) as fh:
        body = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(body))


# --- shared setup -------------------------------------------------------------------

def params(cfg, preset: str | None = None, field=None):
    """Problem parameters; with ``field`` the mesh width comes from its grid."""
    from .core_types import make_params
    from .minimizer import calibrate_lambda

    s = fnum(cfg, "s")
    h = fnum(cfg, "h") if field is None else field.spec.h
    if field is not None and "s" in field.meta and math.isfinite(field.meta["s"]) and field.meta["s"] != s:
        raise ValueError(f"field was computed with s={field.meta['s']!r}, config has s={s!r}")
    lp = calibrate_lambda(s, h) if cfg["lambda_plus"] == "auto" else fnum(cfg, "lambda_plus")
    lm = cfg["lambda_minus"]
    if lm == "default":
        lm = lp if preset == "two-phase" else 0.0
    elif lm == "auto":
        lm = lp
    else:
        lm = fnum(cfg, "lambda_minus")
    return make_params(s, lp, lm, fnum(cfg, "kappa"), fnum(cfg, "alpha"))


def grid(cfg):
    from .core_types import GridSpec

    return GridSpec.box(inum(cfg, "n"), fnum(cfg, "h"), fnum(cfg, "extent"))


def load_input(cfg):
    from .core_types import load_field

    if not cfg["input"]:
        raise FileNotFoundError("key input: a field dump is required")
    f = load_field(cfg["input"])
    # the header echoes the grid actually used
    cfg["h"], cfg["n"] = repr(f.spec.h), str(f.spec.dim_x)
    return f


def out_path(cfg, suffix) -> Path:
    return Path(cfg["out"] + suffix)


# --- subcommands --------------------------------------------------------------------

def cmd_minimize(cfg) -> dict:
    import numpy as np

    from .core_types import save_field
    from .energy import energy
    from .minimizer import ContinuationSchedule, boundary_preset, minimize_energy
    from .regions import ball_mask

    spec = grid(cfg)
    preset = cfg["preset"]
    p = params(cfg, preset)
    nu = flist(cfg, "nu") or None
    b = boundary_preset(preset, spec, p.s, tilt=fnum(cfg, "tilt"), nu=nu, path=cfg["input"] or None)
    eps_min = None if cfg["eps_min"] == "auto" else fnum(cfg, "eps_min")
    sched = ContinuationSchedule(fnum(cfg, "eps0"), fnum(cfg, "factor"), eps_min, fnum(cfg, "inner_tol"),
                                 inum(cfg, "max_outer"))
    region = ball_mask(spec, None, min(spec.extent))
    u = minimize_energy(b, p, region, sched, checkpoint=cfg["checkpoint"] or None, resume=cfg["resume"] or None)
    save_field(out_path(cfg, ".field.bin"), u)
    e = energy(u, p, region)
    row = {"dirichlet": e.dirichlet, "phase_plus": e.phase_plus, "phase_minus": e.phase_minus,
           "total": e.total, "lambda_plus": p.lambda_plus, "lambda_minus": p.lambda_minus,
           "outer": u.meta["outer"], "toggles": u.meta.get("toggles", 0),
           "J_continuation": u.meta.get("J_continuation", e.total)}
    write_csv(out_path(cfg, ".energy.csv"), "minimize", cfg, list(row), [row])
    return {"metric": e.total, "ok": True}


def cmd_certify(cfg) -> dict:
    from .energy import certificate_csv, certify_almost_min

    f = load_input(cfg)
    p = params(cfg, field=f)
    rep = certify_almost_min(f, p, points(cfg, "centers", f.spec.dim_x), flist(cfg, "radii"),
                             [c.strip() for c in cfg["competitors"].split(",") if c.strip()])
    path = out_path(cfg, ".certify.csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(header("certify", cfg))
        fh.write(certificate_csv(rep))
    return {"metric": rep.metrics["kappa_min"], "ok": rep.passed}


def cmd_barrier(cfg) -> dict:
    import numpy as np

    from .barriers import certify_subsolution, random_admissible, sample_B2_plus

    s, n = fnum(cfg, "s"), max(inum(cfg, "n"), 2)
    mu = fnum(cfg, "mu")
    case = cfg["case"]
    if case not in ("sub", "super"):
        raise ParseError(f"key case: {case!r} (use sub or super)")
    rng = np.random.default_rng(inum(cfg, "seed"))
    rows, ok_all, margin = [], True, math.inf
    for k in range(inum(cfg, "count")):
        bs = (random_admissible(n, mu, rng, cond_min=mu, s=s) if case == "sub"
              else random_admissible(n, mu, rng, cond_max=-mu, s=s))
        X = sample_B2_plus(n, inum(cfg, "points"), inum(cfg, "seed") + k, bs, fnum(cfg, "delta_fb"))
        rep = certify_subsolution(bs, s, X, fnum(cfg, "delta_fb"))
        m = rep.metrics["min_ratio"] if case == "sub" else -rep.metrics["max_ratio"]
        margin = min(margin, m)
        ok_all &= rep.passed
        rows.append({"index": k, "mu": mu, "condition": rep.metrics["condition"],
                     "min_ratio": rep.metrics["min_ratio"], "max_ratio": rep.metrics["max_ratio"],
                     "margin": m, "verdict": "pass" if rep.passed else "fail"})
    write_csv(out_path(cfg, ".barrier.csv"), "barrier", cfg, list(rows[0]) if rows else ["index"], rows)
    return {"metric": margin, "ok": ok_all}


def linearized_residual(ut, p, r_cut: float, valid=None) -> float:
    """``max |div(U_n^2 |y|^a grad ut)|`` on interior nodes away from the tube and invalid nodes."""
    import numpy as np

    from .regions import full_mask, interior_mask, tube_mask
    from .weighted_operator import linearized_weights, stiffness_matrix

    spec = ut.spec
    L = stiffness_matrix(linearized_weights(spec, p), full_mask(spec))
    r = (L @ np.ravel(ut.values)).reshape(spec.shape) / spec.h ** 2
    m = interior_mask(full_mask(spec)) & ~tube_mask(spec, r_cut)
    m[..., 0] = False
    if valid is not None:
        v = np.asarray(valid, dtype=bool)
        # all stencil neighbours valid too
        m &= interior_mask(v) if v.any() else v
    return float(np.max(np.abs(r[m]))) if m.any() else 0.0


def cmd_hodograph(cfg) -> dict:
    import numpy as np

    from .barriers import hodograph_of_V, hodograph_of_field
    from .core_types import BarrierSpec, ScalarField, save_field
    from .fb_analysis import flatness

    spec = grid(cfg)
    r_cut = 4 * spec.h if cfg["r_cut"] == "auto" else fnum(cfg, "r_cut")
    if cfg["input"]:
        f = load_input(cfg)
        spec = f.spec
        p = params(cfg, field=f)
        if cfg["eps"] == "auto":
            eps = flatness(f, p, np.zeros(spec.dim_x), 0.5 * min(spec.extent))[0]
            eps = max(eps, 2 * spec.h) if math.isfinite(eps) else 0.5
        else:
            eps = fnum(cfg, "eps")
        ut = hodograph_of_field(f, p, eps)
        valid = ut.meta["valid"]
    else:
        p = params(cfg)
        mu = fnum(cfg, "mu")
        if spec.dim_x != 2:
            raise ValueError("the barrier hodograph needs n = 2")
        zeta = fnum(cfg, "zeta") if cfg["zeta"] else mu
        bs = BarrierSpec(np.zeros((1, 1)), np.zeros(1), zeta, 0.0, mu)
        X = np.stack(spec.mesh(), axis=-1).reshape(-1, spec.ndim)
        inside = np.linalg.norm(X, axis=1) <= 1.0
        vals = np.zeros(len(X))
        vals[inside] = hodograph_of_V(X[inside], bs, p.s)
        ut = ScalarField(spec, vals.reshape(spec.shape), {"s": p.s})
        valid = inside.reshape(spec.shape)
        eps = mu
    save_field(out_path(cfg, ".hodograph.bin"), ut)
    res = linearized_residual(ut, p, r_cut, valid)
    row = {"eps": eps, "r_cut": r_cut, "residual": res, "valid_nodes": int(np.count_nonzero(valid))}
    write_csv(out_path(cfg, ".hodograph.csv"), "hodograph", cfg, list(row), [row])
    return {"metric": res, "ok": True}


def cmd_analyze(cfg) -> dict:
    import numpy as np

    from .core_types import DomainError
    from .energy import caccioppoli_fit
    from .fb_analysis import (check_H3, extract_fb, flatness_decay, growth_exponent, nondegeneracy,
                              separation_gap)

    f = load_input(cfg)
    spec = f.spec
    p = params(cfg, field=f)
    fb = extract_fb(f)
    if cfg["x0"] == "auto":
        if len(fb.plus_points) == 0:
            raise ValueError("no free boundary point found for x0=auto")
        x0 = fb.plus_points[np.argmin(np.linalg.norm(fb.plus_points, axis=1))]
    else:
        x0 = np.asarray(points(cfg, "x0", spec.dim_x)[0])
    radii = flist(cfg, "radii")
    rows, ok = [], True

    def add(check, key, value, verdict=""):
        rows.append({"check": check, "key": key, "value": value, "verdict": verdict})

    beta, C, resid = growth_exponent(f, x0, radii)
    add("growth", "exponent", beta)
    add("growth", "constant", C)
    add("growth", "residual", resid)
    nd = nondegeneracy(f, p, x0, radii)
    add("nondegeneracy", "c", nd.metrics["c"], "pass" if nd.passed else "fail")
    ok &= nd.passed
    add("separation", "gap", separation_gap(fb))
    if np.min(f.values) >= -1e-12 * f.sup_norm():
        rng = np.random.default_rng(inum(cfg, "seed"))
        R = 0.5 * min(spec.extent)
        k = inum(cfg, "h3_points")
        pts = np.column_stack([rng.uniform(-R, R, (k, spec.dim_x)), rng.uniform(2 * spec.h, R, k)])
        pts[:, :-1] += x0
        h3 = check_H3(f, p, pts, fnum(cfg, "c_min"))
        add("H3", "inf_ratio", h3.metrics["inf_ratio"], "pass" if h3.passed else "fail")
        ok &= h3.passed
    # the half ball must hold a few cells: same 8h cutoff as the flatness scales
    cac_radii = [r for r in radii if 8 * spec.h <= r <= 0.5 * min(spec.extent)][:3]
    if len(cac_radii) >= 2:
        cac = caccioppoli_fit(f, p, x0, cac_radii)
        add("caccioppoli", "C1", cac.metrics["C1"])
        add("caccioppoli", "C2", cac.metrics["C2"])
        add("caccioppoli", "C2_spread", cac.metrics["C2_spread"], "pass" if cac.passed else "fail")
        ok &= cac.passed
    else:
        add("caccioppoli", "C2_spread", float("nan"), "excluded: fewer than 2 radii >= 8h")
    try:
        fd = flatness_decay(f, p, x0, flist(cfg, "flat_radii"), fnum(cfg, "eta"))
    except DomainError as e:
        add("flatness_decay", "gamma", float("nan"), f"excluded: {e.reason}")
        write_csv(out_path(cfg, ".analyze.csv"), "analyze", cfg, ["check", "key", "value", "verdict"], rows)
        return {"metric": beta, "ok": ok}
    for row in fd.rows:
        add("flatness", f"eps(r={row['r']!r})", row["eps"])
    status = fd.metrics.get("status", "")
    add("flatness_decay", "gamma", fd.metrics.get("gamma", float("nan")),
        status if status == "hypothesis not met" else ("pass" if fd.passed else "fail"))
    if status != "hypothesis not met":
        ok &= fd.passed
    write_csv(out_path(cfg, ".analyze.csv"), "analyze", cfg, ["check", "key", "value", "verdict"], rows)
    return {"metric": beta, "ok": ok}


def cmd_refine(cfg) -> dict:
    sub = cfg["sub"]
    if sub in ("certify", "analyze") and cfg.get("input"):
        raise ValueError("refine re-runs the pipeline from presets; drop key input")
    h0 = fnum(cfg, "h")
    rows = []
    for k in range(inum(cfg, "levels")):
        c = dict(cfg)
        c["h"] = repr(h0 / 2 ** k)
        c["out"] = f"{cfg['out']}.h{k}"
        if sub in ("certify", "analyze"):
            cmd_minimize(c | {"input": ""})
            c["input"] = c["out"] + ".field.bin"
        res = RUNNERS[sub](c)
        rows.append({"h": h0 / 2 ** k, "metric": res["metric"]})
    for k, row in enumerate(rows):
        row["order"] = float("nan")
        if k >= 2:
            d1 = rows[k - 2]["metric"] - rows[k - 1]["metric"]
            d2 = rows[k - 1]["metric"] - row["metric"]
            if d1 != 0 and d2 != 0:
                row["order"] = math.log2(abs(d1 / d2))
    write_csv(out_path(cfg, ".refine.csv"), "refine", cfg, ["h", "metric", "order"], rows)
    return {"metric": rows[-1]["metric"], "ok": True}


RUNNERS = {"minimize": cmd_minimize, "certify": cmd_certify, "barrier": cmd_barrier,
           "hodograph": cmd_hodograph, "analyze": cmd_analyze, "refine": cmd_refine}


def thread_count(cfg) -> int:
    raw = cfg.get("threads") or os.environ.get("THINFRAC_THREADS", "")
    if not raw:
        return os.cpu_count() or 1
    try:
        k = int(raw)
    except ValueError:
        raise ParseError(f"threads: {raw!r} is not an integer") from None
    if k < 1:
        raise ParseError(f"threads: {k} must be >= 1")
    return k


def run(argv) -> int:
    try:
        sub, cfg = build_config(argv)
        k = thread_count(cfg)
        cfg["threads"] = str(k)
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, str(k))
    except ParseError as e:
        print(f"thinfrac: parse error: {e}", file=sys.stderr)
        return 1
    from .core_types import ConvergenceError, DegenerateError, DomainError, ExtentError

    try:
        res = RUNNERS[sub](cfg)
    except ParseError as e:
        print(f"thinfrac: parse error: {e}", file=sys.stderr)
        return 1
    except ConvergenceError as e:
        print(f"thinfrac: solver did not converge: {e}", file=sys.stderr)
        return 3
    except (DomainError, ExtentError, DegenerateError, FileNotFoundError, ValueError) as e:
        print(f"thinfrac: precondition failed: {e}", file=sys.stderr)
        return 2
    if not res["ok"]:
        print(f"thinfrac: {sub}: check failed (metric {res['metric']!r})", file=sys.stderr)
        return 4
    print(f"thinfrac: {sub}: ok (metric {res['metric']!r})")
    return 0


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
