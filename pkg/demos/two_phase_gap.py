"""Two-phase minimizers keep their phases apart.

The two-phase preset has odd boundary data, positive on the right and
negative on the left.  With both phase weights equal to the calibrated
lambda, the minimizer leaves a zero band on the thin space between the
two free boundaries.  The band width is stable under refinement.
Run: python demos/two_phase_gap.py
"""
import time

from thinfrac.core_types import GridSpec, make_params
from thinfrac.fb_analysis import extract_fb, separation_gap
from thinfrac.minimizer import boundary_preset, calibrate_lambda, minimize_energy

s = 0.5
print("     h      F+ nearest 0   F- nearest 0      gap     gap/h   seconds")
for h in (1 / 32, 1 / 64, 1 / 128):
    lam = calibrate_lambda(s, h)
    spec = GridSpec.box(1, h, 1.0)
    t = time.perf_counter()
    u = minimize_energy(boundary_preset("two-phase", spec, s), make_params(s, lam, lam))
    dt = time.perf_counter() - t
    fb = extract_fb(u)
    gp, gm = fb.plus_points[:, 0], fb.minus_points[:, 0]
    gap = separation_gap(fb)
    print(f"{h:9.6f}   {gp[abs(gp).argmin()]:+12.5f}   {gm[abs(gm).argmin()]:+12.5f}   {gap:8.5f}  {gap / h:6.1f}"
          f"   {dt:7.1f}")

print("\nThe gap is an O(1) length, not a few cells: it does not shrink with h.")
