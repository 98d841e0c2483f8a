"""Minimize the energy with the trace of U as boundary data and watch U come back.

U(x, y) = ((rho + x)/2)^s is the one-dimensional global minimizer.  Using
its values on the unit half ball as data, the discrete minimizer should
match it up to discretization error and grow like r^s away from its free
boundary point.  Run: python demos/recover_U.py [h]
"""
import sys
import time

import numpy as np

from thinfrac.barriers import U_xy
from thinfrac.core_types import GridSpec, make_params
from thinfrac.fb_analysis import extract_fb, growth_exponent
from thinfrac.minimizer import boundary_preset, calibrate_lambda, minimize_energy
from thinfrac.regions import ball_mask

h = float(sys.argv[1]) if len(sys.argv) > 1 else 1 / 64
spec = GridSpec.box(1, h, 1.0)
x, y = spec.mesh()
half = ball_mask(spec, None, 0.5)

print(f"grid {spec.shape[0]} x {spec.shape[1]} nodes, h = {h:g}\n")
print("   s   lambda     sup|u-U| on B_1/2   growth exponent   fb point   seconds")
for s in (0.25, 0.5, 0.75):
    # lambda is picked so that translating U does not change the discrete energy
    lam = calibrate_lambda(s, h)
    t = time.perf_counter()
    u = minimize_energy(boundary_preset("U", spec, s), make_params(s, lam))
    dt = time.perf_counter() - t
    err = np.max(np.abs(u.values - U_xy(x, y, s))[half])
    radii = [0.5 / 2 ** k for k in range(4)]
    beta = growth_exponent(u, [0.0], radii)[0]
    fb = extract_fb(u).plus_points[:, 0]
    print(f"{s:5.2f}  {lam:7.4f}   {err:17.4f}   {beta:15.3f}   {fb[np.argmin(np.abs(fb))]:8.4f}   {dt:7.1f}")

print("\nThe error shrinks with h (try h = 1/128), and the slope of log sup u+ against")
print("log r approaches s.")
