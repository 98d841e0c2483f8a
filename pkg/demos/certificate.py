"""Almost-minimality certificates: a computed minimizer passes and a gauge-perturbed copy fails.

On every ball B_r(x0) the certificate compares J(u) with the energy of a few
competitors sharing u's boundary values.  The smallest kappa with
J(u) <= (1 + kappa r^alpha) J(v) is reported.  Run: python demos/certificate.py
"""
import numpy as np

from thinfrac.core_types import GridSpec, make_params
from thinfrac.energy import certificate_csv, certify_almost_min
from thinfrac.minimizer import boundary_preset, calibrate_lambda, inject_gauge_noise, minimize_energy

s, h, kappa = 0.5, 1 / 64, 0.5
spec = GridSpec.box(1, h, 1.0)
p = make_params(s, calibrate_lambda(s, h), kappa=kappa, alpha=0.5)
centers, radii = [[0.0], [0.25], [-0.25]], [0.125, 0.25, 0.5]

u = minimize_energy(boundary_preset("U", spec, s), p)
rep = certify_almost_min(u, p, centers, radii)
print(f"minimizer:       kappa_min = {rep.metrics['kappa_min']:.3e}   passes kappa = {kappa}: {rep.passed}")

cont = u.meta["J_continuation"]
print(f"                 J after continuation {cont:.6f}, after pattern polish {u.meta['J']:.6f}")

# smooth bumps supported away from the free boundary, scaled to a 50x budget
noisy = inject_gauge_noise(u, p.with_(kappa=50 * kappa), seed=3, amplitude=1.0)
bad = certify_almost_min(noisy, p, centers, radii)
print(f"perturbed copy:  kappa_min = {bad.metrics['kappa_min']:.3e}   passes kappa = {kappa}: {bad.passed}")

worst = max(bad.rows, key=lambda r: r["kappa_min"])
print(f"\nworst ball: center {worst['center'][0]:+.3f}, r = {worst['r']}, competitor {worst['competitor']}")
print("\nfirst rows of the certificate CSV:")
print("\n".join(certificate_csv(rep).splitlines()[:6]))
