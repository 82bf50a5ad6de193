"""Growth vectors of a few rank-2 frames and the prolongation of two Cartan models.

Run: python3 demos/01_growth_and_prolongation.py
"""

import numpy as np

from cartangeo import CartanModel, derived_flag, is_cartan, prolong
from cartangeo.models import engel_padded, free_nilpotent_235, heisenberg, involutive_r5, monge_perturbed

print("growth vectors at the origin (exact rational rank)")
for name, ctor in [("M5", free_nilpotent_235), ("Heisenberg", heisenberg),
                   ("Engel x R", engel_padded), ("involutive", involutive_r5)]:
    chart, frame = ctor()
    flag = derived_flag(frame, (0,) * chart.dim)
    cartan = chart.dim == 5 and is_cartan(frame, (0,) * 5)
    print(f"  {name:<11} growth {flag.growth}  Cartan: {cartan}")

# On M5 the abnormal control lines never turn, so rho vanishes identically.
m5 = prolong(CartanModel.from_frame(*free_nilpotent_235()))
print("\nM5 prolongation: rho =", m5.rho_expr)
print("  growth of {xi, eta} on Z:", derived_flag(m5.frame, (0.0,) * 6, exact=False, tol=1e-6).growth)

# Perturbing the Monge equation z' = (y'')^2 by + y makes the lines turn.
pc = prolong(CartanModel.from_frame(*monge_perturbed()))
z = np.array([0.1, 0.05, -0.1, 0.2, 0.0, 0.4])
print("\nperturbed Monge model at z =", z.tolist())
print(f"  rho(z) = {pc.rho(z):.12f}")
print(f"  rho(z with v + pi) = {pc.rho(z + np.r_[0, 0, 0, 0, 0, np.pi]):.12f}  (lines, not rays)")
print("  growth of {xi, eta}:", derived_flag(pc.frame, tuple(z), exact=False, tol=1e-6).growth)
