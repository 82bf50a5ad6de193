"""Normal geodesics and two-point shooting on the Heisenberg group.

Run: python3 demos/02_heisenberg_geodesics.py
"""

import numpy as np

from cartangeo import ControlSystem, OptimalControlProblem, integrate_normal, shoot_normal
from cartangeo.models import heisenberg

chart, frame = heisenberg()
prob = OptimalControlProblem(ControlSystem.from_fields(frame, chart))

# A normal geodesic with p_z = -2 and unit speed projects to a circle of radius 1/2.
arc = integrate_normal(prob, np.zeros(3), [0.0, 1.0, -2.0], T=1.0, step=1e-3)
r = np.linalg.norm(arc.states[:, :2] - [0.5, 0.0], axis=1)
print("normal geodesic from p = (0, 1, -2)")
print("  endpoint:", np.round(arc.states[-1], 12).tolist())
print(f"  distance of the (x, y) projection to the circle of radius 1/2: {np.max(np.abs(r - 0.5)):.1e}")
print(f"  Hamiltonian drift: {arc.residuals['hamiltonian_drift']:.1e}")

# Reaching a point on the z-axis needs a full loop: the covector is found by shooting.
for target in ([0.0, 0.0, 0.1], [0.2, 0.1, 0.05]):
    sol = shoot_normal(prob, np.zeros(3), target, T=1.0)
    energy = 0.5 * float(np.mean(np.sum(sol.controls**2, axis=1)))
    print(f"\nshooting to {target}")
    print("  initial covector:", np.round(sol.costates[0], 8).tolist())
    print(f"  endpoint error {np.max(np.abs(sol.states[-1] - target)):.1e}, energy {energy:.6f}")
