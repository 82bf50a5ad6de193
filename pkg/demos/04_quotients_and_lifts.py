"""Quotients of control systems, steering through a quotient, and lifting
abnormal arcs of the cone system back to the prolongation.

Run: python3 demos/04_quotients_and_lifts.py
"""

import numpy as np

from cartangeo import (CartanModel, ControlSystem, SubRiemannianMetric, build_srcartan, classify_abnormal,
                       cone_abnormal, lift_abnormal, pmp_system, prolong, quotient, to_prolonged_chart,
                       verify_quotient_controllability)
from cartangeo.flags import float_nullspace
from cartangeo.models import free_nilpotent_235

chart, frame = free_nilpotent_235()
m5sys = ControlSystem.from_fields(frame, chart)
q = quotient(m5sys, [0, 1, 2])
print(f"quotient of M5 to (x1, x2, x3): {q.nstate} states, {q.nparams} parameters")
rep = verify_quotient_controllability(m5sys, [0, 1, 2], np.zeros(5), trials=5)
print(f"  steering to nearby quotient targets: {rep['reached']}/5, max error {rep['max_error']:.1e}")

model = CartanModel.from_frame(chart, frame)
structure = build_srcartan(prolong(model), SubRiemannianMetric(model.frame), z0=np.zeros(6))
ls = structure.leafspace
x0, s0 = np.array([0.01, -0.01, 0.02, 0.0, 0.01]), 0.05
N = float_nullspace(ls.generator(x0, s0, order=1), 5)
arc = cone_abnormal(ls, x0, s0, np.random.default_rng(4).standard_normal(len(N)) @ N, T=0.3)
print(f"\ncone abnormal extremal: constraint residual {arc.residuals['max_constraint']:.1e}")

lifted = lift_abnormal(arc, ls)
res = pmp_system(structure, "E_eE", chart="xw").residuals(lifted)
print("lift with vanishing fibre covector:")
for k, v in res.items():
    print(f"  {k}: {v:.1e}")
on_z = to_prolonged_chart(ls, lifted)
print("  classification on Z:", classify_abnormal(structure.prolonged.frame, on_z, tol=1e-6)["verdict"])
