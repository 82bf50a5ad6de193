"""The pseudo-product structure on the prolongation of M5: asymmetry of abnormal
arcs, duality between the two fibrations, and cone geodesics on the leaf space.

Run: python3 -u demos/03_duality_on_m5.py   (about a minute)
"""

import numpy as np

from cartangeo import (CartanModel, SubRiemannianMetric, build_srcartan, five_systems, is_trivial,
                       prolong, verify_asymmetry, verify_cone_geodesics, verify_duality)
from cartangeo.models import free_nilpotent_235

model = CartanModel.from_frame(*free_nilpotent_235())
pc = prolong(model)
structure = build_srcartan(pc, SubRiemannianMetric(model.frame), z0=np.zeros(6))
ls = structure.leafspace

systems = five_systems(pc, ls)
samples = [(0.01 * np.ones(5), np.array([0.1]))]
print("systems of the structure (trivial ones reduce to x' = 0):")
for key, sys in systems.items():
    print(f"  {key:<6} frame rank {sys.nframe}, trivial: {key != 'E' and is_trivial(sys, samples)}")

asym = verify_asymmetry(pc, np.zeros(6), nsamples=10)
print("\nabnormal arcs of E on Z")
for a in asym["arcs"][:4]:
    print(f"  start {a['sample']}: tangent to {a['tangent']}, verdict {a['verdict']}")
print("  all consistent:", asym["passed"])

dual = verify_duality(pc, np.zeros(6), nfibers=3, ls=ls)
print("\npi_X-images of pi_Y-fibres vs abnormal extremals of the cone system")
for f in dual["fibers"]:
    print(f"  curve distance {f['distance']:.1e}, spread over covectors {f['costate_spread']:.1e}")

cone = verify_cone_geodesics(structure, npoints=2, dual=True)
print("\nnormal extremals of (E/pi_X, e_E) vs fibre curves")
for p in cone["points"]:
    print(f"  distance {p['distance']:.1e}, eliminated control |b| <= {p['b_max']:.1e}")
d = cone["dual"]
print("normal extremals of (E/pi_Y, e_E) vs K-leaves")
print(f"  generic covectors: max distance {d['generic_max']:.2e}")
print(f"  covectors with vanishing abnormal part: max distance {d['abnormal_max']:.1e}")
