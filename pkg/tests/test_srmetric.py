import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cartangeo.cartan import CartanModel, cone_abnormal, prolong
from cartangeo.extremals import BiExtremalArc, classify_abnormal
from cartangeo.flags import float_nullspace
from cartangeo.models import monge_perturbed
from cartangeo.srmetric import (
    PROBLEMS,
    EnergySelector,
    FrameMismatchError,
    NotLipschitzError,
    SubRiemannianMetric,
    UnsupportedProblemError,
    build_srcartan,
    extend_biextremal,
    lift_abnormal,
    pmp_system,
    product_metric,
    projective_fiber_distance,
    reduce_biextremal,
    to_prolonged_chart,
    verify_cone_geodesics,
)
from cartangeo.vecfield import Chart, PolyVectorField

angles = st.floats(min_value=-20.0, max_value=20.0, allow_nan=False)


@pytest.fixture(scope="module")
def cone_arc(m5_leafspace):
    ls = m5_leafspace
    x0 = np.array([0.01, -0.01, 0.02, 0.0, 0.01])
    G = ls.generator(x0, 0.05, order=1)
    N = float_nullspace(G, 5)
    p0 = np.random.default_rng(4).standard_normal(len(N)) @ N
    return cone_abnormal(ls, x0, 0.05, p0, T=0.3, step=1e-2)


def test_metric_examples(m5_structure, m5_prolonged):
    z = np.zeros(6)
    xi, eta = m5_prolonged.xi(z), m5_prolonged.eta(z)
    assert m5_structure.norm2(z, xi + eta) == pytest.approx(2.0)
    assert m5_structure.inner(z, xi, eta) == pytest.approx(0.0, abs=1e-15)
    a, b = m5_structure.split(z, 3 * xi - 2 * eta)
    np.testing.assert_allclose(np.r_[a, b], [3.0, -2.0])
    g = SubRiemannianMetric(m5_prolonged.base.frame)
    assert g.norm2(np.zeros(5), [0.0, 2.0, 0.0, 0.0, 0.0]) == pytest.approx(4.0)
    with pytest.raises(ValueError):
        g.norm2(np.zeros(5), [0.0, 0.0, 1.0, 0.0, 0.0])


def test_product_metric_requires_complementary_frames():
    C = Chart.standard(2)
    X = PolyVectorField.from_strings(["1", "0"], C)
    Y = PolyVectorField.from_strings(["x1", "0"], C)
    pm = product_metric(SubRiemannianMetric((X,)), SubRiemannianMetric((Y,)))
    assert len(pm.gE.frame) == 2
    with pytest.raises(FrameMismatchError):
        product_metric(SubRiemannianMetric((X,)), SubRiemannianMetric((Y,)), samples=[np.ones(2)])


def test_build_rejects_foreign_frame(m5_model, m5):
    X1, X2 = m5[1]
    with pytest.raises(FrameMismatchError):
        build_srcartan(m5_model, SubRiemannianMetric((X2, X1)))


def test_energy_selector():
    e = EnergySelector("e_E", (0,), (1,))
    assert e.indices == (0, 1) and e.energy([3.0, 4.0]) == 12.5
    assert EnergySelector("e_L", (0,), (1,)).energy([3.0, 4.0]) == 4.5
    assert EnergySelector("e_K", (0,), (1,)).energy([3.0, 4.0]) == 8.0
    with pytest.raises(ValueError):
        EnergySelector("e_L", (0,), (0,))
    with pytest.raises(ValueError):
        EnergySelector("e_X", (0,), (1,))


def test_projective_fiber_distance_examples():
    assert projective_fiber_distance(0.0, np.pi) == 0.0
    assert projective_fiber_distance(0.0, np.pi / 2) == pytest.approx(np.pi / 2)
    assert projective_fiber_distance(0.1, -0.1 + np.pi) == pytest.approx(0.2)


@given(angles, angles, st.integers(-5, 5))
def test_projective_fiber_distance_properties(a, b, k):
    d = projective_fiber_distance(a, b)
    assert 0.0 <= d <= np.pi / 2 + 1e-12
    assert d == pytest.approx(projective_fiber_distance(b, a), abs=1e-9)
    assert d == pytest.approx(projective_fiber_distance(a + k * np.pi, b), abs=1e-9)


def test_pmp_system_chart_rules(m5_structure):
    for pid in ("EmodN_eE", "EmodN_eL", "LmodN_eL"):
        with pytest.raises(UnsupportedProblemError):
            pmp_system(m5_structure, pid, chart="yv")
    for pid in ("EmodP_eE", "KmodP_eK"):
        with pytest.raises(UnsupportedProblemError):
            pmp_system(m5_structure, pid, chart="xw")
    with pytest.raises(UnsupportedProblemError):
        pmp_system(m5_structure, "E_eK")
    from dataclasses import replace

    with pytest.raises(UnsupportedProblemError):
        pmp_system(replace(m5_structure, leafspace=None), "E_eE", chart="xw")
    names = {pid: pmp_system(m5_structure, pid, chart="xw" if pid.startswith(("EmodN", "LmodN")) else "yv")
             for pid in PROBLEMS}
    assert names["EmodN_eE"].param_names == ("w",) and names["KmodP_eK"].param_names == ("v",)
    assert names["LmodN_eL"].control_names == ("a",) and names["EmodP_eE"].cost == (0, 1)


def test_e_hamiltonian_carries_rho_phi_term():
    chart, frame = monge_perturbed()
    pc = prolong(CartanModel.from_frame(chart, frame))
    prob = pmp_system(build_srcartan(pc, SubRiemannianMetric(pc.base.frame)), "E_eE")
    z = np.array([0.1, 0.05, -0.1, 0.2, 0.0, 0.4])
    phi, mu = 0.7, 1.3
    p = np.r_[np.zeros(5), phi]
    assert prob.hamiltonian(z, p, [0.0, mu], 0.0) == pytest.approx(mu * pc.rho(z) * phi, abs=1e-14)
    assert prob.hamiltonian(z, p, [2.0, 0.0], 0.0) == pytest.approx(2.0 * phi)
    assert prob.hamiltonian(z, p, [2.0, 0.0], -1.0) == pytest.approx(2.0 * phi - 2.0)


def test_emodn_eliminates_b(m5_structure):
    prob = pmp_system(m5_structure, "EmodN_eE", chart="xw")
    rng = np.random.default_rng(0)
    for _ in range(3):
        u = prob.eliminate(0.01 * rng.uniform(-1, 1, 5), rng.standard_normal(5), [0.1])
        assert u[1] == 0.0


def test_normal_conservation_on_y(m5_structure):
    prob = pmp_system(m5_structure, "EmodP_eE")
    rng = np.random.default_rng(1)
    arc = prob.integrate_normal(0.01 * rng.uniform(-1, 1, 5), rng.standard_normal(5), T=0.5, step=1e-2, w0=[0.1])
    assert arc.residuals["hamiltonian_drift"] <= 1e-8
    res = prob.residuals(arc)
    assert res["parameter_stationarity"] <= 1e-8 and res["control_stationarity"] <= 1e-12


def test_e_normal_is_chart_independent(m5_structure, m5_leafspace):
    ls = m5_leafspace
    xw = pmp_system(m5_structure, "E_eE", chart="xw")
    yv = pmp_system(m5_structure, "E_eE", chart="yv")
    x0 = np.r_[0.01, -0.02, 0.0, 0.01, 0.02, 0.05]
    p0 = np.array([0.3, -0.5, 0.2, 0.7, 0.1, 0.4])
    a = xw.integrate_normal(x0, p0, T=0.3, step=1e-2)
    moved = to_prolonged_chart(ls, a)
    b = yv.integrate_normal(moved.states[0], moved.costates[0], T=0.3, step=1e-2)
    assert np.max(np.abs(moved.states - b.states)) <= 1e-8
    np.testing.assert_allclose(moved.controls, b.controls, atol=1e-8)


def test_cone_geodesics_and_dual_families(m5_structure):
    rep = verify_cone_geodesics(m5_structure, npoints=2, dual=True)
    assert rep["passed"]
    for p in rep["points"]:
        assert p["distance"] <= 1e-4 and p["b_max"] == 0.0 and p["generators_injective"]
    dual = rep["dual"]
    # only the covectors with vanishing abnormal part reproduce the K-leaves
    assert dual["abnormal_passed"] and dual["abnormal_max"] <= 1e-8
    assert dual["generic_max"] > 1e-3


def test_lift_of_cone_abnormal(cone_arc, m5_leafspace, m5_structure):
    assert cone_arc.residuals["max_constraint"] <= 1e-8
    lifted = lift_abnormal(cone_arc, m5_leafspace)
    assert lifted.states.shape[1] == 6 and np.all(lifted.costates[:, 5] == 0)
    res = pmp_system(m5_structure, "E_eE", chart="xw").residuals(lifted)
    assert max(res.values()) <= 1e-8
    on_z = to_prolonged_chart(m5_leafspace, lifted)
    assert classify_abnormal(m5_structure.prolonged.frame, on_z, tol=1e-6)["verdict"] == "regular"


def test_lift_with_constant_fibre_value(m5_leafspace):
    t = np.linspace(0, 0.2, 21)
    X = np.column_stack([t, np.zeros((21, 4))])
    arc = BiExtremalArc(t, X, np.tile(np.eye(5)[4], (21, 1)), np.column_stack([np.ones(21), np.zeros(21)]), 0.0)
    f = m5_leafspace.generator(X, np.zeros(21), full=True)[:, 0, 5]
    lifted = lift_abnormal(arc, m5_leafspace)
    np.testing.assert_allclose(lifted.controls[:, 1], -f, atol=1e-12)


def test_lift_rejects_jumps(m5_leafspace):
    t = np.linspace(0, 1, 11)
    w = np.where(t < 0.5, 0.0, 1.0)
    arc = BiExtremalArc(t, np.zeros((11, 5)), np.tile(np.eye(5)[4], (11, 1)),
                        np.column_stack([np.ones(11), w]), 0.0)
    with pytest.raises(NotLipschitzError):
        lift_abnormal(arc, m5_leafspace, lipschitz_bound=5.0)
    with pytest.raises(ValueError):
        lift_abnormal(BiExtremalArc(t, arc.states, arc.costates, arc.controls, -1.0), m5_leafspace)


def test_reduce_extend_round_trip(cone_arc, m5_structure):
    prob = pmp_system(m5_structure, "EmodN_eE", chart="xw")
    wide = extend_biextremal(cone_arc)
    assert wide.controls.shape[1] == 3 and np.all(wide.controls[:, 1] == 0)
    noisy = extend_biextremal(cone_arc, np.random.default_rng(0).standard_normal(len(cone_arc.times)))
    assert prob.residuals(wide) == prob.residuals(noisy)
    np.testing.assert_array_equal(reduce_biextremal(noisy).controls, cone_arc.controls)
