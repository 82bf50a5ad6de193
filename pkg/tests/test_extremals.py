import numpy as np
import pytest

from cartangeo.control import ControlSystem, is_singular_control
from cartangeo.extremals import (
    AbnormalPreconditionError,
    BiExtremalArc,
    CharacteristicDegenerate,
    OptimalControlProblem,
    ShootingFailed,
    arc_signal,
    classify_abnormal,
    hamiltonian,
    integrate_abnormal_rank2,
    integrate_normal,
    normal_hamiltonian,
    ocp_hamiltonian,
    pmp_residual,
    shoot_normal,
)
from cartangeo.flags import float_nullspace
from cartangeo.models import flat_plane, line_r2
from oracles import heisenberg_normal, ode_solution


def problem(model):
    chart, frame = model
    return OptimalControlProblem(ControlSystem.from_fields(frame, chart))


def abnormal_covector(frame, x, rng):
    X1, X2 = frame
    rows = [X1(x), X2(x), X1.bracket(X2)(x)]
    p = rng.standard_normal(2) @ float_nullspace(np.array(rows), 5)
    return p / np.linalg.norm(p)


def test_hamiltonians(m5_system):
    e1 = np.eye(5)[0]
    assert hamiltonian(m5_system, np.zeros(5), e1, [1.0, 0.0]) == 1.0
    assert hamiltonian(m5_system, np.zeros(5), np.eye(5)[4], [0.3, -2.0]) == 0.0
    assert hamiltonian(m5_system, np.eye(5)[0], np.eye(5)[2], [0.0, 1.0]) == 1.0
    prob = OptimalControlProblem(m5_system)
    assert ocp_hamiltonian(prob, np.zeros(5), e1, [1.0, 0.0], 0.0) == 1.0
    assert ocp_hamiltonian(prob, np.zeros(5), e1, [0.0, 0.0], -1.0) == 0.0
    assert ocp_hamiltonian(prob, np.zeros(5), e1, [1.0, 0.0], -1.0) == 0.5
    with pytest.raises(ValueError):
        ocp_hamiltonian(prob, np.zeros(5), e1, [1.0, 0.0], 1.0)


def test_normal_hamiltonian(m5_system):
    assert normal_hamiltonian(m5_system, np.zeros(5), np.eye(5)[4]) == 0.0
    flat = problem(flat_plane()).system
    assert normal_hamiltonian(flat, np.zeros(2), [3.0, 4.0]) == 12.5
    assert normal_hamiltonian(m5_system, np.eye(5)[0], np.eye(5)[2]) == 0.5


def test_flat_normal_is_a_line():
    arc = integrate_normal(problem(flat_plane()), [0.0, 0.0], [0.6, -0.8], T=2.0, step=1e-2)
    np.testing.assert_allclose(arc.states, np.outer(arc.times, [0.6, -0.8]), atol=1e-14)
    assert arc.residuals["hamiltonian_drift"] == 0.0
    assert arc.p0 == -1.0
    res = pmp_residual(problem(flat_plane()), arc)
    assert max(res["state"], res["costate"], res["stationarity"]) <= 1e-9


def test_heisenberg_normal_matches_closed_form(heis):
    # [DERIVED] closed form (rotating (p_x, p_y + x p_z)) with z by quadrature
    frozen = [0.7080734182735712, 0.45464871341284085, 0.024624512663165933]
    arc = integrate_normal(problem(heis), np.zeros(3), [0.0, 1.0, -2.0], T=1.0, step=1e-3)
    np.testing.assert_allclose(heisenberg_normal([0, 1, -2], 1.0)[0], frozen, atol=1e-14)
    np.testing.assert_allclose(arc.states[-1], frozen, atol=1e-10)
    # the (x, y) projection is an arc of a circle of radius |p| / |p_z| = 1/2
    xy = arc.states[:, :2]
    centre = np.array([0.5, 0.0])
    np.testing.assert_allclose(np.linalg.norm(xy - centre, axis=1), 0.5, atol=1e-10)


def test_normal_conservation_m5(m5_system):
    prob = OptimalControlProblem(m5_system)
    rng = np.random.default_rng(0)
    for _ in range(3):
        arc = integrate_normal(prob, rng.uniform(-1, 1, 5), rng.standard_normal(5), T=2.0, step=1e-3)
        h = arc.residuals["hamiltonian"]
        assert arc.residuals["hamiltonian_drift"] <= 1e-8 * max(1.0, abs(h[0]))
        np.testing.assert_allclose(arc.controls, np.array([
            m5_system.frame_fn(x, np.zeros(0)).T @ p for x, p in zip(arc.states, arc.costates)]), atol=1e-13)


def test_normal_matches_adaptive_integrator(m5_system):
    prob = OptimalControlProblem(m5_system)
    x0, p0 = np.array([0.1, -0.2, 0.0, 0.3, 0.1]), np.array([0.5, -1.0, 0.7, 0.2, -0.4])
    arc = integrate_normal(prob, x0, p0, T=1.0, step=1e-3)

    def rhs(y):
        x, p = y[:5], y[5:]
        G = m5_system.frame_fn(x, np.zeros(0))
        u = G.T @ p
        J = np.einsum("ijr,r->ij", m5_system.frame_jac(x, np.zeros(0)), u)
        return np.concatenate([G @ u, -J.T @ p])

    ref = ode_solution(rhs, np.r_[x0, p0], 1.0, arc.times[::100])
    np.testing.assert_allclose(arc.states[::100], ref[:, :5], atol=1e-10)


def test_shooting_flat_and_unreachable():
    arc = shoot_normal(problem(flat_plane()), [0.0, 0.0], [1.0, 0.0], T=1.0)
    np.testing.assert_allclose(arc.costates[0], [1.0, 0.0], atol=1e-7)
    with pytest.raises(ShootingFailed) as exc:
        shoot_normal(problem(line_r2()), [0.0, 0.0], [0.0, 1.0], multistarts=2, max_iter=5)
    assert exc.value.residual >= 0.99


def test_abnormal_line_m5(m5):
    frame = m5[1]
    arc = integrate_abnormal_rank2(frame, np.zeros(5), np.eye(5)[4], T=1.0, step=1e-3)
    np.testing.assert_allclose(arc.controls, np.tile([1.0, 0.0], (len(arc.times), 1)), atol=1e-15)
    np.testing.assert_allclose(arc.states[:, 0], arc.times, atol=1e-14)
    assert np.max(np.abs(arc.states[:, 1:])) == 0.0
    np.testing.assert_array_equal(arc.costates, np.tile(np.eye(5)[4], (len(arc.times), 1)))
    res = pmp_residual(problem(m5), arc)
    assert max(res["state"], res["costate"], res["stationarity"]) <= 1e-8
    arc4 = integrate_abnormal_rank2(frame, np.zeros(5), np.eye(5)[3], T=0.5, step=1e-3)
    np.testing.assert_allclose(arc4.controls[0], [0.0, -1.0], atol=1e-15)
    np.testing.assert_allclose(arc4.states[-1, :2], [0.0, -0.5], atol=1e-14)


def test_abnormal_preconditions(m5):
    with pytest.raises(AbnormalPreconditionError) as exc:
        integrate_abnormal_rank2(m5[1], np.zeros(5), np.eye(5)[0])
    assert exc.value.constraint == "<p,X1>"
    with pytest.raises(AbnormalPreconditionError):
        integrate_abnormal_rank2(m5[1], np.zeros(5), np.eye(5)[2])
    with pytest.raises(CharacteristicDegenerate):
        # p = dx5 - x2 dx3 ... at a point where h1 = h2 = 0 cannot happen on M5 for p != 0;
        # use the involutive frame, whose brackets all vanish
        from cartangeo.models import involutive_r5

        integrate_abnormal_rank2(involutive_r5()[1], np.zeros(5), np.eye(5)[4])


def test_abnormal_constraints_and_scaling(m5):
    rng = np.random.default_rng(7)
    for _ in range(3):
        x0 = rng.uniform(-0.5, 0.5, 5)
        p = abnormal_covector(m5[1], x0, rng)
        a = integrate_abnormal_rank2(m5[1], x0, p, T=1.0, step=1e-3)
        assert a.residuals["max_constraint"] <= 1e-7
        b = integrate_abnormal_rank2(m5[1], x0, -3.0 * p, T=1.0, step=1e-3, direction=-1.0)
        np.testing.assert_allclose(b.states, a.states, atol=1e-9)
        np.testing.assert_allclose(b.costates, -3.0 * a.costates, atol=1e-9)


def test_abnormal_arcs_are_singular(m5, m5_system):
    rng = np.random.default_rng(11)
    x0 = rng.uniform(-0.5, 0.5, 5)
    arc = integrate_abnormal_rank2(m5[1], x0, abnormal_covector(m5[1], x0, rng), T=1.0, step=1e-3)
    res = is_singular_control(m5_system, arc_signal(arc, 50), x0, step=1e-3)
    assert res["singular"]


def test_pmp_residual_negative_control(m5):
    rng = np.random.default_rng(1)
    t = np.linspace(0, 1, 51)
    arc = BiExtremalArc(t, rng.standard_normal((51, 5)), rng.standard_normal((51, 5)),
                        rng.standard_normal((51, 2)), -1.0)
    assert pmp_residual(problem(m5), arc)["stationarity"] > 1e-2


def test_biextremal_invariants():
    t = np.linspace(0, 1, 3)
    with pytest.raises(ValueError):
        BiExtremalArc(t, np.zeros((3, 2)), np.zeros((3, 2)), np.zeros((3, 2)), 0.0)
    with pytest.raises(ValueError):
        BiExtremalArc(t, np.zeros((3, 2)), np.ones((3, 2)), np.zeros((3, 2)), 0.5)


def test_classification_negative_control(m5_prolonged):
    frame = m5_prolonged.frame
    rng = np.random.default_rng(2)
    z = 0.05 * rng.uniform(-1, 1, 6)
    xi, eta = frame
    N = float_nullspace(np.array([xi(z), eta(z), xi.bracket(eta)(z)]), 6)
    p = rng.standard_normal(len(N)) @ N
    arc = integrate_abnormal_rank2(frame, z, p, T=0.2, step=1e-3)
    assert classify_abnormal(frame, arc)["verdict"] == "regular"
    bad = BiExtremalArc(arc.times, arc.states, arc.costates + 1e-3 * rng.standard_normal(arc.costates.shape),
                        arc.controls, 0.0)
    assert classify_abnormal(frame, bad)["verdict"] == "other"
