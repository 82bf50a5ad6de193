"""Independent reference computations used by the tests.

None of these call the package's integrators, bracket code or shooting:
they use closed forms, scipy's adaptive integrators and a direct
transcription solved with scipy.optimize.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.optimize import minimize


def fd_jacobian(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    cols = [(np.asarray(f(x + h * e), float) - np.asarray(f(x - h * e), float)) / (2 * h) for e in np.eye(len(x))]
    return np.column_stack(cols)


def fd_bracket(X, Y, x, h=1e-4):
    """[X, Y](x) = DY X - DX Y from central-difference Jacobians of float evaluations."""
    fX = lambda z: np.asarray(X(z), dtype=float)
    fY = lambda z: np.asarray(Y(z), dtype=float)
    return fd_jacobian(fY, x, h) @ fX(x) - fd_jacobian(fX, x, h) @ fY(x)


def _flow(F, x, t):
    sol = solve_ivp(lambda _, z: np.asarray(F(z), dtype=float), (0.0, t), x, rtol=1e-13, atol=1e-15,
                    method="DOP853")
    return sol.y[:, -1]


def commutator_bracket(X, Y, x, h):
    """Flow-commutator estimate (phi^Y_-h phi^X_-h phi^Y_h phi^X_h (x) - x) / h^2."""
    x = np.asarray(x, dtype=float)
    z = _flow(X, x, h)
    z = _flow(Y, z, h)
    z = _flow(lambda q: -np.asarray(X(q), float), z, h)
    z = _flow(lambda q: -np.asarray(Y(q), float), z, h)
    return (z - x) / h**2


def heisenberg_normal(p0, T):
    """Closed-form normal geodesic of {d/dx, d/dy + x d/dz} from the origin.

    With c = p_z, (p_x, p_y + x p_z) rotates at rate c; z is obtained by
    quadrature of x * y'.
    """
    a, py, c = (float(v) for v in p0)
    b = py
    if abs(c) < 1e-14:
        x = lambda t: a * t
        yd = lambda t: b
        y = lambda t: b * t
    else:
        x = lambda t: (a * np.sin(c * t) + b * np.cos(c * t) - b) / c
        yd = lambda t: a * np.sin(c * t) + b * np.cos(c * t)
        y = lambda t: (-a * np.cos(c * t) + b * np.sin(c * t) + a) / c
    z = quad(lambda t: x(t) * yd(t), 0.0, T, epsabs=1e-14, epsrel=1e-14)[0]
    return np.array([x(T), y(T), z]), 0.5 * (a * a + b * b)


def ode_solution(rhs, y0, T, samples):
    """Adaptive high-accuracy solution of y' = rhs(y) sampled at ``samples`` times."""
    sol = solve_ivp(lambda _, y: rhs(y), (0.0, T), np.asarray(y0, float), t_eval=samples,
                    rtol=1e-12, atol=1e-14, method="DOP853")
    return sol.y.T


def heisenberg_transcription(x1, T=1.0, N=200, seed=0):
    """Direct transcription of min 1/2 int |u|^2 on the Heisenberg group.

    Controls are piecewise constant on N intervals; the state update over one
    interval is exact (x, y linear, z quadratic).  Returns (energy, endpoint,
    controls) of the SLSQP optimum.
    """
    h = T / N
    x1 = np.asarray(x1, dtype=float)

    def endpoint(v):
        u, w = v[:N], v[N:]
        x = np.concatenate([[0.0], np.cumsum(u) * h])[:-1]
        z = np.sum(w * (x * h + u * h * h / 2))
        return np.array([u.sum() * h, w.sum() * h, z])

    def endpoint_jac(v):
        u, w = v[:N], v[N:]
        x = np.concatenate([[0.0], np.cumsum(u) * h])[:-1]
        J = np.zeros((3, 2 * N))
        J[0, :N] = h
        J[1, N:] = h
        # dz/du_j = w_j h^2 / 2 + h^2 sum_{k > j} w_k
        tail = np.concatenate([np.cumsum(w[::-1])[::-1][1:], [0.0]])
        J[2, :N] = w * h * h / 2 + h * h * tail
        J[2, N:] = x * h + u * h * h / 2
        return J

    cost = lambda v: 0.5 * h * float(v @ v)
    grad = lambda v: h * v
    rng = np.random.default_rng(seed)
    best = None
    t = (np.arange(N) + 0.5) * h
    r = np.sqrt(abs(x1[2]) / np.pi) if x1[2] else 0.1
    guesses = [np.concatenate([2 * np.pi * r * np.cos(2 * np.pi * t), 2 * np.pi * r * np.sin(2 * np.pi * t)]),
               0.3 * rng.standard_normal(2 * N)]
    for v0 in guesses:
        res = minimize(cost, v0, jac=grad, method="SLSQP",
                       constraints=[{"type": "eq", "fun": lambda v: endpoint(v) - x1, "jac": endpoint_jac}],
                       options={"maxiter": 500, "ftol": 1e-14})
        if np.max(np.abs(endpoint(res.x) - x1)) < 1e-8 and (best is None or res.fun < best[0]):
            best = (float(res.fun), endpoint(res.x), res.x.reshape(2, N).T)
    if best is None:
        raise RuntimeError("transcription did not converge")
    return best


def m5_two_arc_endpoint():
    """Flow of X1 for time 1 then X2 for time 1 from the origin of M5, in closed form.

    After X1: (1, 0, 0, 0, 0).  Along X2 with x1 = 1: x2 = t, x3 = t,
    x4 = t / 2, x5 = int t dt = 1/2.
    """
    return np.array([1.0, 1.0, 1.0, 0.5, 0.5])


def turning_rate(times, controls):
    """Rate of change of the line angle of a planar control curve (central differences)."""
    ang = np.unwrap(2 * np.arctan2(controls[:, 1], controls[:, 0])) / 2
    return np.gradient(ang, times)
